#ifndef KFED_ERROR_HPP
#define KFED_ERROR_HPP

#include <stdexcept>
#include <string>

namespace kfed {

enum class ErrorKind {
    parameter,   // caller violated a precondition or supplied an invalid value
    validation,  // config / input file failed schema or invariant checks
    runtime,     // pipeline failure on otherwise valid inputs
    io,          // filesystem or parse failure
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

inline void require(bool cond, const std::string& what) {
    if (!cond) fail(ErrorKind::parameter, what);
}

} // namespace kfed

#endif // KFED_ERROR_HPP
