#ifndef KFED_KFED_HPP
#define KFED_KFED_HPP

#include "clustering.hpp"
#include "datagen.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "federation.hpp"
#include "linalg.hpp"
#include "local_solver.hpp"
#include "matrix.hpp"
#include "rng.hpp"
#include "separation.hpp"

#endif // KFED_KFED_HPP
