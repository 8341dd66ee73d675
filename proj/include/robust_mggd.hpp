#pragma once

#include "robust_mggd/errors.hpp"
#include "robust_mggd/matrix_core.hpp"
#include "robust_mggd/mggd_model.hpp"
#include "robust_mggd/objective.hpp"
#include "robust_mggd/prox_ops.hpp"
#include "robust_mggd/pd_solver.hpp"
#include "robust_mggd/baselines.hpp"
#include "robust_mggd/bench_harness.hpp"
