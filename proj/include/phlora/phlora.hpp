#pragma once

// Post-hoc low-rank adapter extraction: diff two checkpoints, factor each
// layer delta with a truncated SVD, and ship the factors as a standard
// adapter directory that can be merged back or served dynamically.

#include "phlora/adapter.hpp"
#include "phlora/checkpoint.hpp"
#include "phlora/delta.hpp"
#include "phlora/dtype.hpp"
#include "phlora/energy.hpp"
#include "phlora/errors.hpp"
#include "phlora/factorize.hpp"
#include "phlora/matrix.hpp"
#include "phlora/run.hpp"
#include "phlora/svd.hpp"
