// Tape-side evaluation of the feature network and marginal likelihood.
// Mirrors the plain-Eigen path in kernels.cpp; the two are pinned together
// by equality tests.
#pragma once

#include <span>
#include <utility>
#include <vector>

#include "fedbnr/autodiff.hpp"
#include "fedbnr/kernels.hpp"

namespace fedbnr::detail {

struct TapeNet {
  std::vector<std::pair<ad::Value, ad::Value>> extractor;  // (W, b)
  std::vector<std::pair<ad::Value, ad::Value>> shifter;
  ad::Value log_sigma;
  ad::Value log_lambda;
};

/// Associates layout segments (see make_param_layout) with network layers.
TapeNet bind_tape_net(const KernelNetwork& arch,
                      std::span<const ad::Value> segments);

/// Feature map as a tape node ((m·d) x n), differentiable w.r.t. the
/// network weights.
ad::Value feature_map_tape(ad::Tape& tape, const UrkConfig& arch,
                           const TapeNet& net, const Matrix& omegas,
                           const Matrix& x);

/// Log marginal likelihood of (x, y) under the current weights.
ad::Value lml_tape(ad::Tape& tape, const UrkConfig& arch, const TapeNet& net,
                   const Matrix& omegas, const Matrix& x, const Vector& y);

}  // namespace fedbnr::detail
