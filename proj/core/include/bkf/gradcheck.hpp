#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bkf/graph.hpp"
#include "bkf/params.hpp"

namespace bkf {

/// Records a scalar function of the given parameter nodes on a fresh tape.
using GraphBuilder = std::function<NodeId(Tape& tape, std::span<const NodeId> params)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t param = 0;  ///< index into the parameter list of the worst coordinate
  std::size_t coord = 0;  ///< flat coordinate within that parameter
  std::string param_name;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  ///< coordinates whose ±ε evaluations crossed a ReLU/max-pool kink
};

/// Compares reverse-mode gradients against central differences
/// (f(p+ε) − f(p−ε)) / 2ε, coordinate by coordinate.
///
/// The relative error of a coordinate is |a − n| / max(|a|, |n|, floor) with
/// floor = 1e-3 · max_j |a_j| + 1e-12, so coordinates whose gradient is
/// negligible next to the largest one are judged on an absolute scale rather
/// than amplifying rounding noise. Coordinates whose perturbed evaluations
/// change the tape's kink signature are skipped and counted.
GradCheckResult grad_check(const GraphBuilder& build, std::span<const Tensor> params, double eps = 1e-5,
                           std::span<const std::string> names = {});

/// grad_check over every tensor of `store`, bound by name.
using ModelBuilder = std::function<NodeId(Tape& tape, Binder& bind)>;
GradCheckResult grad_check_params(const ModelBuilder& build, const ParamStore& store, double eps = 1e-5);

}  // namespace bkf
