#include "bkf/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "bkf/error.hpp"

namespace bkf {
namespace {

struct Evaluation {
  double value = 0.0;
  std::uint64_t signature = 0;
};

Evaluation evaluate(const GraphBuilder& build, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<NodeId> ids;
  ids.reserve(params.size());
  for (const auto& p : params) ids.push_back(tape.constant(p));
  NodeId out = build(tape, ids);
  return {tape.value(out).item(), tape.kink_signature()};
}

}  // namespace

GradCheckResult grad_check(const GraphBuilder& build, std::span<const Tensor> params, double eps,
                           std::span<const std::string> names) {
  if (!(eps > 0.0)) throw Error("grad_check: eps must be positive");

  std::vector<Tensor> analytic;
  std::uint64_t base_signature = 0;
  {
    Tape tape;
    std::vector<NodeId> ids;
    for (std::size_t i = 0; i < params.size(); ++i) {
      ids.push_back(tape.parameter(params[i], i < names.size() ? names[i] : std::string()));
    }
    NodeId loss = build(tape, ids);
    tape.backward(loss);
    for (NodeId id : ids) analytic.push_back(tape.grad(id));
    base_signature = tape.kink_signature();
  }

  double scale = 0.0;
  for (const auto& g : analytic)
    for (double v : g.data()) scale = std::max(scale, std::abs(v));
  const double floor = 1e-3 * scale + 1e-12;

  GradCheckResult result;
  std::vector<Tensor> work(params.begin(), params.end());
  for (std::size_t p = 0; p < work.size(); ++p) {
    for (std::size_t c = 0; c < work[p].size(); ++c) {
      const double orig = work[p][c];
      work[p][c] = orig + eps;
      const Evaluation plus = evaluate(build, work);
      work[p][c] = orig - eps;
      const Evaluation minus = evaluate(build, work);
      work[p][c] = orig;
      if (plus.signature != base_signature || minus.signature != base_signature) {
        ++result.skipped_kinks;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * eps);
      const double a = analytic[p][c];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.param = p;
        result.coord = c;
        result.param_name = p < names.size() ? names[p] : std::string();
      }
    }
  }
  return result;
}

GradCheckResult grad_check_params(const ModelBuilder& build, const ParamStore& store, double eps) {
  const std::vector<std::string> names = store.names();
  std::vector<Tensor> values;
  values.reserve(names.size());
  for (const auto& n : names) values.push_back(store.get(n));
  auto wrapped = [&](Tape& t, std::span<const NodeId> ids) {
    Binder bind(t, store, nullptr);
    for (std::size_t i = 0; i < ids.size(); ++i) bind.provide(names[i], ids[i]);
    return build(t, bind);
  };
  return grad_check(wrapped, values, eps, names);
}

}  // namespace bkf
