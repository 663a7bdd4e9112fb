#include "ckd/optim.hpp"

#include <cmath>
#include <set>

namespace ckd {

Adam::Adam(std::vector<Parameter> params, const AdamConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  std::set<std::string> names;
  for (const Parameter& p : params_) {
    if (!names.insert(p.name).second) throw Error("duplicate parameter name: " + p.name);
    if (!p.tensor.requires_grad()) throw Error("parameter " + p.name + " does not require grad");
  }
}

void Adam::step() {
  for (Parameter& p : params_) {
    if (!p.tensor.has_grad()) continue;
    const std::vector<double> g = p.tensor.grad().values();
    State& st = state_[p.name];
    if (st.m.empty()) {
      st.m.assign(g.size(), 0.0);
      st.v.assign(g.size(), 0.0);
    }
    if (st.m.size() != g.size()) throw Error("optimizer state shape mismatch for " + p.name);
    ++st.t;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));
    std::vector<double>& w = p.tensor.values_mut();
    for (std::size_t i = 0; i < g.size(); ++i) {
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g[i];
      st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Parameter& p : params_) p.tensor.zero_grad();
}

}  // namespace ckd
