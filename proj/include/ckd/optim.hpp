#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ckd/tensor.hpp"

namespace ckd {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive moment estimation over named parameters. Per-parameter state is
// keyed by name; parameters whose gradient is absent in a step are skipped.
class Adam {
 public:
  Adam(std::vector<Parameter> params, const AdamConfig& cfg = {});

  void step();
  void zero_grad();

 private:
  struct State {
    std::vector<double> m, v;
    std::uint64_t t = 0;
  };
  std::vector<Parameter> params_;
  std::map<std::string, State> state_;
  AdamConfig cfg_;
};

}  // namespace ckd
