#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "surt/autodiff.h"
#include "surt/params.h"

namespace surt::checks {

// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

using LossBuilder =
    std::function<nn::Var<double>(nn::Graph<double>&, const nn::BasicParamStore<double>&)>;

// Max relative error between backprop and five-point central differences
// over every parameter entry of `store`.
// `worst_name`, when given, receives the parameter holding the worst entry.
double max_param_grad_error(nn::BasicParamStore<double>& store, const LossBuilder& build,
                            double eps = 1e-3, std::string* worst_name = nullptr);

struct OracleReport {
  std::size_t lattices = 0;
  double max_dev = 0;             // |DP loss - enumerated loss|
  std::size_t path_mismatches = 0;  // path count != C(T+U-1, U)
};

// Random lattices with T <= 6, U <= 4, V <= 5 against explicit path enumeration.
OracleReport lattice_oracle_check(std::uint64_t seed, std::size_t lattices);

struct GradcheckReport {
  std::size_t models = 0;
  std::size_t entries = 0;  // parameter entries checked per penalty setting, summed
  double max_rel_err = 0;
  double max_rel_err_penalized = 0;
  std::string worst;  // "model <i> <encoder>/<assignment> <parameter>"
};

// Random tiny SURT models (both encoder modes, HEAT and PIT), loss with and
// without the latency penalty, in double precision.
GradcheckReport model_gradcheck(std::uint64_t seed, std::size_t models, double eps = 1e-3);

}  // namespace surt::checks
