#pragma once

// Central finite-difference oracle for tape gradients. Test-only; it
// re-evaluates the loss through values alone and never touches backward rules.

#include "trajgp/autodiff/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>

namespace trajgp::testing {

using LossBuilder = std::function<ad::Var(ad::Tape&, std::map<std::string, ad::Var>&)>;

inline double loss_value(const ad::ParamStore& params, const LossBuilder& build) {
  ad::Tape tape(false);
  auto vars = ad::bind_params(tape, params);
  return build(tape, vars).item();
}

inline ad::Gradients analytic_gradients(const ad::ParamStore& params, const LossBuilder& build) {
  ad::Tape tape;
  auto vars = ad::bind_params(tape, params);
  return tape.backward(build(tape, vars));
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst_param;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Entrywise |a - n| / max(|a|, |n|, floor). `max_entries` caps how many
/// randomly chosen entries of large tensors are probed (0 = all).
inline GradCheck check_gradients(const ad::ParamStore& params, const LossBuilder& build, double h = 1e-5,
                                 double floor = 1e-3, std::size_t max_entries = 0,
                                 std::uint64_t seed = 7) {
  const ad::Gradients grads = analytic_gradients(params, build);
  GradCheck result;
  std::mt19937_64 rng(seed);
  for (const auto& [name, value] : params) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(value.size()));
    for (Eigen::Index i = 0; i < value.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
    if (max_entries > 0 && idx.size() > max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_entries);
    }
    for (Eigen::Index i : idx) {
      ad::ParamStore plus = params;
      ad::ParamStore minus = params;
      plus[name].data()[i] += h;
      minus[name].data()[i] -= h;
      const double numeric = (loss_value(plus, build) - loss_value(minus, build)) / (2.0 * h);
      auto it = grads.find(name);
      const double analytic = it == grads.end() ? 0.0 : it->second.data()[i];
      const double rel =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      if (rel > result.max_rel_error) {
        result = {rel, name + "[" + std::to_string(i) + "]", analytic, numeric};
      }
    }
  }
  return result;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Random well-conditioned SPD matrix B B^T / n + I.
inline Matrix random_spd(Eigen::Index n, std::mt19937_64& rng) {
  Matrix b = random_matrix(n, n, rng);
  Matrix a = b * b.transpose() / static_cast<double>(n);
  a.diagonal().array() += 1.0;
  return a;
}

}  // namespace trajgp::testing
