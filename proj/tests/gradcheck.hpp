#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mapfm/nn.hpp"

namespace mapfm::check {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  long checked = 0;
  // strict relative error over entries whose gradient magnitude exceeds the floor
  double max_strict_rel_error = 0.0;
  long strict_checked = 0;
};

inline constexpr double kRelFloor = 1e-3;

inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kRelFloor});
}

enum class Stencil { three_point, five_point };

// Central differences on every entry of `leaves` (or every `stride`-th one),
// compared with the reverse-mode gradient of the scalar returned by `loss`.
inline GradCheckResult grad_check(const std::function<ag::Var()>& loss, std::vector<std::pair<std::string, ag::Var>> leaves,
                                  double h = 1e-5, long stride = 1, Stencil stencil = Stencil::three_point) {
  for (auto& [name, v] : leaves) v.zero_grad();
  {
    const ag::Var l = loss();
    ag::backward(l);
  }
  std::vector<ag::Matrix> analytic;
  for (auto& [name, v] : leaves) analytic.push_back(v.grad());
  GradCheckResult res;
  for (std::size_t t = 0; t < leaves.size(); ++t) {
    ag::Var& v = leaves[t].second;
    for (Eigen::Index i = 0; i < v.value().size(); i += stride) {
      double& x = v.mutable_value().data()[i];
      const double saved = x;
      auto at = [&](double d) {
        x = saved + d;
        return loss().scalar();
      };
      const double d1 = at(h) - at(-h);
      const double numeric =
          stencil == Stencil::three_point ? d1 / (2 * h) : (8 * d1 - (at(2 * h) - at(-2 * h))) / (12 * h);
      x = saved;
      const double e = rel_error(analytic[t].data()[i], numeric);
      ++res.checked;
      const double mag = std::max(std::abs(analytic[t].data()[i]), std::abs(numeric));
      if (mag > kRelFloor) {
        ++res.strict_checked;
        res.max_strict_rel_error = std::max(res.max_strict_rel_error, std::abs(analytic[t].data()[i] - numeric) / mag);
      }
      if (e > res.max_rel_error) {
        res.max_rel_error = e;
        res.worst = leaves[t].first + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[t].data()[i]) +
                    " numeric " + std::to_string(numeric);
      }
    }
  }
  return res;
}

inline std::vector<std::pair<std::string, ag::Var>> all_params(const nn::ParamStore& ps) {
  std::vector<std::pair<std::string, ag::Var>> out;
  for (const std::string& n : ps.names()) out.emplace_back(n, ps.get(n));
  return out;
}

}  // namespace mapfm::check
