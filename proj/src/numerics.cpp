#include "prsfda/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "prsfda/error.hpp"

namespace prsfda {

void softmax_inplace(std::span<double> row) {
  double peak = row[0];
  for (double v : row) {
    if (!std::isfinite(v)) throw Error(ErrorKind::kInvalidInput, "softmax received a non-finite logit");
    peak = std::max(peak, v);
  }
  double total = 0.0;
  for (double& v : row) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : row) v /= total;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() == 0 || logits.channels() < 2) {
    throw Error(ErrorKind::kInvalidInput, "softmax needs a last extent of at least 2, got shape " +
                                              logits.shape_string());
  }
  Tensor out = logits;
  const std::size_t c = out.channels();
  auto data = out.data();
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(data.subspan(r * c, c));
  return out;
}

double clamp_prob(double p) noexcept { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

namespace {

void check_probability(double p) {
  constexpr double kSlack = 1e-9;
  if (!(p >= -kSlack && p <= 1.0 + kSlack)) {
    throw Error(ErrorKind::kInvalidInput, "probability " + std::to_string(p) + " outside [0,1]");
  }
}

}  // namespace

double stable_log(double p) {
  check_probability(p);
  return std::log(clamp_prob(p));
}

double stable_log1m(double p) {
  check_probability(p);
  return std::log1p(-clamp_prob(p));
}

Tensor stable_log(const Tensor& p) {
  Tensor out = p;
  for (double& v : out.data()) v = stable_log(v);
  return out;
}

Tensor stable_log1m(const Tensor& p) {
  Tensor out = p;
  for (double& v : out.data()) v = stable_log1m(v);
  return out;
}

std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> x, double h) {
  if (!(h > 0.0)) throw Error(ErrorKind::kInvalidInput, "finite-difference step must be positive");
  std::vector<double> point(x.begin(), x.end());
  std::vector<double> grad(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + h;
    const double up = f(point);
    point[i] = saved - h;
    const double down = f(point);
    point[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error(ErrorKind::kOracleFailure, "function is non-finite around coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(double a, double b) noexcept {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

double max_relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::kShape, "gradient length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i]));
  return worst;
}

}  // namespace prsfda
