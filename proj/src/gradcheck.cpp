#include "jpfa/gradcheck.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace jpfa {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double eval_scalar(const std::function<Tensor(const Tensor&)>& builder, const Tensor& leaf) {
  Tensor loss = builder(leaf);
  if (loss.size() != 1) {
    throw std::invalid_argument("gradient_check: builder must return a single-element tensor, got " +
                                shape_str(loss.shape()));
  }
  return loss.value();
}

}  // namespace

double gradient_check(const std::function<Tensor(const Tensor&)>& builder,
                      const Tensor& point, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("gradient_check: eps must be positive");

  Tensor leaf = Tensor::from_data(point.shape(), point.data(), true);
  std::vector<double> analytic;
  try {
    Tensor loss = builder(leaf);
    if (loss.size() != 1) {
      throw std::invalid_argument("gradient_check: builder must return a single-element tensor, got " +
                                  shape_str(loss.shape()));
    }
    backward(loss);
    analytic = leaf.grad();
  } catch (const std::invalid_argument&) {
    throw;
  } catch (...) {
    return kInf;
  }

  double worst = 0.0;
  std::vector<double> values = point.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    double f_plus, f_minus;
    try {
      values[i] = saved + eps;
      f_plus = eval_scalar(builder, Tensor::from_data(point.shape(), values, false));
      values[i] = saved - eps;
      f_minus = eval_scalar(builder, Tensor::from_data(point.shape(), values, false));
    } catch (...) {
      return kInf;
    }
    values[i] = saved;
    const double numeric = (f_plus - f_minus) / (2.0 * eps);
    const double a = analytic[i];
    if (!std::isfinite(a) || !std::isfinite(numeric)) return kInf;
    const double rel = std::fabs(a - numeric) / std::max(1.0, std::fabs(a));
    if (rel > worst) worst = rel;
  }
  return worst;
}

}  // namespace jpfa
