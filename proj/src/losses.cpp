#include "jpfa/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "jpfa/ops.hpp"

namespace jpfa::losses {

void LossWeights::validate() const {
  auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!ok(alpha) || !ok(beta) || !ok(margin) || !ok(cycle_weight) || !ok(identity_weight)) {
    throw std::invalid_argument("loss weights must be finite and non-negative");
  }
}

RelationMatrix RelationMatrix::from_labels(const std::vector<int>& labels) {
  RelationMatrix r;
  r.n = static_cast<int>(labels.size());
  r.entries.resize(static_cast<std::size_t>(r.n) * r.n);
  for (int i = 0; i < r.n; ++i) {
    for (int j = 0; j < r.n; ++j) {
      r.entries[static_cast<std::size_t>(i) * r.n + j] = labels[i] == labels[j] ? 1 : 0;
    }
  }
  return r;
}

KernelFamily KernelFamily::single(double bandwidth) {
  KernelFamily f;
  f.bandwidths = {bandwidth};
  f.weights = {1.0};
  f.validate();
  return f;
}

KernelFamily KernelFamily::ladder(double scale) {
  KernelFamily f;
  for (double factor : {0.25, 0.5, 1.0, 2.0, 4.0}) f.bandwidths.push_back(scale * factor);
  f.weights.assign(5, 0.2);
  f.validate();
  return f;
}

void KernelFamily::validate() const {
  if (bandwidths.empty() || bandwidths.size() != weights.size()) {
    throw std::invalid_argument("kernel family needs matching non-empty bandwidth and weight lists");
  }
  double total = 0.0;
  for (double s : bandwidths) {
    if (!std::isfinite(s) || s <= 0.0) {
      throw std::invalid_argument("kernel bandwidths must be positive and finite");
    }
  }
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) {
      throw std::invalid_argument("kernel weights must be non-negative");
    }
    total += w;
  }
  if (std::fabs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("kernel weights must sum to 1, got " + std::to_string(total));
  }
}

double median_pairwise_distance(const Tensor& xs, const Tensor& ys) {
  if (xs.shape().size() != 2 || ys.shape().size() != 2 || xs.shape()[1] != ys.shape()[1]) {
    throw std::invalid_argument("median_pairwise_distance: need two matrices with equal widths, got " +
                                shape_str(xs.shape()) + " and " + shape_str(ys.shape()));
  }
  const int n = xs.shape()[0], m = ys.shape()[0], K = xs.shape()[1];
  std::vector<const double*> rows;
  rows.reserve(n + m);
  for (int i = 0; i < n; ++i) rows.push_back(xs.data().data() + static_cast<std::size_t>(i) * K);
  for (int j = 0; j < m; ++j) rows.push_back(ys.data().data() + static_cast<std::size_t>(j) * K);
  std::vector<double> dists;
  dists.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double s = 0.0;
      for (int k = 0; k < K; ++k) {
        const double d = rows[i][k] - rows[j][k];
        s += d * d;
      }
      dists.push_back(std::sqrt(s));
    }
  }
  if (dists.empty()) return 1.0;
  std::sort(dists.begin(), dists.end());
  const std::size_t h = dists.size() / 2;
  const double med = dists.size() % 2 ? dists[h] : 0.5 * (dists[h - 1] + dists[h]);
  return med > 0.0 ? med : 1.0;
}

Tensor feature_distance(const Tensor& u, const Tensor& v, bool squared) {
  if (u.shape() != v.shape()) {
    throw std::invalid_argument("feature_distance: code shapes differ, " + shape_str(u.shape()) +
                                " vs " + shape_str(v.shape()));
  }
  Tensor d = (u - v).square().sum();
  return squared ? d : d.sqrt();
}

Tensor hashing_loss(const Tensor& u, const Tensor& v, int same, double margin, bool squared) {
  if (margin <= 0.0) {
    throw std::invalid_argument("hashing_loss: margin must be positive, got " +
                                std::to_string(margin));
  }
  if (same != 0 && same != 1) {
    throw std::invalid_argument("hashing_loss: pair indicator must be 0 or 1");
  }
  Tensor d = feature_distance(u, v, squared);
  if (same == 1) return d.scale(0.5);
  return d.negate().add_scalar(margin).relu().scale(0.5);
}

Tensor quantization_loss(const Tensor& u) {
  return u.abs().add_scalar(-1.0).square().sum().sqrt().scale(0.5);
}

Tensor dhn_batch_loss(const Tensor& codes, const RelationMatrix& relation,
                      const LossWeights& w) {
  w.validate();
  if (w.margin <= 0.0) throw std::invalid_argument("dhn_batch_loss: margin must be positive");
  if (codes.shape().size() != 2) {
    throw std::invalid_argument("dhn_batch_loss: codes must be an N x K matrix, got " +
                                shape_str(codes.shape()));
  }
  const int n = codes.shape()[0];
  if (n < 2) {
    throw std::invalid_argument("dhn_batch_loss: need at least 2 codes, got " +
                                std::to_string(n));
  }
  if (relation.n != n) {
    throw std::invalid_argument("dhn_batch_loss: relation matrix size " +
                                std::to_string(relation.n) + " does not match batch size " +
                                std::to_string(n));
  }

  Tensor dist = ops::pairwise_sqdist(codes, codes);
  if (!w.squared_distance) dist = dist.sqrt();

  // Constant masks select the strict upper triangle, split by pair type.
  std::vector<double> same_mask(static_cast<std::size_t>(n) * n, 0.0);
  std::vector<double> diff_mask(same_mask.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      (relation.at(i, j) ? same_mask : diff_mask)[static_cast<std::size_t>(i) * n + j] = 0.5;
    }
  }
  Tensor pull = dist.mul(Tensor::from_data({n, n}, std::move(same_mask))).sum();
  Tensor hinge = dist.negate().add_scalar(w.margin).relu();
  Tensor push = hinge.mul(Tensor::from_data({n, n}, std::move(diff_mask))).sum();

  Tensor quant = codes.abs().add_scalar(-1.0).square();
  quant = ops::reduce_sum(quant, {1}).sqrt().sum().scale(0.5 * w.alpha);
  return pull + push + quant;
}

Tensor dhn_batch_loss(const std::vector<Tensor>& codes, const RelationMatrix& relation,
                      const LossWeights& w) {
  if (codes.size() < 2) {
    throw std::invalid_argument("dhn_batch_loss: need at least 2 codes, got " +
                                std::to_string(codes.size()));
  }
  return dhn_batch_loss(ops::stack_rows(codes), relation, w);
}

namespace {

// Shared evaluation for (multi-)kernel discrepancies: statistics are linear
// in the kernel, so each bandwidth contributes its three double sums scaled
// by the matching convex weight.
Tensor kernel_discrepancy(const Tensor& xs, const Tensor& ys, const KernelFamily& family) {
  family.validate();
  if (xs.shape().size() != 2 || ys.shape().size() != 2) {
    throw std::invalid_argument("kernel discrepancy needs n x K sample matrices, got " +
                                shape_str(xs.shape()) + " and " + shape_str(ys.shape()));
  }
  if (xs.shape()[1] != ys.shape()[1]) {
    throw std::invalid_argument("kernel discrepancy: sample widths differ, " +
                                shape_str(xs.shape()) + " vs " + shape_str(ys.shape()));
  }
  const double n = xs.shape()[0];
  const double m = ys.shape()[0];
  Tensor dxx = ops::pairwise_sqdist(xs, xs);
  Tensor dxy = ops::pairwise_sqdist(xs, ys);
  Tensor dyy = ops::pairwise_sqdist(ys, ys);

  Tensor total;
  for (std::size_t u = 0; u < family.bandwidths.size(); ++u) {
    const double s = family.bandwidths[u];
    const double g = -1.0 / (2.0 * s * s);
    Tensor term = dxx.scale(g).exp().sum().scale(1.0 / (n * n)) +
                  dyy.scale(g).exp().sum().scale(1.0 / (m * m)) +
                  dxy.scale(g).exp().sum().scale(-2.0 / (n * m));
    term = term.scale(family.weights[u]);
    total = total.defined() ? total + term : term;
  }
  return total;
}

}  // namespace

Tensor mmd(const Tensor& xs, const Tensor& ys, double bandwidth) {
  return kernel_discrepancy(xs, ys, KernelFamily::single(bandwidth));
}

Tensor mk_mmd(const Tensor& xs, const Tensor& ys, const KernelFamily& family) {
  return kernel_discrepancy(xs, ys, family);
}

Tensor consistency_loss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("consistency_loss: code shapes differ, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  return (a - b).abs().mean();
}

Tensor identity_loss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.shape().size() != 2) {
    throw std::invalid_argument("identity_loss: need matching N x K matrices, got " +
                                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Tensor sq = (a - b).square();
  return ops::reduce_sum(sq, {1}).sqrt().sum();
}

AdversarialTerms adversarial_losses(const Tensor& d_real, const Tensor& d_fake) {
  AdversarialTerms t;
  t.discriminator = d_real.add_scalar(-1.0).square().mean() + d_fake.square().mean();
  t.generator = d_fake.add_scalar(-1.0).square().mean();
  return t;
}

Tensor cycle_loss(const Tensor& original, const Tensor& reconstructed) {
  if (original.shape() != reconstructed.shape()) {
    throw std::invalid_argument("cycle_loss: image shapes differ, " +
                                shape_str(original.shape()) + " vs " +
                                shape_str(reconstructed.shape()));
  }
  return (original - reconstructed).abs().mean();
}

Tensor pixel_objective(const PixelTerms& terms, const LossWeights& w) {
  w.validate();
  return terms.adversarial + terms.cycle.scale(w.cycle_weight) +
         terms.identity.scale(w.identity_weight);
}

Tensor joint_objective(const Tensor& dhn, const Tensor& pixel, const Tensor& mmd_ts,
                       const Tensor& mmd_tf, const Tensor& consistency,
                       const LossWeights& w) {
  w.validate();
  return dhn + pixel + mmd_ts + mmd_tf + consistency.scale(w.beta);
}

}  // namespace jpfa::losses
