#pragma once

#include <vector>

#include "jpfa/tensor.hpp"

namespace jpfa::losses {

// Scalar weights shared by the training objectives. margin is the hinge
// threshold of the pairwise hashing loss; squared_distance selects squared
// Euclidean (default) versus plain Euclidean code distances.
struct LossWeights {
  double alpha = 0.5;           // quantization penalty weight
  double beta = 1.5;            // head-consistency weight
  double margin = 128.0;        // hinge margin, defaults to 2 * code length
  double cycle_weight = 10.0;   // reconstruction weight in the pixel objective
  double identity_weight = 1.0; // code-preservation weight in the pixel objective
  bool squared_distance = true;

  void validate() const;  // all finite and non-negative
};

// Pairwise same-identity indicator over a batch: entry(i,j) == 1 iff the
// labels of items i and j agree. Symmetric with unit diagonal.
struct RelationMatrix {
  int n = 0;
  std::vector<int> entries;  // row-major n*n of {0,1}

  static RelationMatrix from_labels(const std::vector<int>& labels);
  int at(int i, int j) const { return entries[static_cast<std::size_t>(i) * n + j]; }
};

// Convex combination of Gaussian kernels k_u(a,b) = exp(-|a-b|^2 / (2 s_u^2)).
struct KernelFamily {
  std::vector<double> bandwidths;  // s_u, all positive
  std::vector<double> weights;     // convex: non-negative, summing to 1

  static KernelFamily single(double bandwidth);
  // Five bandwidths at {1/4, 1/2, 1, 2, 4} times the given scale, equal
  // weights. The scale normally comes from median_pairwise_distance.
  static KernelFamily ladder(double scale);
  void validate() const;
};

// Median of the plain Euclidean distances over all unordered pairs in the
// union of the two sample sets (rows of n x K matrices). Returns 1 when the
// median degenerates to 0 so a bandwidth built from it stays usable.
double median_pairwise_distance(const Tensor& xs, const Tensor& ys);

// Distance between two codes of equal length: squared Euclidean by default,
// plain Euclidean otherwise.
Tensor feature_distance(const Tensor& u, const Tensor& v, bool squared = true);

// Contrastive pairwise loss on a code pair: same-identity pairs pay half
// their distance, different-identity pairs pay half the hinge max(margin -
// distance, 0). same must be 0 or 1 and margin positive.
Tensor hashing_loss(const Tensor& u, const Tensor& v, int same, double margin,
                    bool squared = true);

// Half the Euclidean norm of (|u| - 1): zero exactly on codes with every
// entry at +-1, positive elsewhere.
Tensor quantization_loss(const Tensor& u);

// Batch supervised hashing objective: sum of hashing_loss over pairs i < j
// plus alpha times the sum of per-code quantization penalties. Codes may be
// given as a list of length-K tensors or as one N x K matrix. N >= 2.
Tensor dhn_batch_loss(const std::vector<Tensor>& codes, const RelationMatrix& relation,
                      const LossWeights& w);
Tensor dhn_batch_loss(const Tensor& codes, const RelationMatrix& relation,
                      const LossWeights& w);

// Biased two-sample kernel discrepancy between row sets xs (n x K) and ys
// (m x K): mean_xx k + mean_yy k - 2 mean_xy k, diagonal terms included.
Tensor mmd(const Tensor& xs, const Tensor& ys, double bandwidth);

// Multi-kernel version: the weighted sum over the family's kernels, equal
// by linearity to the weighted sum of single-kernel discrepancies.
Tensor mk_mmd(const Tensor& xs, const Tensor& ys, const KernelFamily& family);

// Mean absolute difference between two equal-shape code tensors. For a
// batch, pass the two N x K matrices; the mean runs over all entries.
Tensor consistency_loss(const Tensor& a, const Tensor& b);

// Sum over pairs of the plain Euclidean norm |a_i - b_i|. Inputs are
// matched N x K matrices (row i of each side belongs to the same item).
Tensor identity_loss(const Tensor& a, const Tensor& b);

// Least-squares adversarial objective. discriminator drives real scores to
// 1 and fake scores to 0; generator drives fake scores to 1. Inputs are
// score grids of any shape; each term is a mean over its grid.
struct AdversarialTerms {
  Tensor generator;
  Tensor discriminator;
};
AdversarialTerms adversarial_losses(const Tensor& d_real, const Tensor& d_fake);

// Mean absolute pixel difference between an image and its round-trip
// reconstruction.
Tensor cycle_loss(const Tensor& original, const Tensor& reconstructed);

// Full pixel-alignment objective for the generators:
//   adversarial + cycle_weight * cycle + identity_weight * identity.
struct PixelTerms {
  Tensor adversarial;  // both translation directions, already summed
  Tensor cycle;        // both reconstruction directions, already summed
  Tensor identity;     // identity_loss of source codes vs fake codes
};
Tensor pixel_objective(const PixelTerms& terms, const LossWeights& w);

// Bookkeeping total across both alignment stages:
//   dhn + pixel + mmd_ts + mmd_tf + beta * consistency.
Tensor joint_objective(const Tensor& dhn, const Tensor& pixel, const Tensor& mmd_ts,
                       const Tensor& mmd_tf, const Tensor& consistency,
                       const LossWeights& w);

}  // namespace jpfa::losses
