#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "jpfa/tensor.hpp"

namespace jpfa::models {

// Named parameter handles in a stable order. Handles share storage with the
// owning model, so loading through a registry updates the model in place.
struct ParamRegistry {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(std::string name, const Tensor& t) { items.emplace_back(std::move(name), t); }
  void merge(const ParamRegistry& other, const std::string& prefix);
  std::vector<Tensor> tensors() const;
  std::size_t total_size() const;
  std::uint64_t checksum() const;  // covers names, shapes and raw values
};

// Shared feature extractor: three conv(3x3, pad 1) + maxpool(2) blocks with
// widths 8/16/32. Maps [N,1,32,32] to [N,32,4,4]. Frozen after pretraining;
// frozen parameters carry no gradient, so alignment training cannot move
// them.
class TrunkF {
 public:
  explicit TrunkF(std::uint64_t seed);
  Tensor forward(const Tensor& images) const;
  ParamRegistry params() const;
  bool frozen() const { return frozen_; }
  void freeze();

 private:
  Tensor w1_, b1_, w2_, b2_, w3_, b3_;
  bool frozen_ = false;
};

// Dataset-specific hashing head: conv(3x3, width 64) + pool, then fully
// connected 256 -> 128 -> code_length with a final tanh. Maps trunk features
// [N,32,4,4] to codes [N,K] with entries in (-1, 1).
class SpecificHead {
 public:
  SpecificHead(std::uint64_t seed, int code_length);
  Tensor forward(const Tensor& features) const;
  // The same code before the final tanh, for consumers that compare
  // pre-activation features.
  Tensor forward_raw(const Tensor& features) const;
  ParamRegistry params() const;
  int code_length() const { return k_; }

 private:
  Tensor cw_, cb_, fw1_, fb1_, fw2_, fb2_;
  int k_;
};

// Style-transfer generator: two stride-2 downsampling convs (widths 8/16),
// three residual blocks at width 16, two nearest-upsample+conv stages
// (widths 8/4) and a 1-channel output conv with tanh. Shape-preserving on
// [N,1,32,32]; output range (-1, 1).
class Generator {
 public:
  explicit Generator(std::uint64_t seed);
  Tensor forward(const Tensor& images) const;
  ParamRegistry params() const;

 private:
  Tensor d1w_, d1b_, d2w_, d2b_;
  std::array<Tensor, 12> res_;  // 3 blocks x (w1, b1, w2, b2)
  Tensor u1w_, u1b_, u2w_, u2b_, ow_, ob_;
};

// Patch critic: three stride-2 convs (widths 8/16/1) mapping [N,1,32,32] to
// a [N,1,4,4] grid of scores, no output activation.
class Discriminator {
 public:
  explicit Discriminator(std::uint64_t seed);
  Tensor forward(const Tensor& images) const;
  ParamRegistry params() const;

 private:
  Tensor w1_, b1_, w2_, b2_, w3_, b3_;
};

// Weight snapshot: a JSON manifest (names and shapes, in registry order)
// prefixed by its byte length, followed by the flat little-endian 64-bit
// values of every tensor. Round-trips bit-exactly.
void save_weights(const std::filesystem::path& path, const ParamRegistry& params);
// Loads into existing tensors; names and shapes must match the file exactly.
void load_weights(const std::filesystem::path& path, const ParamRegistry& params);

}  // namespace jpfa::models
