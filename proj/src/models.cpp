#include "jpfa/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "jpfa/checksum.hpp"
#include "jpfa/ops.hpp"
#include "jpfa/rng.hpp"

namespace jpfa::models {

namespace {

Tensor conv_init(Rng& rng, int out_c, int in_c, int k, double gain) {
  const double stddev = gain / std::sqrt(static_cast<double>(in_c) * k * k);
  std::vector<double> w(static_cast<std::size_t>(out_c) * in_c * k * k);
  for (double& v : w) v = rng.normal(0.0, stddev);
  return Tensor::from_data({out_c, in_c, k, k}, std::move(w), true);
}

Tensor dense_init(Rng& rng, int d, int k, double gain) {
  const double stddev = gain / std::sqrt(static_cast<double>(d));
  std::vector<double> w(static_cast<std::size_t>(d) * k);
  for (double& v : w) v = rng.normal(0.0, stddev);
  return Tensor::from_data({d, k}, std::move(w), true);
}

Tensor bias_init(int n) { return Tensor::zeros({n}, true); }

constexpr double kReluGain = 1.4142135623730951;  // sqrt(2), He init

Tensor conv_block(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  return ops::channel_bias(ops::conv2d(x, w, stride, padding), b);
}

void expect_image_batch(const Tensor& x, const char* who) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != 32 || s[3] != 32) {
    throw std::invalid_argument(std::string(who) + ": expected [N x 1 x 32 x 32] images, got " +
                                shape_str(x.shape()));
  }
}

}  // namespace

void ParamRegistry::merge(const ParamRegistry& other, const std::string& prefix) {
  for (const auto& [name, t] : other.items) items.emplace_back(prefix + name, t);
}

std::vector<Tensor> ParamRegistry::tensors() const {
  std::vector<Tensor> out;
  out.reserve(items.size());
  for (const auto& [name, t] : items) out.push_back(t);
  return out;
}

std::size_t ParamRegistry::total_size() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items) n += t.size();
  return n;
}

std::uint64_t ParamRegistry::checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, t] : items) {
    h = fnv1a64(name, h);
    for (int d : t.shape()) h = fnv1a64(&d, sizeof(d), h);
    h = checksum_doubles(t.data(), h);
  }
  return h;
}

TrunkF::TrunkF(std::uint64_t seed) {
  Rng rng(mix_seed(seed, "trunk"));
  w1_ = conv_init(rng, 8, 1, 3, kReluGain);
  b1_ = bias_init(8);
  w2_ = conv_init(rng, 16, 8, 3, kReluGain);
  b2_ = bias_init(16);
  w3_ = conv_init(rng, 32, 16, 3, kReluGain);
  b3_ = bias_init(32);
}

Tensor TrunkF::forward(const Tensor& images) const {
  expect_image_batch(images, "trunk");
  Tensor x = ops::maxpool2d(conv_block(images, w1_, b1_, 1, 1).relu(), 2, 2);
  x = ops::maxpool2d(conv_block(x, w2_, b2_, 1, 1).relu(), 2, 2);
  return ops::maxpool2d(conv_block(x, w3_, b3_, 1, 1).relu(), 2, 2);
}

ParamRegistry TrunkF::params() const {
  ParamRegistry r;
  r.add("conv1.w", w1_);
  r.add("conv1.b", b1_);
  r.add("conv2.w", w2_);
  r.add("conv2.b", b2_);
  r.add("conv3.w", w3_);
  r.add("conv3.b", b3_);
  return r;
}

void TrunkF::freeze() {
  // Detached copies carry no gradient, so later training passes stop here.
  w1_ = w1_.detach();
  b1_ = b1_.detach();
  w2_ = w2_.detach();
  b2_ = b2_.detach();
  w3_ = w3_.detach();
  b3_ = b3_.detach();
  frozen_ = true;
}

SpecificHead::SpecificHead(std::uint64_t seed, int code_length) : k_(code_length) {
  if (code_length < 1) throw std::invalid_argument("head: code_length must be positive");
  Rng rng(mix_seed(seed, "head"));
  cw_ = conv_init(rng, 64, 32, 3, kReluGain);
  cb_ = bias_init(64);
  fw1_ = dense_init(rng, 256, 128, kReluGain);
  fb1_ = bias_init(128);
  fw2_ = dense_init(rng, 128, code_length, 1.0);
  fb2_ = bias_init(code_length);
}

Tensor SpecificHead::forward(const Tensor& features) const { return forward_raw(features).tanh(); }

Tensor SpecificHead::forward_raw(const Tensor& features) const {
  const Shape& s = features.shape();
  if (s.size() != 4 || s[1] != 32 || s[2] != 4 || s[3] != 4) {
    throw std::invalid_argument("head: expected [N x 32 x 4 x 4] trunk features, got " +
                                shape_str(features.shape()));
  }
  Tensor x = ops::maxpool2d(conv_block(features, cw_, cb_, 1, 1).relu(), 2, 2);
  x = ops::reshape(x, {s[0], 256});
  x = ops::dense(x, fw1_, fb1_).relu();
  return ops::dense(x, fw2_, fb2_);
}

ParamRegistry SpecificHead::params() const {
  ParamRegistry r;
  r.add("conv.w", cw_);
  r.add("conv.b", cb_);
  r.add("fc1.w", fw1_);
  r.add("fc1.b", fb1_);
  r.add("fc2.w", fw2_);
  r.add("fc2.b", fb2_);
  return r;
}

Generator::Generator(std::uint64_t seed) {
  Rng rng(mix_seed(seed, "generator"));
  d1w_ = conv_init(rng, 8, 1, 3, kReluGain);
  d1b_ = bias_init(8);
  d2w_ = conv_init(rng, 16, 8, 3, kReluGain);
  d2b_ = bias_init(16);
  for (int b = 0; b < 3; ++b) {
    res_[4 * b + 0] = conv_init(rng, 16, 16, 3, kReluGain);
    res_[4 * b + 1] = bias_init(16);
    res_[4 * b + 2] = conv_init(rng, 16, 16, 3, 1.0);
    res_[4 * b + 3] = bias_init(16);
  }
  u1w_ = conv_init(rng, 8, 16, 3, kReluGain);
  u1b_ = bias_init(8);
  u2w_ = conv_init(rng, 4, 8, 3, kReluGain);
  u2b_ = bias_init(4);
  ow_ = conv_init(rng, 1, 4, 3, 1.0);
  ob_ = bias_init(1);
}

Tensor Generator::forward(const Tensor& images) const {
  expect_image_batch(images, "generator");
  // Per-plane normalization after every hidden conv: output tone is carried
  // by the later layers' weights, not by shrinking activations globally.
  Tensor x = ops::instance_norm(conv_block(images, d1w_, d1b_, 2, 1)).relu();
  x = ops::instance_norm(conv_block(x, d2w_, d2b_, 2, 1)).relu();
  for (int b = 0; b < 3; ++b) {
    Tensor y = ops::instance_norm(conv_block(x, res_[4 * b + 0], res_[4 * b + 1], 1, 1)).relu();
    y = ops::instance_norm(conv_block(y, res_[4 * b + 2], res_[4 * b + 3], 1, 1));
    x = x + y;
  }
  x = ops::instance_norm(conv_block(ops::upsample_nearest2x(x), u1w_, u1b_, 1, 1)).relu();
  x = ops::instance_norm(conv_block(ops::upsample_nearest2x(x), u2w_, u2b_, 1, 1)).relu();
  return conv_block(x, ow_, ob_, 1, 1).tanh();
}

ParamRegistry Generator::params() const {
  ParamRegistry r;
  r.add("down1.w", d1w_);
  r.add("down1.b", d1b_);
  r.add("down2.w", d2w_);
  r.add("down2.b", d2b_);
  for (int b = 0; b < 3; ++b) {
    const std::string p = "res" + std::to_string(b + 1) + ".";
    r.add(p + "conv1.w", res_[4 * b + 0]);
    r.add(p + "conv1.b", res_[4 * b + 1]);
    r.add(p + "conv2.w", res_[4 * b + 2]);
    r.add(p + "conv2.b", res_[4 * b + 3]);
  }
  r.add("up1.w", u1w_);
  r.add("up1.b", u1b_);
  r.add("up2.w", u2w_);
  r.add("up2.b", u2b_);
  r.add("out.w", ow_);
  r.add("out.b", ob_);
  return r;
}

Discriminator::Discriminator(std::uint64_t seed) {
  Rng rng(mix_seed(seed, "discriminator"));
  w1_ = conv_init(rng, 8, 1, 3, kReluGain);
  b1_ = bias_init(8);
  w2_ = conv_init(rng, 16, 8, 3, kReluGain);
  b2_ = bias_init(16);
  w3_ = conv_init(rng, 1, 16, 3, 1.0);
  b3_ = bias_init(1);
}

Tensor Discriminator::forward(const Tensor& images) const {
  expect_image_batch(images, "discriminator");
  // No normalization, and leaky activations: the critic must stay sensitive
  // to absolute tone (both lobes), or the generator escapes matching
  // brightness and contrast.
  auto leaky = [](const Tensor& t) { return t.relu() - t.negate().relu().scale(0.2); };
  Tensor x = leaky(conv_block(images, w1_, b1_, 2, 1));
  x = leaky(conv_block(x, w2_, b2_, 2, 1));
  return conv_block(x, w3_, b3_, 2, 1);
}

ParamRegistry Discriminator::params() const {
  ParamRegistry r;
  r.add("conv1.w", w1_);
  r.add("conv1.b", b1_);
  r.add("conv2.w", w2_);
  r.add("conv2.b", b2_);
  r.add("conv3.w", w3_);
  r.add("conv3.b", b3_);
  return r;
}

void save_weights(const std::filesystem::path& path, const ParamRegistry& params) {
  nlohmann::ordered_json manifest;
  manifest["format"] = "jpfa-weights";
  manifest["version"] = 1;
  manifest["tensors"] = nlohmann::ordered_json::array();
  for (const auto& [name, t] : params.items) {
    manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  }
  const std::string header = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_weights: cannot open " + path.string());
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : params.items) {
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("save_weights: write failed for " + path.string());
}

void load_weights(const std::filesystem::path& path, const ParamRegistry& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_weights: cannot open " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len == 0 || len > std::filesystem::file_size(path) - sizeof(len)) {
    throw std::runtime_error("load_weights: " + path.string() + " is not a weight snapshot");
  }
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("load_weights: truncated header in " + path.string());

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_weights: bad manifest in " + path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "jpfa-weights") {
    throw std::runtime_error("load_weights: " + path.string() + " is not a weight snapshot");
  }
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != params.items.size()) {
    throw std::runtime_error("load_weights: " + path.string() + " holds " +
                             std::to_string(tensors.size()) + " tensors, registry expects " +
                             std::to_string(params.items.size()));
  }
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    const auto& [name, t] = params.items[i];
    if (tensors[i].at("name").get<std::string>() != name ||
        tensors[i].at("shape").get<std::vector<int>>() != t.shape()) {
      throw std::runtime_error("load_weights: tensor " + std::to_string(i) + " mismatch: file has " +
                               tensors[i].at("name").get<std::string>() + ", registry expects " +
                               name + " " + shape_str(t.shape()));
    }
  }
  for (const auto& [name, t] : params.items) {
    Tensor handle = t;  // shares storage with the model's parameter
    std::vector<double>& dst = handle.mutable_data();
    in.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(dst.size() * sizeof(double)));
  }
  if (!in) throw std::runtime_error("load_weights: truncated data in " + path.string());
}

}  // namespace jpfa::models
