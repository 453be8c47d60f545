#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "jpfa/losses.hpp"

namespace jpfa::synth {

inline constexpr int kImageSize = 32;

// One smooth dark principal-line stroke: a quadratic curve through three
// control points, drawn with a Gaussian cross-section.
struct LineStroke {
  double x0, y0, x1, y1, x2, y2;  // control points in [-1, 1] coordinates
  double amplitude;               // darkness, subtracted from the base level
  double width;                   // Gaussian cross-section scale
};

// One oriented sinusoidal ridge component.
struct RidgeWave {
  double amplitude;
  double frequency;    // cycles across the [-1, 1] span
  double orientation;  // radians
  double phase;
};

// A person = a fixed set of strokes and ridges, fully determined by seed.
struct IdentitySpec {
  std::uint64_t seed = 0;
  double base_level = 0.1;
  std::vector<LineStroke> lines;
  std::vector<RidgeWave> ridges;

  static IdentitySpec from_seed(std::uint64_t seed);
};

// Acquisition-condition model applied on top of the identity texture. The
// default-constructed style is the exact identity transform.
struct DomainStyle {
  std::string name = "identity";
  double gradient_dx = 0.0;  // brightness gradient direction (unnormalized)
  double gradient_dy = 0.0;
  double gradient_magnitude = 0.0;
  double gamma = 1.0;       // applied on the [0, 1] remap of pixel values
  double blur_sigma = 0.0;  // Gaussian blur in pixels
  double noise_sigma = 0.0; // additive Gaussian noise
  double contrast = 1.0;    // scaling about the mid level

  static DomainStyle flashlike();
  static DomainStyle naturalike();
};

struct SampleRecord {
  std::vector<double> pixels;  // kImageSize^2 values in [-1, 1], row-major
  int label = 0;
  std::string domain;
  int sample_index = 0;
  std::uint64_t spec_seed = 0;  // seed of the identity this sample renders
};

// A collection of samples with an explicit label-visibility policy. Target
// splits always hide labels: training code must go through label_of, which
// refuses, while evaluation code uses label_for_evaluation.
class DatasetSplit {
 public:
  enum class Role { source, target, fake };

  DatasetSplit() = default;
  DatasetSplit(Role role, std::string domain);

  void add(SampleRecord record);
  int size() const { return static_cast<int>(records_.size()); }
  const std::vector<double>& pixels(int i) const { return records_.at(i).pixels; }
  const SampleRecord& record(int i) const { return records_.at(i); }

  // Label access for training purposes; throws when the policy hides labels.
  int label_of(int i) const;
  // Label access for metric computation only.
  int label_for_evaluation(int i) const { return records_.at(i).label; }

  Role role() const { return role_; }
  const std::string& domain() const { return domain_; }
  bool labels_visible() const { return labels_visible_; }

  // Copy of this split re-tagged for the given role; target hides labels.
  DatasetSplit with_role(Role role) const;

 private:
  std::vector<SampleRecord> records_;
  Role role_ = Role::source;
  std::string domain_;
  bool labels_visible_ = true;
};

// Renders the identity texture with a small per-sample geometric jitter
// (translation up to 2 px, rotation up to 5 degrees) drawn from jitter_seed.
std::vector<double> render_identity(const IdentitySpec& spec, std::uint64_t jitter_seed);

// Pipeline: contrast, gamma, brightness gradient, Gaussian blur, additive
// noise, clip to [-1, 1]. The identity style returns the input bit-exactly.
std::vector<double> apply_style(const std::vector<double>& image, const DomainStyle& style,
                                std::uint64_t noise_seed);

// For every style, one split of n_identities * n_per_identity records; the
// same identity index across styles renders the same IdentitySpec.
std::map<std::string, DatasetSplit> generate_benchmark(int n_identities, int n_per_identity,
                                                       const std::vector<DomainStyle>& styles,
                                                       std::uint64_t master_seed);

// Pairwise same-label indicator for a batch of record indices. Requires
// visible labels; target splits are rejected.
losses::RelationMatrix build_relation_matrix(const DatasetSplit& split,
                                             const std::vector<int>& indices);

// 8-bit binary PGM I/O; pixel values map linearly between [-1, 1] and 0..255.
void write_pgm(const std::filesystem::path& path, const std::vector<double>& pixels,
               int width, int height);
std::vector<double> read_pgm(const std::filesystem::path& path, int& width, int& height);

// Box-filter (area averaging) resize of a grayscale image.
std::vector<double> resize_area(const std::vector<double>& pixels, int width, int height,
                                int out_width, int out_height);

// Loads <label>_<index>.pgm|png files from a folder, resized to kImageSize
// and mapped to [-1, 1]. Files with unparseable names are skipped with a
// warning; unreadable files raise an error naming the file.
DatasetSplit load_image_folder(const std::filesystem::path& folder, const std::string& domain_tag);

}  // namespace jpfa::synth
