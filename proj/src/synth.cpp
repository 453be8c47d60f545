#include "jpfa/synth.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "jpfa/rng.hpp"

namespace jpfa::synth {

namespace {

constexpr double kPi = std::numbers::pi;

double clip(double v) { return std::clamp(v, -1.0, 1.0); }

}  // namespace

IdentitySpec IdentitySpec::from_seed(std::uint64_t seed) {
  IdentitySpec spec;
  spec.seed = seed;
  Rng rng(mix_seed(seed, "identity-spec"));
  const int n_lines = 3 + static_cast<int>(rng.below(3));
  for (int i = 0; i < n_lines; ++i) {
    LineStroke s;
    // Strokes sweep across the patch the way principal lines cross a palm:
    // endpoints on opposite halves, a free midpoint bending the curve.
    s.x0 = rng.uniform(-0.95, -0.25);
    s.y0 = rng.uniform(-0.85, 0.85);
    s.x1 = rng.uniform(-0.5, 0.5);
    s.y1 = rng.uniform(-0.95, 0.95);
    s.x2 = rng.uniform(0.25, 0.95);
    s.y2 = rng.uniform(-0.85, 0.85);
    s.amplitude = rng.uniform(0.5, 0.9);
    s.width = rng.uniform(0.06, 0.14);
    spec.lines.push_back(s);
  }
  const int n_ridges = 4 + static_cast<int>(rng.below(5));
  for (int i = 0; i < n_ridges; ++i) {
    RidgeWave r;
    r.amplitude = rng.uniform(0.08, 0.2);
    r.frequency = rng.uniform(2.0, 6.0);
    r.orientation = rng.uniform(0.0, kPi);
    r.phase = rng.uniform(0.0, 2.0 * kPi);
    spec.ridges.push_back(r);
  }
  return spec;
}

DomainStyle DomainStyle::flashlike() {
  DomainStyle s;
  s.name = "flashlike";
  s.contrast = 1.3;
  s.gamma = 0.85;
  s.noise_sigma = 0.02;
  return s;
}

DomainStyle DomainStyle::naturalike() {
  DomainStyle s;
  s.name = "naturalike";
  s.contrast = 0.85;
  s.gamma = 1.05;
  s.blur_sigma = 0.5;
  s.noise_sigma = 0.05;
  return s;
}

DatasetSplit::DatasetSplit(Role role, std::string domain)
    : role_(role), domain_(std::move(domain)), labels_visible_(role != Role::target) {}

void DatasetSplit::add(SampleRecord record) { records_.push_back(std::move(record)); }

int DatasetSplit::label_of(int i) const {
  if (!labels_visible_) {
    throw std::logic_error("label access denied: this split hides labels during training");
  }
  return records_.at(i).label;
}

DatasetSplit DatasetSplit::with_role(Role role) const {
  DatasetSplit copy = *this;
  copy.role_ = role;
  copy.labels_visible_ = role != Role::target;
  return copy;
}

std::vector<double> render_identity(const IdentitySpec& spec, std::uint64_t jitter_seed) {
  Rng rng(mix_seed(jitter_seed, "jitter"));
  const double unit_per_px = 2.0 / kImageSize;
  const double dx = rng.uniform(-2.0, 2.0) * unit_per_px;
  const double dy = rng.uniform(-2.0, 2.0) * unit_per_px;
  const double angle = rng.uniform(-5.0, 5.0) * kPi / 180.0;
  const double ca = std::cos(angle), sa = std::sin(angle);

  // Polylines approximating each stroke, in the un-jittered pattern frame.
  constexpr int kCurveSamples = 33;
  std::vector<std::array<double, 2 * kCurveSamples>> curves;
  curves.reserve(spec.lines.size());
  for (const LineStroke& line : spec.lines) {
    std::array<double, 2 * kCurveSamples> pts{};
    for (int k = 0; k < kCurveSamples; ++k) {
      const double t = static_cast<double>(k) / (kCurveSamples - 1);
      const double u = 1.0 - t;
      pts[2 * k] = u * u * line.x0 + 2.0 * u * t * line.x1 + t * t * line.x2;
      pts[2 * k + 1] = u * u * line.y0 + 2.0 * u * t * line.y1 + t * t * line.y2;
    }
    curves.push_back(pts);
  }

  std::vector<double> out(static_cast<std::size_t>(kImageSize) * kImageSize);
  for (int i = 0; i < kImageSize; ++i) {
    for (int j = 0; j < kImageSize; ++j) {
      const double x = (j + 0.5) * unit_per_px - 1.0;
      const double y = (i + 0.5) * unit_per_px - 1.0;
      // Query position in pattern space: rotate, then translate.
      const double xs = ca * x - sa * y + dx;
      const double ys = sa * x + ca * y + dy;
      double v = spec.base_level;
      for (const RidgeWave& r : spec.ridges) {
        const double proj = xs * std::cos(r.orientation) + ys * std::sin(r.orientation);
        v += r.amplitude * std::sin(2.0 * kPi * r.frequency * proj + r.phase);
      }
      for (std::size_t c = 0; c < curves.size(); ++c) {
        const auto& pts = curves[c];
        double d2 = 1e30;
        for (int k = 0; k < kCurveSamples; ++k) {
          const double ex = xs - pts[2 * k];
          const double ey = ys - pts[2 * k + 1];
          const double d = ex * ex + ey * ey;
          if (d < d2) d2 = d;
        }
        const double w = spec.lines[c].width;
        v -= spec.lines[c].amplitude * std::exp(-d2 / (2.0 * w * w));
      }
      out[static_cast<std::size_t>(i) * kImageSize + j] = clip(v);
    }
  }
  return out;
}

std::vector<double> apply_style(const std::vector<double>& image, const DomainStyle& style,
                                std::uint64_t noise_seed) {
  if (!(style.gamma > 0.0) || !(style.contrast > 0.0)) {
    throw std::invalid_argument("apply_style: gamma and contrast must be positive");
  }
  const int n = kImageSize;
  if (image.size() != static_cast<std::size_t>(n) * n) {
    throw std::invalid_argument("apply_style: expected a " + std::to_string(n) + "x" +
                                std::to_string(n) + " image");
  }
  std::vector<double> img = image;

  // Every stage is skipped exactly at its neutral setting so the identity
  // style reproduces the input bit-for-bit.
  if (style.contrast != 1.0) {
    for (double& v : img) v *= style.contrast;
  }
  if (style.gamma != 1.0) {
    for (double& v : img) {
      const double u = std::clamp((v + 1.0) * 0.5, 0.0, 1.0);
      v = 2.0 * std::pow(u, style.gamma) - 1.0;
    }
  }
  if (style.gradient_magnitude != 0.0) {
    const double norm = std::hypot(style.gradient_dx, style.gradient_dy);
    if (norm > 0.0) {
      const double gx = style.gradient_dx / norm;
      const double gy = style.gradient_dy / norm;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          const double x = (j + 0.5) * (2.0 / n) - 1.0;
          const double y = (i + 0.5) * (2.0 / n) - 1.0;
          img[static_cast<std::size_t>(i) * n + j] += style.gradient_magnitude * (gx * x + gy * y);
        }
      }
    }
  }
  if (style.blur_sigma > 0.0) {
    const int radius = static_cast<int>(std::ceil(3.0 * style.blur_sigma));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int k = -radius; k <= radius; ++k) {
      kernel[k + radius] = std::exp(-0.5 * k * k / (style.blur_sigma * style.blur_sigma));
      total += kernel[k + radius];
    }
    for (double& k : kernel) k /= total;
    // Separable passes with edge replication.
    std::vector<double> tmp(img.size());
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int jj = std::clamp(j + k, 0, n - 1);
          s += kernel[k + radius] * img[static_cast<std::size_t>(i) * n + jj];
        }
        tmp[static_cast<std::size_t>(i) * n + j] = s;
      }
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int ii = std::clamp(i + k, 0, n - 1);
          s += kernel[k + radius] * tmp[static_cast<std::size_t>(ii) * n + j];
        }
        img[static_cast<std::size_t>(i) * n + j] = s;
      }
    }
  }
  if (style.noise_sigma > 0.0) {
    Rng rng(mix_seed(noise_seed, "style-noise"));
    for (double& v : img) v += rng.normal(0.0, style.noise_sigma);
  }
  for (double& v : img) v = clip(v);
  return img;
}

std::map<std::string, DatasetSplit> generate_benchmark(int n_identities, int n_per_identity,
                                                       const std::vector<DomainStyle>& styles,
                                                       std::uint64_t master_seed) {
  if (n_identities < 2 || n_per_identity < 2) {
    throw std::invalid_argument("generate_benchmark: need at least 2 identities and 2 samples each");
  }
  if (styles.empty()) throw std::invalid_argument("generate_benchmark: no styles given");

  std::vector<IdentitySpec> specs;
  specs.reserve(n_identities);
  const std::uint64_t id_base = mix_seed(master_seed, "identity");
  for (int id = 0; id < n_identities; ++id) {
    specs.push_back(IdentitySpec::from_seed(mix_seed(id_base, static_cast<std::uint64_t>(id))));
  }

  std::map<std::string, DatasetSplit> out;
  for (std::size_t s = 0; s < styles.size(); ++s) {
    const DomainStyle& style = styles[s];
    if (out.count(style.name)) {
      throw std::invalid_argument("generate_benchmark: duplicate style name " + style.name);
    }
    DatasetSplit split(DatasetSplit::Role::source, style.name);
    const std::uint64_t style_jitter = mix_seed(mix_seed(master_seed, "jitter"), s);
    const std::uint64_t style_noise = mix_seed(mix_seed(master_seed, "noise"), s);
    for (int id = 0; id < n_identities; ++id) {
      for (int k = 0; k < n_per_identity; ++k) {
        const std::uint64_t sample_key =
            mix_seed(static_cast<std::uint64_t>(id) << 32 | static_cast<std::uint64_t>(k), "sample");
        SampleRecord rec;
        rec.pixels = apply_style(render_identity(specs[id], mix_seed(style_jitter, sample_key)),
                                 style, mix_seed(style_noise, sample_key));
        rec.label = id;
        rec.domain = style.name;
        rec.sample_index = k;
        rec.spec_seed = specs[id].seed;
        split.add(std::move(rec));
      }
    }
    out.emplace(style.name, std::move(split));
  }
  return out;
}

losses::RelationMatrix build_relation_matrix(const DatasetSplit& split,
                                             const std::vector<int>& indices) {
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (int i : indices) labels.push_back(split.label_of(i));
  return losses::RelationMatrix::from_labels(labels);
}

void write_pgm(const std::filesystem::path& path, const std::vector<double>& pixels,
               int width, int height) {
  if (pixels.size() != static_cast<std::size_t>(width) * height) {
    throw std::invalid_argument("write_pgm: pixel count does not match " +
                                std::to_string(width) + "x" + std::to_string(height));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm: cannot open " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  for (double v : pixels) {
    const long q = std::lround((clip(v) + 1.0) * 127.5);
    out.put(static_cast<char>(std::clamp(q, 0L, 255L)));
  }
  if (!out) throw std::runtime_error("write_pgm: write failed for " + path.string());
}

namespace {

int next_pgm_token(std::istream& in) {
  // Skips whitespace and # comments, then reads one non-negative integer.
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    }
    c = in.get();
  }
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw std::runtime_error("malformed PGM header");
  return value;
}

}  // namespace

std::vector<double> read_pgm(const std::filesystem::path& path, int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pgm: cannot open " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '5') {
    throw std::runtime_error("read_pgm: " + path.string() + " is not a binary (P5) PGM");
  }
  try {
    width = next_pgm_token(in);
    height = next_pgm_token(in);
    const int maxval = next_pgm_token(in);
    if (maxval != 255) {
      throw std::runtime_error("read_pgm: " + path.string() + " must use maxval 255");
    }
  } catch (const std::runtime_error&) {
    throw std::runtime_error("read_pgm: malformed header in " + path.string());
  }
  std::vector<double> pixels(static_cast<std::size_t>(width) * height);
  std::vector<unsigned char> raw(pixels.size());
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw std::runtime_error("read_pgm: truncated pixel data in " + path.string());
  }
  for (std::size_t i = 0; i < raw.size(); ++i) pixels[i] = raw[i] / 127.5 - 1.0;
  return pixels;
}

std::vector<double> resize_area(const std::vector<double>& pixels, int width, int height,
                                int out_width, int out_height) {
  if (pixels.size() != static_cast<std::size_t>(width) * height) {
    throw std::invalid_argument("resize_area: pixel count does not match declared size");
  }
  std::vector<double> out(static_cast<std::size_t>(out_width) * out_height, 0.0);
  const double sx = static_cast<double>(width) / out_width;
  const double sy = static_cast<double>(height) / out_height;
  for (int oy = 0; oy < out_height; ++oy) {
    const double y0 = oy * sy, y1 = (oy + 1) * sy;
    for (int ox = 0; ox < out_width; ++ox) {
      const double x0 = ox * sx, x1 = (ox + 1) * sx;
      double acc = 0.0;
      for (int iy = static_cast<int>(std::floor(y0)); iy < static_cast<int>(std::ceil(y1)); ++iy) {
        const double wy = std::min<double>(y1, iy + 1) - std::max<double>(y0, iy);
        for (int ix = static_cast<int>(std::floor(x0)); ix < static_cast<int>(std::ceil(x1)); ++ix) {
          const double wx = std::min<double>(x1, ix + 1) - std::max<double>(x0, ix);
          acc += wx * wy * pixels[static_cast<std::size_t>(iy) * width + ix];
        }
      }
      out[static_cast<std::size_t>(oy) * out_width + ox] = acc / (sx * sy);
    }
  }
  return out;
}

namespace {

std::vector<double> read_png_gray(const std::filesystem::path& path, int& width, int& height) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw std::runtime_error("read_png: cannot open " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<unsigned char> raw(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raw.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("read_png: failed reading " + path.string() + ": " + msg);
  }
  width = static_cast<int>(image.width);
  height = static_cast<int>(image.height);
  std::vector<double> pixels(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) pixels[i] = raw[i] / 127.5 - 1.0;
  return pixels;
}

bool parse_label_index(const std::string& stem, int& label, int& index) {
  const auto underscore = stem.find('_');
  if (underscore == std::string::npos || underscore == 0 || underscore + 1 >= stem.size()) {
    return false;
  }
  const std::string a = stem.substr(0, underscore);
  const std::string b = stem.substr(underscore + 1);
  auto all_digits = [](const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
      return std::isdigit(c);
    });
  };
  if (!all_digits(a) || !all_digits(b)) return false;
  label = std::stoi(a);
  index = std::stoi(b);
  return true;
}

}  // namespace

DatasetSplit load_image_folder(const std::filesystem::path& folder, const std::string& domain_tag) {
  if (!std::filesystem::is_directory(folder)) {
    throw std::runtime_error("load_image_folder: " + folder.string() + " is not a directory");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(folder)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  DatasetSplit split(DatasetSplit::Role::source, domain_tag);
  for (const auto& path : files) {
    const std::string ext = path.extension().string();
    if (ext != ".pgm" && ext != ".png") continue;
    int label = 0, index = 0;
    if (!parse_label_index(path.stem().string(), label, index)) {
      std::fprintf(stderr, "warning: skipping %s, expected <label>_<index>%s\n",
                   path.string().c_str(), ext.c_str());
      continue;
    }
    int w = 0, h = 0;
    std::vector<double> pixels =
        ext == ".pgm" ? read_pgm(path, w, h) : read_png_gray(path, w, h);
    SampleRecord rec;
    rec.pixels = (w == kImageSize && h == kImageSize)
                     ? std::move(pixels)
                     : resize_area(pixels, w, h, kImageSize, kImageSize);
    for (double& v : rec.pixels) v = clip(v);
    rec.label = label;
    rec.domain = domain_tag;
    rec.sample_index = index;
    split.add(std::move(rec));
  }
  if (split.size() == 0) {
    std::fprintf(stderr, "warning: no usable images found in %s\n", folder.string().c_str());
  }
  return split;
}

}  // namespace jpfa::synth
