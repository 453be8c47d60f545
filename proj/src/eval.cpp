#include "jpfa/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace jpfa::eval {

std::vector<std::uint8_t> binarize(const std::vector<double>& code) {
  std::vector<std::uint8_t> bits(code.size());
  for (std::size_t i = 0; i < code.size(); ++i) bits[i] = code[i] >= 0.0 ? 1 : 0;
  return bits;
}

int hamming(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("hamming: code lengths differ, " + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()));
  }
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

namespace {

void require_consistent(const BinaryCodeSet& s, const char* role) {
  if (s.codes.size() != s.labels.size()) {
    throw std::invalid_argument(std::string(role) + ": " + std::to_string(s.codes.size()) +
                                " codes but " + std::to_string(s.labels.size()) + " labels");
  }
}

}  // namespace

double identify(const BinaryCodeSet& probes, const BinaryCodeSet& gallery) {
  require_consistent(probes, "identify probes");
  require_consistent(gallery, "identify gallery");
  if (gallery.codes.empty()) throw std::invalid_argument("identify: gallery is empty");
  if (probes.codes.empty()) return 0.0;
  int correct = 0;
  for (std::size_t p = 0; p < probes.codes.size(); ++p) {
    int best = hamming(probes.codes[p], gallery.codes[0]);
    std::size_t best_idx = 0;
    for (std::size_t g = 1; g < gallery.codes.size(); ++g) {
      const int d = hamming(probes.codes[p], gallery.codes[g]);
      if (d < best) {
        best = d;
        best_idx = g;
      }
    }
    correct += gallery.labels[best_idx] == probes.labels[p];
  }
  return static_cast<double>(correct) / static_cast<double>(probes.codes.size());
}

ScoreSet verification_scores(const BinaryCodeSet& probes, const BinaryCodeSet& gallery) {
  require_consistent(probes, "verification probes");
  require_consistent(gallery, "verification gallery");
  if (gallery.codes.empty()) throw std::invalid_argument("verification_scores: gallery is empty");
  ScoreSet scores;
  std::set<int> genuineless;
  for (std::size_t p = 0; p < probes.codes.size(); ++p) {
    bool any_genuine = false;
    for (std::size_t g = 0; g < gallery.codes.size(); ++g) {
      const double d = hamming(probes.codes[p], gallery.codes[g]);
      if (probes.labels[p] == gallery.labels[g]) {
        scores.genuine.push_back(d);
        any_genuine = true;
      } else {
        scores.imposter.push_back(d);
      }
    }
    if (!any_genuine) genuineless.insert(probes.labels[p]);
  }
  for (int label : genuineless) {
    std::fprintf(stderr, "warning: probe label %d has no same-label gallery item, "
                 "no genuine scores for it\n", label);
  }
  return scores;
}

EerResult compute_eer(const ScoreSet& scores) {
  if (scores.genuine.empty() || scores.imposter.empty()) {
    throw std::invalid_argument("compute_eer: both genuine and imposter lists must be non-empty");
  }
  std::vector<double> gen = scores.genuine;
  std::vector<double> imp = scores.imposter;
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());
  const long long n = static_cast<long long>(gen.size());
  const long long m = static_cast<long long>(imp.size());

  std::vector<double> thresholds;
  thresholds.reserve(gen.size() + imp.size());
  std::merge(gen.begin(), gen.end(), imp.begin(), imp.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  EerResult result;
  result.roc.reserve(thresholds.size() + 1);
  // Leading point: threshold below every observed distance accepts nothing.
  result.roc.push_back({thresholds.front() - 1.0, 0.0, 1.0});

  // a = imposter pairs accepted, g = genuine pairs rejected, at each
  // threshold. The crossing search and interpolation run on these integer
  // counts so results depend only on ranks, never on distance magnitudes.
  long long prev_a = 0, prev_g = n;
  bool found = false;
  for (double t : thresholds) {
    const long long a = std::upper_bound(imp.begin(), imp.end(), t) - imp.begin();
    const long long g = n - (std::upper_bound(gen.begin(), gen.end(), t) - gen.begin());
    result.roc.push_back({t, static_cast<double>(a) / static_cast<double>(m),
                          static_cast<double>(g) / static_cast<double>(n)});
    if (!found && a * n >= g * m) {
      found = true;
      if (a * n == g * m) {
        result.eer = static_cast<double>(a) / static_cast<double>(m);
      } else {
        // FAR crossed FRR strictly inside the previous segment. With
        // num = FRR0 - FAR0 and den = dFAR - dFRR (both scaled by n*m),
        // the crossing sits at fraction num/den, where FAR evaluates to
        // (a0 * den + num * da) / (m * den).
        const long long a0 = prev_a, g0 = prev_g;
        const long long num = g0 * m - a0 * n;
        const long long den = n * (a - a0) - m * (g - g0);
        result.eer = static_cast<double>(a0 * den + num * (a - a0)) /
                     static_cast<double>(m * den);
      }
    }
    prev_a = a;
    prev_g = g;
  }
  return result;
}

EvalReport best_of_variants(const BinaryCodeSet& probes_source_head,
                            const BinaryCodeSet& probes_fake_head,
                            const BinaryCodeSet& gallery_source,
                            const BinaryCodeSet& gallery_fake) {
  if (probes_source_head.labels != probes_fake_head.labels) {
    throw std::invalid_argument("best_of_variants: the two probe sets must describe the same items");
  }
  struct Variant {
    const char* name;
    const BinaryCodeSet* probes;
    const BinaryCodeSet* gallery;
  };
  const Variant variants[] = {
      {"source_head_x_source_gallery", &probes_source_head, &gallery_source},
      {"fake_head_x_fake_gallery", &probes_fake_head, &gallery_fake},
      {"source_head_x_fake_gallery", &probes_source_head, &gallery_fake},
      {"fake_head_x_source_gallery", &probes_fake_head, &gallery_source},
  };

  EvalReport report;
  bool first = true;
  for (const Variant& v : variants) {
    const double acc = identify(*v.probes, *v.gallery);
    const EerResult er = compute_eer(verification_scores(*v.probes, *v.gallery));
    report.rank1_by_variant.emplace_back(v.name, acc);
    report.eer_by_variant.emplace_back(v.name, er.eer);
    if (first || acc > report.rank1) {
      report.rank1 = acc;
      report.variant_rank1 = v.name;
    }
    if (first || er.eer < report.eer) {
      report.eer = er.eer;
      report.variant_eer = v.name;
      report.roc = er.roc;
    }
    first = false;
  }
  return report;
}

std::string report_to_json(const EvalReport& report, const std::string& config_checksum) {
  nlohmann::ordered_json j;
  j["rank1_accuracy"] = report.rank1;
  j["eer"] = report.eer;
  j["variant_rank1"] = report.variant_rank1;
  j["variant_eer"] = report.variant_eer;
  j["config_checksum"] = config_checksum;
  nlohmann::ordered_json by_acc = nlohmann::ordered_json::object();
  for (const auto& [name, value] : report.rank1_by_variant) by_acc[name] = value;
  j["rank1_by_variant"] = by_acc;
  nlohmann::ordered_json by_eer = nlohmann::ordered_json::object();
  for (const auto& [name, value] : report.eer_by_variant) by_eer[name] = value;
  j["eer_by_variant"] = by_eer;
  return j.dump(2) + "\n";
}

std::string roc_to_csv(const std::vector<RocPoint>& roc) {
  std::ostringstream os;
  os << "threshold,far,frr\n";
  os.precision(17);
  for (const RocPoint& p : roc) {
    os << p.threshold << ',' << p.far << ',' << p.frr << '\n';
  }
  return os.str();
}

}  // namespace jpfa::eval
