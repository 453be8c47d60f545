#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace jpfa::eval {

// Binary codes plus identity labels for one collection of items (probe set
// or gallery).
struct BinaryCodeSet {
  std::vector<std::vector<std::uint8_t>> codes;
  std::vector<int> labels;
};

// Genuine (same identity) and imposter (different identity) match distances.
struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> imposter;
};

struct RocPoint {
  double threshold = 0.0;
  double far = 0.0;  // fraction of imposter pairs accepted (distance <= threshold)
  double frr = 0.0;  // fraction of genuine pairs rejected (distance > threshold)
};

struct EerResult {
  double eer = 0.0;
  std::vector<RocPoint> roc;  // leading below-minimum point, then one per distinct distance
};

struct EvalReport {
  double rank1 = 0.0;
  double eer = 1.0;
  std::string variant_rank1;  // variant attaining the reported rank-1 accuracy
  std::string variant_eer;    // variant attaining the reported EER
  std::vector<RocPoint> roc;  // ROC of the best-EER variant
  std::vector<std::pair<std::string, double>> rank1_by_variant;
  std::vector<std::pair<std::string, double>> eer_by_variant;
};

// bit k = 1 iff code[k] >= 0 (zero counts as positive).
std::vector<std::uint8_t> binarize(const std::vector<double>& code);

// Count of differing positions; lengths must match.
int hamming(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

// Fraction of probes whose Hamming-nearest gallery item (ties resolved to
// the lowest gallery index) carries the probe's label.
double identify(const BinaryCodeSet& probes, const BinaryCodeSet& gallery);

// Scores every probe x gallery pair by Hamming distance, partitioned into
// genuine and imposter by label equality. Probe labels with no same-label
// gallery item contribute no genuine scores; a warning is printed for them.
ScoreSet verification_scores(const BinaryCodeSet& probes, const BinaryCodeSet& gallery);

// Threshold sweep over the sorted distinct distances: accept iff distance
// <= threshold. The equal-error rate is taken at the FAR = FRR crossing with
// linear interpolation between adjacent thresholds; the interpolation is
// computed on pair counts in integer arithmetic, so rank-identical score
// sets produce bit-identical results and identical genuine/imposter
// distributions give exactly 0.5.
EerResult compute_eer(const ScoreSet& scores);

// Evaluates all four (probe extractor, gallery) pairings in the fixed order
// source-head x source gallery, fake-head x fake gallery, source-head x fake
// gallery, fake-head x source gallery; reports the best rank-1 accuracy and
// the lowest EER, first-by-order on ties. Both probe sets must carry the
// same labels (the same underlying items).
EvalReport best_of_variants(const BinaryCodeSet& probes_source_head,
                            const BinaryCodeSet& probes_fake_head,
                            const BinaryCodeSet& gallery_source,
                            const BinaryCodeSet& gallery_fake);

std::string report_to_json(const EvalReport& report, const std::string& config_checksum);
std::string roc_to_csv(const std::vector<RocPoint>& roc);

}  // namespace jpfa::eval
