#pragma once

#include "anatomy_warp/volume.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace anatomy_warp {

/// Sorted linear voxel indices of one object.
using VoxelSet = std::vector<std::int64_t>;

struct DetectedObject {
  VoxelSet voxels;
  double confidence = 0.0;
};

enum class Connectivity { faces = 6, edges = 18, corners = 26 };

struct CaseResult {
  std::string case_id;
  double patient_score = 0.0;  // max confidence over predicted objects, 0 if none
  bool patient_label = false;
  std::vector<DetectedObject> pred_objects;
  std::vector<VoxelSet> gt_objects;
};

/// Threshold `prob >= threshold`, then connected components. Each object's
/// confidence is the largest probability inside it. Objects come out in
/// scan order of their first voxel.
std::vector<DetectedObject> extract_objects(const ScalarVolume& prob, double threshold = 0.5,
                                            Connectivity connectivity = Connectivity::corners);

/// Connected regions of equal non-zero label.
std::vector<VoxelSet> extract_label_objects(const LabelVolume& labels,
                                            Connectivity connectivity = Connectivity::corners);

double intersection_over_union(const VoxelSet& a, const VoxelSet& b);

struct MatchPair {
  std::size_t pred = 0;
  std::size_t gt = 0;
  double iou = 0.0;
};

struct MatchOutcome {
  std::int64_t true_positives = 0;
  std::int64_t false_positives = 0;
  std::int64_t false_negatives = 0;
  std::vector<MatchPair> pairs;
};

/// Greedy one-to-one matching by descending IoU among pairs with
/// IoU >= threshold; ties go to higher confidence, then lower pred index,
/// then lower gt index.
MatchOutcome match_objects(std::span<const DetectedObject> pred, std::span<const VoxelSet> gt,
                           double iou_threshold = 0.1);

CaseResult make_case_result(std::string case_id, const ScalarVolume& prob,
                            const LabelVolume& gt_labels, std::optional<bool> patient_label,
                            double prob_threshold = 0.5,
                            Connectivity connectivity = Connectivity::corners);

struct FrocPoint {
  double threshold = std::numeric_limits<double>::infinity();
  double fp_per_scan = 0.0;
  double sensitivity = 0.0;
  std::int64_t true_positives = 0;
  std::int64_t false_positives = 0;
};

struct FrocCurve {
  /// One point per cut, from +inf down through every distinct confidence.
  std::vector<FrocPoint> points;
  std::int64_t total_lesions = 0;
  std::size_t case_count = 0;
};

FrocCurve froc(std::span<const CaseResult> cases, double iou_threshold = 0.1);

struct FrocOperatingPoint {
  double sensitivity = 0.0;
  std::int64_t detected = 0;
  std::int64_t total = 0;
  double threshold = std::numeric_limits<double>::infinity();
};

/// Conservative step read-out: best curve point with FP/scan <= target.
FrocOperatingPoint sensitivity_at_fp(const FrocCurve& curve, double fp_per_scan = 0.32);

/// Area under the FROC step function over [0, max_fp] divided by max_fp.
double froc_normalized_area(const FrocCurve& curve, double max_fp = 1.0);

struct RocPoint {
  double threshold = std::numeric_limits<double>::infinity();
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  std::vector<RocPoint> points;
  double auc = 0.0;
  double sensitivity_floor = 0.0;
  double pauroc_raw = 0.0;  // area above the floor
  double pauroc = 0.0;      // raw / (1 - floor); 1.0 for a perfect classifier
};

/// Empirical ROC (tied scores form one step) and the partial area of the
/// region with TPR >= floor.
RocResult roc_and_pauroc(std::span<const double> scores, std::span<const int> labels,
                         double sensitivity_floor = 0.7875);

struct F1Result {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double threshold = 0.0;
};

/// F1 at the highest score threshold whose sensitivity reaches the target.
F1Result f1_at_sensitivity(std::span<const double> scores, std::span<const int> labels,
                           double target_sensitivity);

/// Metric evaluated on a (resampled) list of cases. Returns NaN when the
/// metric is undefined for that list (e.g. only one patient class).
using CaseMetric = std::function<double(std::span<const CaseResult>)>;

struct ArmSummary {
  double mean = 0.0;
  double std = 0.0;
};

struct BootstrapComparison {
  ArmSummary arm_a;
  ArmSummary arm_b;
  double mean_difference = 0.0;  // b - a
  double std_difference = 0.0;
  double t_statistic = 0.0;
  double p_value = 1.0;             // two-sided t-test on replicate differences
  double p_value_percentile = 1.0;  // two-sided percentile test
  std::size_t replications = 0;
  /// Replicates dropped because either arm's metric was undefined.
  std::size_t skipped_replications = 0;
};

/// Paired bootstrap over explicit resamples (each a list of case positions).
/// Arm b is aligned to arm a by case id. Statistics use the replicates
/// where both arms are defined.
BootstrapComparison bootstrap_compare_resamples(const CaseMetric& metric,
                                                std::span<const CaseResult> cases_a,
                                                std::span<const CaseResult> cases_b,
                                                const std::vector<std::vector<std::size_t>>& resamples,
                                                std::size_t workers = 1);

/// Paired bootstrap with `replications` case resamples drawn with
/// replacement; replicate r uses its own stream derived from `seed`.
BootstrapComparison bootstrap_compare(const CaseMetric& metric, std::span<const CaseResult> cases_a,
                                      std::span<const CaseResult> cases_b,
                                      std::size_t replications = 1000, std::uint64_t seed = 0,
                                      std::size_t workers = 1);

std::vector<std::vector<std::size_t>> draw_bootstrap_resamples(std::size_t case_count,
                                                               std::size_t replications,
                                                               std::uint64_t seed);

struct MetricSettings {
  double prob_threshold = 0.5;
  double iou_threshold = 0.1;
  double sensitivity_floor = 0.7875;
  double f1_target_sensitivity = 0.875;
  double fp_per_scan = 0.32;
  std::size_t bootstrap_replications = 1000;
  Connectivity connectivity = Connectivity::corners;
};

namespace metric {
CaseMetric pauroc(double sensitivity_floor);
CaseMetric f1(double target_sensitivity);
CaseMetric detections(double fp_per_scan, double iou_threshold);
CaseMetric froc_sensitivity(double fp_per_scan, double iou_threshold);
}  // namespace metric

}  // namespace anatomy_warp
