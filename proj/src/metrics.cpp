#include "anatomy_warp/metrics.hpp"

#include "anatomy_warp/parallel.hpp"
#include "anatomy_warp/rng.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace anatomy_warp {
namespace {

std::vector<std::array<int, 3>> neighbour_offsets(Connectivity c) {
  std::vector<std::array<int, 3>> out;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int order = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (order == 0) continue;
        if (c == Connectivity::faces && order > 1) continue;
        if (c == Connectivity::edges && order > 2) continue;
        out.push_back({dx, dy, dz});
      }
  return out;
}

// Flood fill over voxels where `in(i)` holds, joining neighbours j of i
// when `joins(i, j)`.
template <typename In, typename Joins>
std::vector<VoxelSet> components(const VolumeGeometry& g, Connectivity c, In in, Joins joins) {
  const auto offsets = neighbour_offsets(c);
  const std::int64_t n = g.voxel_count();
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::vector<VoxelSet> out;
  std::vector<std::int64_t> stack;
  const auto [nx, ny, nz] = g.shape;
  for (std::int64_t start = 0; start < n; ++start) {
    if (seen[start] || !in(start)) continue;
    VoxelSet obj;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::int64_t i = stack.back();
      stack.pop_back();
      obj.push_back(i);
      const std::int64_t x = i % nx, y = (i / nx) % ny, z = i / (nx * ny);
      for (const auto& o : offsets) {
        const std::int64_t qx = x + o[0], qy = y + o[1], qz = z + o[2];
        if (!g.contains(qx, qy, qz)) continue;
        const std::int64_t j = g.index(qx, qy, qz);
        if (seen[j] || !in(j) || !joins(i, j)) continue;
        seen[j] = 1;
        stack.push_back(j);
      }
    }
    std::sort(obj.begin(), obj.end());
    out.push_back(std::move(obj));
  }
  return out;
}

void require_binary_labels(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("scores and labels differ in length");
  std::size_t pos = 0;
  for (int l : labels) pos += l != 0;
  if (pos == 0 || pos == labels.size())
    throw std::invalid_argument("both positive and negative cases are required");
  for (double s : scores)
    if (!std::isfinite(s)) throw std::invalid_argument("scores must be finite");
}

// Score indices sorted by descending score.
std::vector<std::size_t> order_by_score(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

std::vector<DetectedObject> extract_objects(const ScalarVolume& prob, double threshold,
                                            Connectivity connectivity) {
  const auto& v = prob.values();
  if (!v.allFinite() || (v.size() > 0 && (v.minCoeff() < 0.0 || v.maxCoeff() > 1.0)))
    throw std::invalid_argument("extract_objects: probabilities must lie in [0, 1]");
  auto sets = components(
      prob.geometry(), connectivity, [&](std::int64_t i) { return v[i] >= threshold; },
      [](std::int64_t, std::int64_t) { return true; });
  std::vector<DetectedObject> out;
  out.reserve(sets.size());
  for (auto& s : sets) {
    double conf = 0.0;
    for (auto i : s) conf = std::max(conf, v[i]);
    out.push_back({std::move(s), conf});
  }
  return out;
}

std::vector<VoxelSet> extract_label_objects(const LabelVolume& labels, Connectivity connectivity) {
  const auto& v = labels.values();
  return components(
      labels.geometry(), connectivity, [&](std::int64_t i) { return v[i] != 0; },
      [&](std::int64_t i, std::int64_t j) { return v[i] == v[j]; });
}

double intersection_over_union(const VoxelSet& a, const VoxelSet& b) {
  std::size_t inter = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib)
      ++ia;
    else if (*ib < *ia)
      ++ib;
    else {
      ++inter;
      ++ia;
      ++ib;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

struct Candidate {
  std::size_t pred;
  std::size_t gt;
  double iou;
  double confidence;
};

bool candidate_before(const Candidate& a, const Candidate& b) {
  if (a.iou != b.iou) return a.iou > b.iou;
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.pred != b.pred) return a.pred < b.pred;
  return a.gt < b.gt;
}

// Candidates must already be sorted with candidate_before. `alive` masks
// predictions that survive the current confidence cut.
MatchOutcome greedy_match(const std::vector<Candidate>& sorted, std::size_t n_pred,
                          std::size_t n_gt, const std::vector<char>& alive) {
  MatchOutcome m;
  std::vector<char> pred_used(n_pred, 0), gt_used(n_gt, 0);
  for (const auto& c : sorted) {
    if (!alive[c.pred] || pred_used[c.pred] || gt_used[c.gt]) continue;
    pred_used[c.pred] = gt_used[c.gt] = 1;
    m.pairs.push_back({c.pred, c.gt, c.iou});
  }
  std::int64_t alive_count = 0;
  for (char a : alive) alive_count += a;
  m.true_positives = static_cast<std::int64_t>(m.pairs.size());
  m.false_positives = alive_count - m.true_positives;
  m.false_negatives = static_cast<std::int64_t>(n_gt) - m.true_positives;
  return m;
}

std::vector<Candidate> candidates(std::span<const DetectedObject> pred, std::span<const VoxelSet> gt,
                                  double iou_threshold) {
  std::vector<Candidate> out;
  for (std::size_t p = 0; p < pred.size(); ++p)
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double iou = intersection_over_union(pred[p].voxels, gt[g]);
      if (iou > 0.0 && iou >= iou_threshold) out.push_back({p, g, iou, pred[p].confidence});
    }
  std::sort(out.begin(), out.end(), candidate_before);
  return out;
}

}  // namespace

MatchOutcome match_objects(std::span<const DetectedObject> pred, std::span<const VoxelSet> gt,
                           double iou_threshold) {
  return greedy_match(candidates(pred, gt, iou_threshold), pred.size(), gt.size(),
                      std::vector<char>(pred.size(), 1));
}

CaseResult make_case_result(std::string case_id, const ScalarVolume& prob,
                            const LabelVolume& gt_labels, std::optional<bool> patient_label,
                            double prob_threshold, Connectivity connectivity) {
  require_same_geometry(prob.geometry(), gt_labels.geometry(), "case " + case_id);
  CaseResult r;
  r.case_id = std::move(case_id);
  r.pred_objects = extract_objects(prob, prob_threshold, connectivity);
  r.gt_objects = extract_label_objects(gt_labels, connectivity);
  for (const auto& o : r.pred_objects) r.patient_score = std::max(r.patient_score, o.confidence);
  r.patient_label = patient_label.value_or(!r.gt_objects.empty());
  return r;
}

FrocCurve froc(std::span<const CaseResult> cases, double iou_threshold) {
  if (cases.empty()) throw std::invalid_argument("froc: no cases");
  FrocCurve curve;
  curve.case_count = cases.size();
  std::vector<std::vector<Candidate>> cands;
  std::vector<double> confidences;
  for (const auto& c : cases) {
    curve.total_lesions += static_cast<std::int64_t>(c.gt_objects.size());
    cands.push_back(candidates(c.pred_objects, c.gt_objects, iou_threshold));
    for (const auto& o : c.pred_objects) confidences.push_back(o.confidence);
  }
  if (curve.total_lesions == 0)
    throw std::invalid_argument("froc: no ground-truth lesions, sensitivity undefined");

  std::sort(confidences.begin(), confidences.end(), std::greater<>());
  confidences.erase(std::unique(confidences.begin(), confidences.end()), confidences.end());

  std::vector<double> cuts{std::numeric_limits<double>::infinity()};
  cuts.insert(cuts.end(), confidences.begin(), confidences.end());
  const double n_cases = static_cast<double>(cases.size());
  for (double cut : cuts) {
    FrocPoint pt;
    pt.threshold = cut;
    for (std::size_t k = 0; k < cases.size(); ++k) {
      const auto& c = cases[k];
      std::vector<char> alive(c.pred_objects.size());
      for (std::size_t p = 0; p < alive.size(); ++p) alive[p] = c.pred_objects[p].confidence >= cut;
      const auto m = greedy_match(cands[k], c.pred_objects.size(), c.gt_objects.size(), alive);
      pt.true_positives += m.true_positives;
      pt.false_positives += m.false_positives;
    }
    pt.fp_per_scan = static_cast<double>(pt.false_positives) / n_cases;
    pt.sensitivity =
        static_cast<double>(pt.true_positives) / static_cast<double>(curve.total_lesions);
    curve.points.push_back(pt);
  }
  return curve;
}

FrocOperatingPoint sensitivity_at_fp(const FrocCurve& curve, double fp_per_scan) {
  FrocOperatingPoint op;
  op.total = curve.total_lesions;
  bool found = false;
  for (const auto& p : curve.points) {
    if (p.fp_per_scan > fp_per_scan) continue;
    if (!found || p.sensitivity > op.sensitivity) {
      op.sensitivity = p.sensitivity;
      op.detected = p.true_positives;
      op.threshold = p.threshold;
      found = true;
    }
  }
  return op;
}

double froc_normalized_area(const FrocCurve& curve, double max_fp) {
  if (!(max_fp > 0.0)) throw std::invalid_argument("froc area: max_fp must be > 0");
  // sens(fp) = best sensitivity among points with FP/scan <= fp.
  std::map<double, double> best;
  for (const auto& p : curve.points)
    if (p.fp_per_scan <= max_fp) best[p.fp_per_scan] = std::max(best[p.fp_per_scan], p.sensitivity);
  double area = 0.0, level = 0.0, prev = 0.0;
  for (const auto& [fp, sens] : best) {
    area += level * (fp - prev);
    level = std::max(level, sens);
    prev = fp;
  }
  area += level * (max_fp - prev);
  return area / max_fp;
}

RocResult roc_and_pauroc(std::span<const double> scores, std::span<const int> labels,
                         double sensitivity_floor) {
  require_binary_labels(scores, labels);
  if (!(sensitivity_floor >= 0.0 && sensitivity_floor < 1.0))
    throw std::invalid_argument("sensitivity floor must lie in [0, 1)");
  double pos = 0, neg = 0;
  for (int l : labels) (l != 0 ? pos : neg) += 1;

  RocResult r;
  r.sensitivity_floor = sensitivity_floor;
  r.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  const auto idx = order_by_score(scores);
  double tp = 0, fp = 0;
  for (std::size_t k = 0; k < idx.size();) {
    const double s = scores[idx[k]];
    for (; k < idx.size() && scores[idx[k]] == s; ++k) (labels[idx[k]] != 0 ? tp : fp) += 1;
    r.points.push_back({s, fp / neg, tp / pos});
  }

  for (std::size_t k = 1; k < r.points.size(); ++k) {
    const auto& a = r.points[k - 1];
    const auto& b = r.points[k];
    const double w = b.fpr - a.fpr;
    r.auc += w * 0.5 * (a.tpr + b.tpr);
    if (w == 0.0 || b.tpr <= sensitivity_floor) continue;
    if (a.tpr >= sensitivity_floor) {
      r.pauroc_raw += w * (0.5 * (a.tpr + b.tpr) - sensitivity_floor);
    } else {
      const double cross = a.fpr + (sensitivity_floor - a.tpr) / (b.tpr - a.tpr) * w;
      r.pauroc_raw += 0.5 * (b.fpr - cross) * (b.tpr - sensitivity_floor);
    }
  }
  r.pauroc = r.pauroc_raw / (1.0 - sensitivity_floor);
  return r;
}

F1Result f1_at_sensitivity(std::span<const double> scores, std::span<const int> labels,
                           double target_sensitivity) {
  require_binary_labels(scores, labels);
  double pos = 0;
  for (int l : labels) pos += l != 0;
  const auto idx = order_by_score(scores);
  double tp = 0, fp = 0;
  F1Result r;
  for (std::size_t k = 0; k < idx.size();) {
    const double s = scores[idx[k]];
    for (; k < idx.size() && scores[idx[k]] == s; ++k) (labels[idx[k]] != 0 ? tp : fp) += 1;
    const double recall = tp / pos;
    if (recall >= target_sensitivity || k == idx.size()) {
      r.threshold = s;
      r.recall = recall;
      r.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
      r.f1 = r.precision + r.recall > 0
                 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                 : 0.0;
      break;
    }
  }
  return r;
}

std::vector<std::vector<std::size_t>> draw_bootstrap_resamples(std::size_t case_count,
                                                               std::size_t replications,
                                                               std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> out(replications);
  for (std::size_t r = 0; r < replications; ++r) {
    Rng rng = derive_stream(seed, r);
    out[r].resize(case_count);
    for (auto& i : out[r]) i = static_cast<std::size_t>(uniform_index(rng, case_count));
  }
  return out;
}

BootstrapComparison bootstrap_compare_resamples(const CaseMetric& metric,
                                                std::span<const CaseResult> cases_a,
                                                std::span<const CaseResult> cases_b,
                                                const std::vector<std::vector<std::size_t>>& resamples,
                                                std::size_t workers) {
  if (cases_a.size() != cases_b.size())
    throw std::invalid_argument("bootstrap: arms have different case counts (" +
                                std::to_string(cases_a.size()) + " vs " +
                                std::to_string(cases_b.size()) + ")");
  if (resamples.empty()) throw std::invalid_argument("bootstrap: need >= 1 replication");
  std::map<std::string, std::size_t> b_index;
  for (std::size_t i = 0; i < cases_b.size(); ++i)
    if (!b_index.emplace(cases_b[i].case_id, i).second)
      throw std::invalid_argument("bootstrap: duplicate case id " + cases_b[i].case_id);
  std::vector<std::size_t> b_for_a(cases_a.size());
  for (std::size_t i = 0; i < cases_a.size(); ++i) {
    auto it = b_index.find(cases_a[i].case_id);
    if (it == b_index.end())
      throw std::invalid_argument("bootstrap: case id " + cases_a[i].case_id +
                                  " missing from second arm");
    b_for_a[i] = it->second;
  }

  const std::size_t total = resamples.size();
  std::vector<double> va(total), vb(total);
  parallel_for(total, workers, [&](std::size_t r) {
    std::vector<CaseResult> ra, rb;
    ra.reserve(resamples[r].size());
    rb.reserve(resamples[r].size());
    for (std::size_t i : resamples[r]) {
      ra.push_back(cases_a[i]);
      rb.push_back(cases_b[b_for_a[i]]);
    }
    va[r] = metric(ra);
    vb[r] = metric(rb);
  });

  BootstrapComparison out;
  std::vector<double> fa, fb, diff;
  for (std::size_t r = 0; r < total; ++r) {
    if (!std::isfinite(va[r]) || !std::isfinite(vb[r])) continue;
    fa.push_back(va[r]);
    fb.push_back(vb[r]);
    diff.push_back(vb[r] - va[r]);
  }
  const std::size_t reps = diff.size();
  if (reps == 0) throw std::invalid_argument("bootstrap: metric undefined on every replicate");
  out.replications = reps;
  out.skipped_replications = total - reps;
  out.arm_a.mean = mean_of(fa);
  out.arm_a.std = sample_std(fa, out.arm_a.mean);
  out.arm_b.mean = mean_of(fb);
  out.arm_b.std = sample_std(fb, out.arm_b.mean);
  out.mean_difference = mean_of(diff);
  out.std_difference = sample_std(diff, out.mean_difference);

  if (reps < 2 || out.std_difference == 0.0) {
    // Degenerate: all replicate differences equal.
    out.t_statistic = 0.0;
    out.p_value = (reps >= 2 && out.mean_difference != 0.0) ? 0.0 : 1.0;
  } else {
    out.t_statistic = out.mean_difference / (out.std_difference / std::sqrt(double(reps)));
    boost::math::students_t dist(static_cast<double>(reps - 1));
    out.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(
                                          dist, std::abs(out.t_statistic))));
  }
  std::size_t le = 0, ge = 0;
  for (double d : diff) {
    le += d <= 0.0;
    ge += d >= 0.0;
  }
  out.p_value_percentile =
      std::min(1.0, 2.0 * static_cast<double>(std::min(le, ge)) / static_cast<double>(reps));
  return out;
}

BootstrapComparison bootstrap_compare(const CaseMetric& metric, std::span<const CaseResult> cases_a,
                                      std::span<const CaseResult> cases_b, std::size_t replications,
                                      std::uint64_t seed, std::size_t workers) {
  return bootstrap_compare_resamples(metric, cases_a, cases_b,
                                     draw_bootstrap_resamples(cases_a.size(), replications, seed),
                                     workers);
}

namespace metric {
namespace {
constexpr double undefined = std::numeric_limits<double>::quiet_NaN();

// False when only one patient class is present.
bool patient_arrays(std::span<const CaseResult> cases, std::vector<double>& s, std::vector<int>& l) {
  bool pos = false, neg = false;
  for (const auto& c : cases) {
    s.push_back(c.patient_score);
    l.push_back(c.patient_label ? 1 : 0);
    (c.patient_label ? pos : neg) = true;
  }
  return pos && neg;
}

bool has_lesions(std::span<const CaseResult> cases) {
  for (const auto& c : cases)
    if (!c.gt_objects.empty()) return true;
  return false;
}
}  // namespace

CaseMetric pauroc(double floor) {
  return [floor](std::span<const CaseResult> cases) {
    std::vector<double> s;
    std::vector<int> l;
    if (!patient_arrays(cases, s, l)) return undefined;
    return roc_and_pauroc(s, l, floor).pauroc;
  };
}

CaseMetric f1(double target) {
  return [target](std::span<const CaseResult> cases) {
    std::vector<double> s;
    std::vector<int> l;
    if (!patient_arrays(cases, s, l)) return undefined;
    return f1_at_sensitivity(s, l, target).f1;
  };
}

CaseMetric detections(double fp_per_scan, double iou_threshold) {
  return [=](std::span<const CaseResult> cases) {
    if (!has_lesions(cases)) return undefined;
    return static_cast<double>(sensitivity_at_fp(froc(cases, iou_threshold), fp_per_scan).detected);
  };
}

CaseMetric froc_sensitivity(double fp_per_scan, double iou_threshold) {
  return [=](std::span<const CaseResult> cases) {
    if (!has_lesions(cases)) return undefined;
    return sensitivity_at_fp(froc(cases, iou_threshold), fp_per_scan).sensitivity;
  };
}
}  // namespace metric

}  // namespace anatomy_warp
