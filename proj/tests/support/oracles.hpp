#pragma once

// Independent reference implementations used only by the tests. They are
// deliberately naive: direct loops, exhaustive enumeration, no shared code
// with the library beyond the data types.

#include "anatomy_warp/metrics.hpp"
#include "anatomy_warp/volume.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <vector>

namespace oracle {

using namespace anatomy_warp;

/// Same-bits comparison (distinguishes -0.0 / +0.0 and NaN payloads).
template <typename T>
bool bit_identical(const Volume<T>& a, const Volume<T>& b) {
  return a.geometry() == b.geometry() &&
         std::memcmp(a.data(), b.data(), sizeof(T) * static_cast<std::size_t>(a.size())) == 0;
}

template <typename T>
bool bit_identical(const MultiChannelVolume<T>& a, const MultiChannelVolume<T>& b) {
  if (a.channel_count() != b.channel_count()) return false;
  for (std::size_t c = 0; c < a.channel_count(); ++c)
    if (!bit_identical(a.channel(c), b.channel(c))) return false;
  return true;
}

/// Raw sampled Gaussian, sum-normalized, radius floor(trunc * sigma).
inline std::vector<double> sampled_gaussian(double sigma, double trunc) {
  const int r = static_cast<int>(std::floor(trunc * sigma));
  std::vector<double> w;
  double s = 0;
  for (int k = -r; k <= r; ++k) {
    w.push_back(std::exp(-double(k) * k / (2 * sigma * sigma)));
    s += w.back();
  }
  for (auto& v : w) v /= s;
  return w;
}

inline std::int64_t mirror(std::int64_t i, std::int64_t n) {
  // Unfold by repeated reflection, d c b a | a b c d.
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

/// Dense 3D convolution with the outer product of three 1D kernels,
/// O(n * kx * ky * kz).
inline ScalarVolume dense_convolve(const ScalarVolume& in, const std::array<std::vector<double>, 3>& k) {
  const auto& g = in.geometry();
  ScalarVolume out(g);
  const int rx = int(k[0].size() / 2), ry = int(k[1].size() / 2), rz = int(k[2].size() / 2);
  for (std::int64_t z = 0; z < g.shape[2]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[0]; ++x) {
        double acc = 0;
        for (int dz = -rz; dz <= rz; ++dz)
          for (int dy = -ry; dy <= ry; ++dy)
            for (int dx = -rx; dx <= rx; ++dx)
              acc += k[0][dx + rx] * k[1][dy + ry] * k[2][dz + rz] *
                     in(mirror(x + dx, g.shape[0]), mirror(y + dy, g.shape[1]),
                        mirror(z + dz, g.shape[2]));
        out(x, y, z) = acc;
      }
  return out;
}

/// Straight 8-corner weighted sum, clamp-to-edge.
template <typename T>
double trilinear(const Volume<T>& v, double x, double y, double z) {
  const auto& s = v.shape();
  x = std::clamp(x, 0.0, double(s[0] - 1));
  y = std::clamp(y, 0.0, double(s[1] - 1));
  z = std::clamp(z, 0.0, double(s[2] - 1));
  const auto x0 = std::int64_t(std::floor(x)), y0 = std::int64_t(std::floor(y)),
             z0 = std::int64_t(std::floor(z));
  double sum = 0;
  for (int c = 0; c < 8; ++c) {
    const std::int64_t xi = x0 + (c & 1), yi = y0 + ((c >> 1) & 1), zi = z0 + ((c >> 2) & 1);
    const double wx = (c & 1) ? x - x0 : 1 - (x - x0);
    const double wy = ((c >> 1) & 1) ? y - y0 : 1 - (y - y0);
    const double wz = ((c >> 2) & 1) ? z - z0 : 1 - (z - z0);
    const double w = wx * wy * wz;
    if (w == 0) continue;
    sum += w * double(v(std::min(xi, s[0] - 1), std::min(yi, s[1] - 1), std::min(zi, s[2] - 1)));
  }
  return sum;
}

/// Connected components by iterative label propagation (min-label
/// relaxation until fixpoint), 26-connectivity.
inline std::vector<std::set<std::int64_t>> components26(const VolumeGeometry& g,
                                                        const std::vector<char>& fg) {
  const std::int64_t n = g.voxel_count();
  std::vector<std::int64_t> lab(n, -1);
  for (std::int64_t i = 0; i < n; ++i)
    if (fg[i]) lab[i] = i;
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::int64_t z = 0; z < g.shape[2]; ++z)
      for (std::int64_t y = 0; y < g.shape[1]; ++y)
        for (std::int64_t x = 0; x < g.shape[0]; ++x) {
          const auto i = g.index(x, y, z);
          if (!fg[i]) continue;
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                if (!g.contains(x + dx, y + dy, z + dz)) continue;
                const auto j = g.index(x + dx, y + dy, z + dz);
                if (fg[j] && lab[j] < lab[i]) {
                  lab[i] = lab[j];
                  changed = true;
                }
              }
        }
  }
  std::map<std::int64_t, std::set<std::int64_t>> groups;
  for (std::int64_t i = 0; i < n; ++i)
    if (fg[i]) groups[lab[i]].insert(i);
  std::vector<std::set<std::int64_t>> out;
  for (auto& [_, s] : groups) out.push_back(s);
  return out;
}

inline double iou(const VoxelSet& a, const VoxelSet& b) {
  std::set<std::int64_t> sa(a.begin(), a.end()), sb(b.begin(), b.end()), u = sa;
  u.insert(sb.begin(), sb.end());
  std::size_t inter = 0;
  for (auto v : sa) inter += sb.count(v);
  return u.empty() ? 0.0 : double(inter) / double(u.size());
}

/// Greedy matching re-derived from the rule: repeatedly take the best
/// remaining admissible pair under (IoU desc, confidence desc, pred asc,
/// gt asc) among unmatched objects.
inline std::int64_t count_matches(const std::vector<DetectedObject>& pred,
                                  const std::vector<VoxelSet>& gt, double thr) {
  std::vector<bool> pu(pred.size()), gu(gt.size());
  std::int64_t tp = 0;
  while (true) {
    int bp = -1, bg = -1;
    double biou = -1;
    for (std::size_t p = 0; p < pred.size(); ++p)
      for (std::size_t q = 0; q < gt.size(); ++q) {
        if (pu[p] || gu[q]) continue;
        const double v = iou(pred[p].voxels, gt[q]);
        if (v <= 0 || v < thr) continue;
        bool better = bp < 0 || v > biou ||
                      (v == biou && (pred[p].confidence > pred[bp].confidence ||
                                     (pred[p].confidence == pred[bp].confidence &&
                                      (int(p) < bp || (int(p) == bp && int(q) < bg)))));
        if (better) {
          bp = int(p);
          bg = int(q);
          biou = v;
        }
      }
    if (bp < 0) break;
    pu[bp] = gu[bg] = true;
    ++tp;
  }
  return tp;
}

struct FrocPt {
  double fp_per_scan, sensitivity;
};

/// FROC by enumerating every cut (one above the max confidence and each
/// distinct confidence), rebuilding the surviving prediction lists.
inline std::vector<FrocPt> froc_enumerate(const std::vector<CaseResult>& cases, double thr) {
  std::set<double, std::greater<>> cuts{std::numeric_limits<double>::infinity()};
  std::int64_t lesions = 0;
  for (const auto& c : cases) {
    lesions += std::int64_t(c.gt_objects.size());
    for (const auto& o : c.pred_objects) cuts.insert(o.confidence);
  }
  std::vector<FrocPt> out;
  for (double cut : cuts) {
    std::int64_t tp = 0, fp = 0;
    for (const auto& c : cases) {
      std::vector<DetectedObject> keep;
      for (const auto& o : c.pred_objects)
        if (o.confidence >= cut) keep.push_back(o);
      const auto m = count_matches(keep, c.gt_objects, thr);
      tp += m;
      fp += std::int64_t(keep.size()) - m;
    }
    out.push_back({double(fp) / double(cases.size()), double(tp) / double(lesions)});
  }
  return out;
}

/// ROC points for every distinct threshold (+inf first) computed by direct
/// counting, then the partial area above `floor` integrated along the TPR
/// axis: integral over t in [floor, 1] of (1 - FPR(t)) dt.
struct RocOracle {
  std::vector<std::pair<double, double>> pts;  // (fpr, tpr)
  double partial = 0;
};

inline RocOracle roc_enumerate(const std::vector<double>& s, const std::vector<int>& l, double floor) {
  std::set<double, std::greater<>> cuts{std::numeric_limits<double>::infinity()};
  cuts.insert(s.begin(), s.end());
  double P = 0, N = 0;
  for (int v : l) (v ? P : N) += 1;
  RocOracle r;
  for (double c : cuts) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= c) (l[i] ? tp : fp) += 1;
    r.pts.push_back({fp / N, tp / P});
  }
  for (std::size_t k = 1; k < r.pts.size(); ++k) {
    auto [f0, t0] = r.pts[k - 1];
    auto [f1, t1] = r.pts[k];
    if (t1 <= t0) continue;  // horizontal: no TPR extent
    const double lo = std::max(t0, floor), hi = std::min(t1, 1.0);
    if (hi <= lo) continue;
    auto fpr_at = [&](double t) { return f0 + (f1 - f0) * (t - t0) / (t1 - t0); };
    r.partial += (hi - lo) * (1.0 - 0.5 * (fpr_at(lo) + fpr_at(hi)));
  }
  return r;
}

/// F1 at the highest threshold reaching the target recall, by enumeration.
inline double f1_enumerate(const std::vector<double>& s, const std::vector<int>& l, double target) {
  std::set<double, std::greater<>> cuts(s.begin(), s.end());
  double P = 0;
  for (int v : l) P += v;
  for (double c : cuts) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= c) (l[i] ? tp : fp) += 1;
    if (tp / P >= target) {
      const double prec = tp / (tp + fp), rec = tp / P;
      return prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    }
  }
  return 0.0;
}

}  // namespace oracle
