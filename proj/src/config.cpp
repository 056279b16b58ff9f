#include "anatomy_warp/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace anatomy_warp {
namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& [k, _] : obj.items())
    if (!known.count(k)) throw ConfigError(where + ": unknown key \"" + k + "\"");
}

std::string join(const std::string& where, const char* key) {
  return where.empty() ? key : where + "." + key;
}

double get_number(const json& obj, const std::string& where, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(join(where, key) + ": expected a number");
  return v.get<double>();
}

template <typename Int>
Int get_integer(const json& obj, const std::string& where, const char* key, Int fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) throw ConfigError(join(where, key) + ": expected an integer");
  if constexpr (std::is_unsigned_v<Int>) {
    if (v.is_number_unsigned()) return static_cast<Int>(v.get<std::uint64_t>());
    if (v.get<std::int64_t>() < 0) throw ConfigError(join(where, key) + ": must be >= 0");
  }
  return static_cast<Int>(v.get<std::int64_t>());
}

std::string get_string(const json& obj, const std::string& where, const char* key,
                       const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_string()) throw ConfigError(join(where, key) + ": expected a string");
  return v.get<std::string>();
}

const char* name_of(AnisotropyMode m) {
  return m == AnisotropyMode::physical_isotropic ? "physical_isotropic" : "voxel_isotropic";
}
const char* name_of(AmplitudeDistribution d) {
  return d == AmplitudeDistribution::continuous_uniform ? "continuous_uniform" : "discrete_levels";
}
const char* name_of(AugmentationScheme s) {
  return s == AugmentationScheme::anatomy_informed ? "anatomy_informed" : "random_elastic";
}
const char* name_of(InterpolationMode m) {
  return m == InterpolationMode::trilinear ? "trilinear" : "nearest";
}

SmoothingSpec parse_smoothing(const json& j, const std::string& where) {
  reject_unknown(j, where, {"sigma_inplane", "anisotropy", "truncation"});
  SmoothingSpec s;
  s.sigma_inplane = get_number(j, where, "sigma_inplane", s.sigma_inplane);
  s.truncation = get_number(j, where, "truncation", s.truncation);
  const auto mode = get_string(j, where, "anisotropy", name_of(s.anisotropy));
  if (mode == "physical_isotropic")
    s.anisotropy = AnisotropyMode::physical_isotropic;
  else if (mode == "voxel_isotropic")
    s.anisotropy = AnisotropyMode::voxel_isotropic;
  else
    throw ConfigError(where + ".anisotropy: unknown mode \"" + mode + "\"");
  return s;
}

MetricSettings parse_metrics(const json& j, const std::string& where) {
  reject_unknown(j, where,
                 {"prob_threshold", "iou_threshold", "sensitivity_floor", "f1_target_sensitivity",
                  "fp_per_scan", "bootstrap_replications", "connectivity"});
  MetricSettings m;
  m.prob_threshold = get_number(j, where, "prob_threshold", m.prob_threshold);
  m.iou_threshold = get_number(j, where, "iou_threshold", m.iou_threshold);
  m.sensitivity_floor = get_number(j, where, "sensitivity_floor", m.sensitivity_floor);
  m.f1_target_sensitivity = get_number(j, where, "f1_target_sensitivity", m.f1_target_sensitivity);
  m.fp_per_scan = get_number(j, where, "fp_per_scan", m.fp_per_scan);
  m.bootstrap_replications =
      get_integer<std::size_t>(j, where, "bootstrap_replications", m.bootstrap_replications);
  const int conn = get_integer<int>(j, where, "connectivity", static_cast<int>(m.connectivity));
  if (conn != 6 && conn != 18 && conn != 26)
    throw ConfigError(where + ".connectivity: must be 6, 18 or 26");
  m.connectivity = static_cast<Connectivity>(conn);

  if (!(m.prob_threshold >= 0.0 && m.prob_threshold <= 1.0))
    throw ConfigError(where + ".prob_threshold: must lie in [0, 1]");
  if (!(m.iou_threshold > 0.0 && m.iou_threshold <= 1.0))
    throw ConfigError(where + ".iou_threshold: must lie in (0, 1]");
  if (!(m.sensitivity_floor >= 0.0 && m.sensitivity_floor < 1.0))
    throw ConfigError(where + ".sensitivity_floor: must lie in [0, 1)");
  if (!(m.f1_target_sensitivity >= 0.0 && m.f1_target_sensitivity <= 1.0))
    throw ConfigError(where + ".f1_target_sensitivity: must lie in [0, 1]");
  if (!(m.fp_per_scan >= 0.0)) throw ConfigError(where + ".fp_per_scan: must be >= 0");
  if (m.bootstrap_replications < 1)
    throw ConfigError(where + ".bootstrap_replications: must be >= 1");
  return m;
}

}  // namespace

RunConfig parse_config(const json& doc) {
  reject_unknown(doc, "config",
                 {"scheme", "organs", "probability", "amplitude_distribution", "discrete_levels",
                  "smoothing", "elastic", "crop", "prostate_label", "image_interpolation",
                  "boundary", "seed", "metrics"});
  RunConfig rc;
  auto& a = rc.augmentation;
  const std::string w = "config";

  const auto scheme = get_string(doc, w, "scheme", name_of(a.scheme));
  if (scheme == "anatomy_informed")
    a.scheme = AugmentationScheme::anatomy_informed;
  else if (scheme == "random_elastic")
    a.scheme = AugmentationScheme::random_elastic;
  else
    throw ConfigError("config.scheme: unknown scheme \"" + scheme + "\"");

  if (doc.contains("organs")) {
    const auto& organs = doc.at("organs");
    if (!organs.is_array()) throw ConfigError("config.organs: expected an array");
    a.organs.clear();
    for (std::size_t i = 0; i < organs.size(); ++i) {
      const std::string where = "config.organs[" + std::to_string(i) + "]";
      reject_unknown(organs[i], where, {"label", "c_max", "name"});
      if (!organs[i].contains("label") || !organs[i].contains("c_max"))
        throw ConfigError(where + ": \"label\" and \"c_max\" are required");
      OrganAmplitudeSpec o;
      o.label = get_integer<std::int32_t>(organs[i], where, "label", 0);
      o.c_max = get_number(organs[i], where, "c_max", 0.0);
      o.name = get_string(organs[i], where, "name", "");
      a.organs.push_back(o);
    }
  }
  a.probability = get_number(doc, w, "probability", a.probability);

  const auto dist = get_string(doc, w, "amplitude_distribution", name_of(a.distribution));
  if (dist == "continuous_uniform")
    a.distribution = AmplitudeDistribution::continuous_uniform;
  else if (dist == "discrete_levels")
    a.distribution = AmplitudeDistribution::discrete_levels;
  else
    throw ConfigError("config.amplitude_distribution: unknown value \"" + dist + "\"");

  if (doc.contains("discrete_levels")) {
    const auto& lv = doc.at("discrete_levels");
    if (!lv.is_array()) throw ConfigError("config.discrete_levels: expected an array");
    a.discrete_levels.clear();
    for (const auto& v : lv) {
      if (!v.is_number()) throw ConfigError("config.discrete_levels: expected numbers");
      a.discrete_levels.push_back(v.get<double>());
    }
  }
  if (doc.contains("smoothing")) a.smoothing = parse_smoothing(doc.at("smoothing"), "config.smoothing");
  if (doc.contains("elastic") && !doc.at("elastic").is_null()) {
    const auto& e = doc.at("elastic");
    reject_unknown(e, "config.elastic", {"alpha", "sigma"});
    if (!e.contains("alpha") || !e.contains("sigma"))
      throw ConfigError("config.elastic: \"alpha\" and \"sigma\" are required");
    a.elastic = ElasticBaseline{get_number(e, "config.elastic", "alpha", 0.0),
                                get_number(e, "config.elastic", "sigma", 0.0)};
  }
  if (doc.contains("crop")) {
    const auto& c = doc.at("crop");
    reject_unknown(c, "config.crop", {"axial_mm", "inplane_mm"});
    a.crop.axial_mm = get_number(c, "config.crop", "axial_mm", a.crop.axial_mm);
    a.crop.inplane_mm = get_number(c, "config.crop", "inplane_mm", a.crop.inplane_mm);
  }
  a.prostate_label = get_integer<std::int32_t>(doc, w, "prostate_label", a.prostate_label);

  const auto interp = get_string(doc, w, "image_interpolation", name_of(a.image_interpolation));
  if (interp == "trilinear")
    a.image_interpolation = InterpolationMode::trilinear;
  else if (interp == "nearest")
    a.image_interpolation = InterpolationMode::nearest;
  else
    throw ConfigError("config.image_interpolation: unknown mode \"" + interp + "\"");

  if (doc.contains("boundary")) {
    const auto& b = doc.at("boundary");
    reject_unknown(b, "config.boundary", {"mode", "value"});
    const auto mode = get_string(b, "config.boundary", "mode", "clamp_to_edge");
    if (mode == "clamp_to_edge") {
      if (b.contains("value")) throw ConfigError("config.boundary.value: only valid for constant mode");
      a.boundary = BoundaryMode::clamp();
    } else if (mode == "constant") {
      const double v = get_number(b, "config.boundary", "value", 0.0);
      if (!std::isfinite(v)) throw ConfigError("config.boundary.value: must be finite");
      a.boundary = BoundaryMode::constant(v);
    } else {
      throw ConfigError("config.boundary.mode: unknown mode \"" + mode + "\"");
    }
  }
  a.seed = get_integer<std::uint64_t>(doc, w, "seed", a.seed);
  if (doc.contains("metrics")) rc.metrics = parse_metrics(doc.at("metrics"), "config.metrics");

  try {
    a.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return rc;
}

RunConfig parse_config_string(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  return parse_config(doc);
}

RunConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_string(ss.str());
}

json to_json(const RunConfig& rc) {
  const auto& a = rc.augmentation;
  json organs = json::array();
  for (const auto& o : a.organs) organs.push_back({{"label", o.label}, {"c_max", o.c_max}, {"name", o.name}});
  json boundary = a.boundary.kind == BoundaryMode::Kind::clamp_to_edge
                      ? json{{"mode", "clamp_to_edge"}}
                      : json{{"mode", "constant"}, {"value", a.boundary.fill_value}};
  json elastic = a.elastic ? json{{"alpha", a.elastic->alpha}, {"sigma", a.elastic->sigma}} : json(nullptr);
  const auto& m = rc.metrics;
  return json{
      {"scheme", name_of(a.scheme)},
      {"organs", organs},
      {"probability", a.probability},
      {"amplitude_distribution", name_of(a.distribution)},
      {"discrete_levels", a.discrete_levels},
      {"smoothing",
       {{"sigma_inplane", a.smoothing.sigma_inplane},
        {"anisotropy", name_of(a.smoothing.anisotropy)},
        {"truncation", a.smoothing.truncation}}},
      {"elastic", elastic},
      {"crop", {{"axial_mm", a.crop.axial_mm}, {"inplane_mm", a.crop.inplane_mm}}},
      {"prostate_label", a.prostate_label},
      {"image_interpolation", name_of(a.image_interpolation)},
      {"boundary", boundary},
      {"seed", a.seed},
      {"metrics",
       {{"prob_threshold", m.prob_threshold},
        {"iou_threshold", m.iou_threshold},
        {"sensitivity_floor", m.sensitivity_floor},
        {"f1_target_sensitivity", m.f1_target_sensitivity},
        {"fp_per_scan", m.fp_per_scan},
        {"bootstrap_replications", m.bootstrap_replications},
        {"connectivity", static_cast<int>(m.connectivity)}}},
  };
}

}  // namespace anatomy_warp
