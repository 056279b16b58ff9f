#include "commands.hpp"

#include "anatomy_warp/metrics.hpp"
#include "anatomy_warp/nifti.hpp"
#include "anatomy_warp/parallel.hpp"
#include "anatomy_warp/policy.hpp"
#include "anatomy_warp/rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace anatomy_warp::cli {

namespace {

std::string path_string(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

fs::path with_suffix(const fs::path& prefix, const std::string& suffix) {
  return prefix.parent_path() / (prefix.filename().string() + suffix);
}

void ensure_parent(const fs::path& p) {
  const auto parent = p.parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

json read_json_file(const fs::path& path, const std::string& kind) {
  std::ifstream in(path);
  if (!in) throw CliError(kind, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CliError(kind, path.string() + ": " + e.what());
  }
}

// Fetches a required string member of a manifest entry.
std::string member(const json& entry, const std::string& key, const std::string& where) {
  if (!entry.is_object() || !entry.contains(key) || !entry.at(key).is_string())
    throw CliError("manifest", where + ": missing string \"" + key + "\"");
  return entry.at(key).get<std::string>();
}

const json& case_array(const json& doc, const fs::path& path) {
  if (!doc.is_object() || !doc.contains("cases") || !doc.at("cases").is_array())
    throw CliError("manifest", path.string() + ": expected {\"cases\": [...]}");
  return doc.at("cases");
}

fs::path relative_to(const fs::path& file, const std::string& entry) {
  const fs::path p(entry);
  return p.is_absolute() ? p : file.parent_path() / p;
}

json amplitudes_json(const std::vector<OrganAmplitude>& amps, const AugmentationConfig& config) {
  json out = json::array();
  for (const auto& a : amps) {
    std::string name;
    for (const auto& o : config.organs)
      if (o.label == a.label) name = o.name;
    out.push_back({{"label", a.label}, {"name", name}, {"amplitude", a.amplitude}});
  }
  return out;
}

std::vector<OrganAmplitude> amplitudes_from_json(const json& arr) {
  std::vector<OrganAmplitude> out;
  for (const auto& a : arr) out.push_back({a.at("label").get<std::int32_t>(), a.at("amplitude").get<double>()});
  return out;
}

json foldover_json(const VectorField<double>& field) {
  const auto f = foldover_diagnostic(field);
  return {{"fraction", f.fraction}, {"count", f.count}, {"min_determinant", f.min_determinant}};
}

TrainingSample<float> load_sample(const fs::path& image, const fs::path& lesions, const fs::path& organs,
                                  NiftiHeader* like) {
  NiftiInfo info;
  TrainingSample<float> s{read_image<float>(image, &info), read_label_volume(lesions),
                          read_label_volume(organs)};
  s.validate();
  if (like) *like = info.header;
  return s;
}

json write_sample(const TrainingSample<float>& s, const VectorField<double>* field, const fs::path& prefix,
                  const NiftiHeader& like) {
  ensure_parent(prefix);
  json out;
  const auto image = with_suffix(prefix, "_image.nii.gz");
  const auto lesions = with_suffix(prefix, "_lesions.nii.gz");
  const auto organs = with_suffix(prefix, "_organs.nii.gz");
  write_image(image, s.image, &like);
  write_label_volume(lesions, s.lesions, &like);
  write_label_volume(organs, s.organs, &like);
  out["image"] = path_string(image);
  out["lesions"] = path_string(lesions);
  out["organs"] = path_string(organs);
  if (field) {
    const auto f = with_suffix(prefix, "_field.nii.gz");
    write_vector_field(f, *field, &like);
    out["field"] = path_string(f);
  }
  return out;
}

std::string number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

AmplitudeOverride parse_amplitude_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size())
    throw CliError("usage", "amplitude override \"" + text + "\" is not label=value");
  AmplitudeOverride o{text.substr(0, eq), 0.0};
  const std::string value = text.substr(eq + 1);
  std::size_t used = 0;
  try {
    o.amplitude = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size() || !std::isfinite(o.amplitude))
    throw CliError("usage", "amplitude override \"" + text + "\" has no numeric value");
  return o;
}

std::vector<OrganAmplitude> resolve_overrides(const std::vector<AmplitudeOverride>& overrides,
                                              const AugmentationConfig& config) {
  std::vector<OrganAmplitude> out;
  std::set<std::int32_t> seen;
  for (const auto& o : overrides) {
    std::optional<std::int32_t> label;
    for (const auto& spec : config.organs)
      if (spec.name == o.key || std::to_string(spec.label) == o.key) label = spec.label;
    if (!label) {
      // Labels outside the config are allowed when given numerically.
      try {
        std::size_t used = 0;
        const long v = std::stol(o.key, &used);
        if (used == o.key.size() && v > 0) label = std::int32_t(v);
      } catch (const std::exception&) {
      }
    }
    if (!label) throw CliError("usage", "unknown organ \"" + o.key + "\" in amplitude override");
    if (!seen.insert(*label).second)
      throw CliError("usage", "organ label " + std::to_string(*label) + " overridden twice");
    out.push_back({*label, o.amplitude});
  }
  return out;
}

std::string canonical(const json& doc) { return doc.dump(2) + "\n"; }

json error_document(const std::exception& e) {
  std::string kind = "internal";
  if (auto* c = dynamic_cast<const CliError*>(&e))
    kind = c->kind();
  else if (auto* n = dynamic_cast<const NiftiError*>(&e))
    kind = to_string(n->kind());
  else if (dynamic_cast<const ConfigError*>(&e))
    kind = "config";
  else if (dynamic_cast<const std::invalid_argument*>(&e))
    kind = "invalid_argument";
  else if (dynamic_cast<const fs::filesystem_error*>(&e))
    kind = "io";
  return {{"error", {{"kind", kind}, {"message", e.what()}}}};
}

json run_field(const FieldArgs& args) {
  const auto rc = load_config_file(args.config);
  const auto& cfg = rc.augmentation;
  NiftiInfo info;
  const auto organs = read_label_volume(args.organs, &info);
  std::vector<OrganAmplitude> amps;
  if (args.amplitudes.empty())
    for (const auto& o : cfg.organs) amps.push_back({o.label, o.c_max});
  else
    amps = resolve_overrides(args.amplitudes, cfg);
  const auto field = anatomy_field<double>(organs, amps, cfg.smoothing);
  ensure_parent(args.out);
  write_vector_field(args.out, field, &info.header);
  return {{"command", "field"},
          {"amplitudes", amplitudes_json(amps, cfg)},
          {"foldover", foldover_json(field)},
          {"organs", path_string(args.organs)},
          {"output", path_string(args.out)}};
}

json run_deform(const DeformArgs& args) {
  const auto rc = load_config_file(args.config);
  const auto& cfg = rc.augmentation;
  cfg.validate();
  NiftiHeader like;
  const auto sample = load_sample(args.image, args.lesions, args.organs, &like);
  const std::uint64_t seed = args.seed.value_or(cfg.seed);

  const bool override_mode = !args.amplitudes.empty();
  const std::string scheme = !override_mode && cfg.scheme == AugmentationScheme::random_elastic
                                 ? "random_elastic"
                                 : "anatomy_informed";
  const auto result = [&] {
    if (override_mode) return augment_with_amplitudes(sample, resolve_overrides(args.amplitudes, cfg), cfg);
    Rng rng(seed);
    return augment(sample, cfg, rng);
  }();
  // The skip path still emits a (zero) field so every run has the same outputs.
  const VectorField<double> field = result.field ? *result.field : VectorField<double>(sample.geometry());

  json record;
  record["command"] = "deform";
  record["mode"] = override_mode ? "override" : "drawn";
  record["scheme"] = scheme;
  record["seed"] = seed;
  record["applied"] = result.draw.applied;
  record["amplitudes"] = amplitudes_json(result.draw.amplitudes, cfg);
  record["config"] = to_json(rc);
  record["inputs"] = {{"image", path_string(args.image)},
                      {"lesions", path_string(args.lesions)},
                      {"organs", path_string(args.organs)}};
  record["foldover"] = foldover_json(field);
  record["outputs"] = write_sample(result.sample, &field, args.out_prefix, like);
  const auto prov = with_suffix(args.out_prefix, "_provenance.json");
  record["outputs"]["provenance"] = path_string(prov);
  write_text_file(prov, canonical(record));
  return record;
}

json run_replay(const fs::path& provenance, const fs::path& out_prefix) {
  const json prior = read_json_file(provenance, "provenance");
  try {
    if (prior.at("command") != "deform") throw CliError("provenance", "not a deform record");
    const auto rc = parse_config(prior.at("config"));
    const auto& cfg = rc.augmentation;
    const auto& in = prior.at("inputs");
    NiftiHeader like;
    const auto sample = load_sample(in.at("image").get<std::string>(), in.at("lesions").get<std::string>(),
                                    in.at("organs").get<std::string>(), &like);
    const auto seed = prior.at("seed").get<std::uint64_t>();
    const bool applied = prior.at("applied").get<bool>();

    const auto result = [&]() -> AugmentResult<float> {
      if (!applied) return {sample, {false, {}}, std::nullopt};
      // Recorded amplitudes, no RNG involved.
      if (prior.at("scheme") == "anatomy_informed")
        return augment_with_amplitudes(sample, amplitudes_from_json(prior.at("amplitudes")), cfg);
      Rng rng(seed);
      return augment(sample, cfg, rng);
    }();
    const VectorField<double> field = result.field ? *result.field : VectorField<double>(sample.geometry());

    json record = prior;
    record["replayed_from"] = path_string(provenance);
    record["outputs"] = write_sample(result.sample, &field, out_prefix, like);
    const auto prov = with_suffix(out_prefix, "_provenance.json");
    record["outputs"]["provenance"] = path_string(prov);
    write_text_file(prov, canonical(record));
    return record;
  } catch (const json::exception& e) {
    throw CliError("provenance", provenance.string() + ": " + e.what());
  }
}

json run_crop(const CropArgs& args) {
  const auto rc = load_config_file(args.config);
  const auto& cfg = rc.augmentation;
  NiftiHeader like;
  const auto sample = load_sample(args.image, args.lesions, args.organs, &like);
  std::vector<std::int32_t> adjacent;
  for (const auto& o : cfg.organs) adjacent.push_back(o.label);
  CropBox box;
  const auto cropped = crop_region(sample, cfg.prostate_label, adjacent, cfg.crop, &box);

  json record;
  record["command"] = "crop";
  record["box"] = {{"lo", box.lo}, {"hi", box.hi}};
  record["input_shape"] = sample.geometry().shape;
  record["spacing"] = sample.geometry().spacing;
  record["prostate_label"] = cfg.prostate_label;
  record["adjacent_labels"] = adjacent;
  record["offsets_mm"] = {{"axial", cfg.crop.axial_mm}, {"inplane", cfg.crop.inplane_mm}};
  record["outputs"] = write_sample(cropped, nullptr, args.out_prefix, like);
  const auto out = with_suffix(args.out_prefix, "_crop.json");
  record["outputs"]["crop"] = path_string(out);
  write_text_file(out, canonical(record));
  return record;
}

namespace {

std::vector<CaseResult> load_cases(const fs::path& manifest, const MetricSettings& m, std::size_t workers) {
  const json doc = read_json_file(manifest, "manifest");
  const json& entries = case_array(doc, manifest);
  std::vector<CaseResult> cases(entries.size());
  std::set<std::string> ids;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string where = manifest.string() + ": cases[" + std::to_string(i) + "]";
    if (!ids.insert(member(entries[i], "id", where)).second)
      throw CliError("manifest", where + ": duplicate id");
    member(entries[i], "prediction", where);
    member(entries[i], "ground_truth", where);
    if (entries[i].contains("patient_label") && !entries[i].at("patient_label").is_boolean() &&
        !entries[i].at("patient_label").is_number_integer())
      throw CliError("manifest", where + ": patient_label must be a boolean or 0/1");
  }
  parallel_for(entries.size(), workers, [&](std::size_t i) {
    const auto& e = entries[i];
    std::optional<bool> label;
    if (e.contains("patient_label"))
      label = e.at("patient_label").is_boolean() ? e.at("patient_label").get<bool>()
                                                 : e.at("patient_label").get<int>() != 0;
    const auto prob = read_scalar_volume(relative_to(manifest, e.at("prediction").get<std::string>()));
    const auto gt = read_label_volume(relative_to(manifest, e.at("ground_truth").get<std::string>()));
    cases[i] = make_case_result(e.at("id").get<std::string>(), prob, gt, label, m.prob_threshold,
                                m.connectivity);
  });
  return cases;
}

bool both_classes(const std::vector<CaseResult>& cases) {
  bool pos = false, neg = false;
  for (const auto& c : cases) (c.patient_label ? pos : neg) = true;
  return pos && neg;
}

json arm_json(const ArmSummary& a) { return {{"mean", a.mean}, {"std", a.std}}; }

}  // namespace

json run_eval(const EvalArgs& args) {
  const auto rc = load_config_file(args.config);
  const auto& m = rc.metrics;
  const auto cases = load_cases(args.manifest, m, args.workers);
  if (cases.empty()) throw CliError("manifest", args.manifest.string() + ": no cases");
  const std::uint64_t seed = args.seed.value_or(rc.augmentation.seed);

  json report;
  report["command"] = "eval";
  report["manifest"] = path_string(args.manifest);
  report["settings"] = to_json(rc)["metrics"];
  report["case_count"] = cases.size();

  std::vector<double> scores;
  std::vector<int> labels;
  json per_case = json::array();
  for (const auto& c : cases) {
    scores.push_back(c.patient_score);
    labels.push_back(c.patient_label ? 1 : 0);
    const auto mo = match_objects(c.pred_objects, c.gt_objects, m.iou_threshold);
    per_case.push_back({{"id", c.case_id},
                        {"patient_label", c.patient_label},
                        {"patient_score", c.patient_score},
                        {"predicted_objects", c.pred_objects.size()},
                        {"lesions", c.gt_objects.size()},
                        {"tp", mo.true_positives},
                        {"fp", mo.false_positives},
                        {"fn", mo.false_negatives}});
  }
  report["cases"] = per_case;

  std::ostringstream roc_csv, froc_csv;
  roc_csv << "threshold,fpr,tpr\n";
  if (both_classes(cases)) {
    const auto roc = roc_and_pauroc(scores, labels, m.sensitivity_floor);
    const auto f1 = f1_at_sensitivity(scores, labels, m.f1_target_sensitivity);
    report["patient"] = {{"auc", roc.auc},
                         {"pauroc", roc.pauroc},
                         {"pauroc_raw", roc.pauroc_raw},
                         {"sensitivity_floor", roc.sensitivity_floor},
                         {"f1", {{"f1", f1.f1}, {"precision", f1.precision}, {"recall", f1.recall},
                                 {"threshold", f1.threshold}}}};
    for (const auto& p : roc.points)
      roc_csv << number(p.threshold) << ',' << number(p.fpr) << ',' << number(p.tpr) << '\n';
  } else {
    report["patient"] = nullptr;
  }

  const auto curve = froc(cases, m.iou_threshold);
  report["lesion_count"] = curve.total_lesions;
  froc_csv << "threshold,fp_per_scan,sensitivity,tp,fp\n";
  for (const auto& p : curve.points)
    froc_csv << number(p.threshold) << ',' << number(p.fp_per_scan) << ',' << number(p.sensitivity) << ','
             << p.true_positives << ',' << p.false_positives << '\n';
  if (curve.total_lesions > 0) {
    const auto op = sensitivity_at_fp(curve, m.fp_per_scan);
    report["lesion"] = {{"fp_per_scan", m.fp_per_scan}, {"sensitivity", op.sensitivity},
                        {"detected", op.detected},      {"total", op.total},
                        {"threshold", op.threshold},    {"froc_area_1fp", froc_normalized_area(curve, 1.0)}};
  } else {
    report["lesion"] = nullptr;
  }

  std::optional<std::vector<CaseResult>> other;
  if (args.compare) other = load_cases(*args.compare, m, args.workers);

  const std::vector<std::pair<std::string, CaseMetric>> metrics{
      {"pauroc", metric::pauroc(m.sensitivity_floor)},
      {"f1", metric::f1(m.f1_target_sensitivity)},
      {"detections", metric::detections(m.iou_threshold, m.fp_per_scan)}};
  const auto resamples = draw_bootstrap_resamples(cases.size(), m.bootstrap_replications, seed);
  json boot = {{"seed", seed}, {"replications", m.bootstrap_replications}};
  json comparison;
  for (const auto& [name, fn] : metrics) {
    try {
      const auto r = bootstrap_compare_resamples(fn, cases, other ? *other : cases, resamples, args.workers);
      boot[name] = {{"mean", r.arm_a.mean}, {"std", r.arm_a.std}, {"skipped_replications", r.skipped_replications}};
      if (other)
        comparison[name] = {{"arm_a", arm_json(r.arm_a)},
                            {"arm_b", arm_json(r.arm_b)},
                            {"mean_difference", r.mean_difference},
                            {"std_difference", r.std_difference},
                            {"t_statistic", r.t_statistic},
                            {"p_value", r.p_value},
                            {"p_value_percentile", r.p_value_percentile},
                            {"replications", r.replications},
                            {"skipped_replications", r.skipped_replications}};
    } catch (const std::invalid_argument& e) {
      // Undefined on every replicate (e.g. a single patient class).
      if (std::string(e.what()).find("undefined on every replicate") == std::string::npos) throw;
      boot[name] = nullptr;
      if (other) comparison[name] = nullptr;
    }
  }
  report["bootstrap"] = boot;
  if (other) {
    comparison["manifest_b"] = path_string(*args.compare);
    report["comparison"] = comparison;
  }

  ensure_parent(args.report);
  const auto stem = args.report.parent_path() / args.report.stem();
  const auto roc_path = with_suffix(stem, "_roc.csv");
  const auto froc_path = with_suffix(stem, "_froc.csv");
  report["outputs"] = {{"report", path_string(args.report)},
                       {"roc_csv", path_string(roc_path)},
                       {"froc_csv", path_string(froc_path)}};
  write_text_file(roc_path, roc_csv.str());
  write_text_file(froc_path, froc_csv.str());
  write_text_file(args.report, canonical(report));
  return report;
}

namespace {

struct TuringCase {
  std::string id;
  fs::path image, lesions, organs;
};

struct TuringSample {
  std::size_t case_index = 0;
  std::string variant;
};

}  // namespace

json run_turing_batch(const TuringArgs& args) {
  const auto rc = load_config_file(args.config);
  const auto& cfg = rc.augmentation;
  cfg.validate();
  const std::uint64_t seed = args.seed.value_or(cfg.seed);

  const json doc = read_json_file(args.case_list, "manifest");
  const json& entries = case_array(doc, args.case_list);
  std::vector<TuringCase> cases;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string where = args.case_list.string() + ": cases[" + std::to_string(i) + "]";
    cases.push_back({member(entries[i], "id", where),
                     relative_to(args.case_list, member(entries[i], "image", where)),
                     relative_to(args.case_list, member(entries[i], "lesions", where)),
                     relative_to(args.case_list, member(entries[i], "organs", where))});
  }
  if (cases.empty()) throw CliError("manifest", args.case_list.string() + ": no cases");

  std::vector<std::string> variants{"original", "anatomy"};
  if (cfg.elastic) variants.push_back("elastic");

  // Variant choice and amplitudes come from a per-case stream, so results do
  // not depend on worker count or case order.
  std::vector<TuringSample> samples;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (args.all_variants) {
      for (const auto& v : variants) samples.push_back({i, v});
    } else {
      Rng pick = derive_stream(seed, 2 * i);
      samples.push_back({i, variants[uniform_index(pick, variants.size())]});
    }
  }
  // Fisher-Yates with our own index draw; std::shuffle is not portable.
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng = derive_stream(seed, 2 * cases.size() + 1);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

  const int width = std::max<int>(3, int(std::to_string(samples.size() - 1).size()));
  auto name_of = [&](std::size_t slot) {
    std::string n = std::to_string(slot);
    return "sample_" + std::string(std::size_t(width) - n.size(), '0') + n;
  };

  fs::create_directories(args.out_dir);
  AugmentationConfig anatomy_cfg = cfg;
  anatomy_cfg.probability = 1.0;
  anatomy_cfg.scheme = AugmentationScheme::anatomy_informed;

  std::vector<json> key_entries(samples.size());
  parallel_for(samples.size(), args.workers, [&](std::size_t slot) {
    const auto& s = samples[order[slot]];
    const auto& c = cases[s.case_index];
    NiftiHeader like;
    const auto sample = load_sample(c.image, c.lesions, c.organs, &like);
    // Each (case, variant) gets its own stream.
    std::size_t vi = 0;
    while (variants[vi] != s.variant) ++vi;
    Rng rng = derive_stream(seed, 2 * cases.size() + 2 + s.case_index * variants.size() + vi);

    json entry{{"name", name_of(slot)}, {"case_id", c.id}, {"variant", s.variant}};
    MultiChannelVolume<float> image = sample.image;
    if (s.variant == "anatomy") {
      auto draw = sample_amplitudes(anatomy_cfg, rng);
      auto r = augment_with_amplitudes(sample, draw.amplitudes, cfg);
      image = std::move(r.sample.image);
      entry["amplitudes"] = amplitudes_json(r.draw.amplitudes, cfg);
      entry["foldover"] = foldover_json(*r.field);
    } else if (s.variant == "elastic") {
      const auto field =
          random_elastic_field(sample.geometry(), cfg.elastic->alpha, cfg.elastic->sigma, rng, cfg.smoothing.anisotropy);
      image = warp_image(sample.image, field, cfg.image_interpolation, cfg.boundary);
      entry["foldover"] = foldover_json(field);
    }
    write_image(args.out_dir / (name_of(slot) + ".nii.gz"), image, &like);
    key_entries[slot] = std::move(entry);
  });

  const fs::path key_path = args.answer_key.value_or(args.out_dir / "answer_key.json");
  ensure_parent(key_path);
  json key{{"seed", seed},
           {"variants_offered", variants},
           {"all_variants", args.all_variants},
           {"config", to_json(rc)},
           {"samples", key_entries}};
  write_text_file(key_path, canonical(key));
  return {{"command", "turing-batch"},
          {"samples", samples.size()},
          {"out_dir", path_string(args.out_dir)},
          {"answer_key", path_string(key_path)}};
}

}  // namespace anatomy_warp::cli
