#pragma once

// Subcommand implementations behind the `anatomy-warp` executable. Kept in a
// library so tests can drive them without spawning processes.

#include "anatomy_warp/config.hpp"
#include "anatomy_warp/field.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace anatomy_warp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// Failure with a machine-readable kind ("usage", "manifest", ...).
class CliError : public std::runtime_error {
 public:
  CliError(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

/// `label=value` or `organ_name=value`; names resolve against the config.
struct AmplitudeOverride {
  std::string key;
  double amplitude = 0.0;
};
AmplitudeOverride parse_amplitude_override(const std::string& text);
std::vector<OrganAmplitude> resolve_overrides(const std::vector<AmplitudeOverride>& overrides,
                                              const AugmentationConfig& config);

/// Canonical text: sorted keys, two-space indent, trailing newline.
std::string canonical(const json& doc);

/// {"error": {"kind": ..., "message": ...}} for any exception.
json error_document(const std::exception& e);

struct FieldArgs {
  fs::path organs, config, out;
  std::vector<AmplitudeOverride> amplitudes;  // empty: every organ at c_max
};
json run_field(const FieldArgs& args);

struct DeformArgs {
  fs::path image, lesions, organs, config, out_prefix;
  std::optional<std::uint64_t> seed;          // default: config seed
  std::vector<AmplitudeOverride> amplitudes;  // non-empty: no gate, no draws
};
/// Writes <prefix>_{image,lesions,organs,field}.nii.gz and
/// <prefix>_provenance.json; returns the provenance record.
json run_deform(const DeformArgs& args);

/// Re-derives a deform run from its provenance record alone.
json run_replay(const fs::path& provenance, const fs::path& out_prefix);

struct CropArgs {
  fs::path image, lesions, organs, config, out_prefix;
};
json run_crop(const CropArgs& args);

struct EvalArgs {
  fs::path manifest, config, report;
  std::optional<fs::path> compare;  // second arm, paired by case id
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
};
/// Writes the JSON report plus <report stem>_roc.csv / _froc.csv.
json run_eval(const EvalArgs& args);

struct TuringArgs {
  fs::path case_list, config, out_dir;
  std::optional<fs::path> answer_key;  // default: <out_dir>/answer_key.json
  std::optional<std::uint64_t> seed;
  bool all_variants = false;
  std::size_t workers = 1;
};
/// Returns a summary that does not reveal the key.
json run_turing_batch(const TuringArgs& args);

}  // namespace anatomy_warp::cli
