#include "commands.hpp"

#include "anatomy_warp/parallel.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace cli = anatomy_warp::cli;

namespace {

std::vector<cli::AmplitudeOverride> overrides(const std::vector<std::string>& raw) {
  std::vector<cli::AmplitudeOverride> out;
  for (const auto& r : raw) out.push_back(cli::parse_amplitude_override(r));
  return out;
}

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << nlohmann::json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anatomy-informed deformation augmentation and detection metrics", "anatomy-warp"};
  app.require_subcommand(1);
  const std::size_t workers = anatomy_warp::worker_count_from_env(1);

  std::vector<std::string> amplitude_raw;
  std::optional<std::uint64_t> seed;

  cli::FieldArgs field;
  auto* field_cmd = app.add_subcommand("field", "Write the anatomy field for an organ label map");
  field_cmd->add_option("organs", field.organs, "organ label map (.nii / .nii.gz)")->required();
  field_cmd->add_option("config", field.config, "config JSON")->required();
  field_cmd->add_option("out", field.out, "output 3-channel field")->required();
  field_cmd->add_option("--amplitude", amplitude_raw, "label=C or name=C; default: every organ at c_max");

  cli::DeformArgs deform;
  auto* deform_cmd = app.add_subcommand("deform", "Run one augmentation step and record provenance");
  deform_cmd->add_option("image", deform.image)->required();
  deform_cmd->add_option("lesions", deform.lesions)->required();
  deform_cmd->add_option("organs", deform.organs)->required();
  deform_cmd->add_option("config", deform.config)->required();
  deform_cmd->add_option("out_prefix", deform.out_prefix)->required();
  deform_cmd->add_option("--seed", seed, "default: config seed");
  deform_cmd->add_option("--amplitude", amplitude_raw, "label=C or name=C; skips the gate and the draws");

  std::filesystem::path provenance, replay_prefix;
  auto* replay_cmd = app.add_subcommand("replay", "Re-derive a deform run from its provenance record");
  replay_cmd->add_option("provenance", provenance)->required();
  replay_cmd->add_option("out_prefix", replay_prefix)->required();

  cli::CropArgs crop;
  auto* crop_cmd = app.add_subcommand("crop", "Crop to the prostate region");
  crop_cmd->add_option("image", crop.image)->required();
  crop_cmd->add_option("lesions", crop.lesions)->required();
  crop_cmd->add_option("organs", crop.organs)->required();
  crop_cmd->add_option("config", crop.config)->required();
  crop_cmd->add_option("out_prefix", crop.out_prefix)->required();

  cli::EvalArgs eval;
  std::filesystem::path compare;
  auto* eval_cmd = app.add_subcommand("eval", "Detection metrics with bootstrap statistics");
  eval_cmd->add_option("manifest", eval.manifest)->required();
  eval_cmd->add_option("config", eval.config)->required();
  eval_cmd->add_option("report", eval.report)->required();
  eval_cmd->add_option("--compare", compare, "second manifest, paired by case id");
  eval_cmd->add_option("--seed", seed, "bootstrap seed; default: config seed");

  cli::TuringArgs turing;
  std::filesystem::path answer_key;
  auto* turing_cmd = app.add_subcommand("turing-batch", "Blinded original / deformed sample batch");
  turing_cmd->add_option("case_list", turing.case_list)->required();
  turing_cmd->add_option("config", turing.config)->required();
  turing_cmd->add_option("out_dir", turing.out_dir)->required();
  turing_cmd->add_option("--seed", seed, "default: config seed");
  turing_cmd->add_option("--answer-key", answer_key, "default: <out_dir>/answer_key.json");
  turing_cmd->add_flag("--all-variants", turing.all_variants, "emit every variant of every case");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    nlohmann::json summary;
    if (*field_cmd) {
      field.amplitudes = overrides(amplitude_raw);
      summary = cli::run_field(field);
    } else if (*deform_cmd) {
      deform.amplitudes = overrides(amplitude_raw);
      deform.seed = seed;
      summary = cli::run_deform(deform);
    } else if (*replay_cmd) {
      summary = cli::run_replay(provenance, replay_prefix);
    } else if (*crop_cmd) {
      summary = cli::run_crop(crop);
    } else if (*eval_cmd) {
      if (!compare.empty()) eval.compare = compare;
      eval.seed = seed;
      eval.workers = workers;
      summary = cli::run_eval(eval);
    } else if (*turing_cmd) {
      if (!answer_key.empty()) turing.answer_key = answer_key;
      turing.seed = seed;
      turing.workers = workers;
      summary = cli::run_turing_batch(turing);
    }
    std::cout << cli::canonical(summary);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << cli::error_document(e).dump() << '\n';
    return 1;
  }
}
