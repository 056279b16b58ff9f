#include "doctest.h"

#include "commands.hpp"

#include "anatomy_warp/exchange.hpp"
#include "anatomy_warp/metrics.hpp"
#include "anatomy_warp/nifti.hpp"
#include "../support/files.hpp"
#include "../support/oracles.hpp"
#include "../support/phantom.hpp"

#include <cstdlib>
#include <map>
#include <set>

#include <sys/wait.h>

using namespace anatomy_warp;
namespace fs = std::filesystem;
using files::slurp;
using files::spit;
using files::TempDir;
using nlohmann::json;

namespace {

const char* small_config =
    R"({"smoothing": {"sigma_inplane": 3}, "probability": 1.0,
        "organs": [{"label": 1, "c_max": 60, "name": "rectum"}, {"label": 2, "c_max": 30, "name": "bladder"}]})";

const VolumeGeometry grid({32, 30, 10}, {0.5, 0.5, 1.5});

struct Run {
  int status = -1;
  std::string out, err;
};

Run run_binary(const std::string& args, const TempDir& dir) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(ANATOMY_WARP_BIN) + " " + args + " > " +
                          out.string() + " 2> " + err.string();
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

cli::DeformArgs deform_args(const files::SampleFiles& f, const fs::path& config, const fs::path& prefix,
                            std::uint64_t seed) {
  cli::DeformArgs a;
  a.image = f.image;
  a.lesions = f.lesions;
  a.organs = f.organs;
  a.config = config;
  a.out_prefix = prefix;
  a.seed = seed;
  return a;
}

const char* outputs[] = {"_image.nii.gz", "_lesions.nii.gz", "_organs.nii.gz", "_field.nii.gz"};

std::string bytes_of(const fs::path& prefix, const char* suffix) {
  return slurp(prefix.string() + suffix);
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("deform: fixed seed gives byte-identical outputs") {
    TempDir dir("cli_det");
    const auto f = files::write_phantom(dir.path, "in", grid);
    spit(dir / "c.json", small_config);
    cli::run_deform(deform_args(f, dir / "c.json", dir / "a", 11));
    std::vector<std::string> first;
    for (auto s : outputs) first.push_back(bytes_of(dir / "a", s));
    first.push_back(bytes_of(dir / "a", "_provenance.json"));
    cli::run_deform(deform_args(f, dir / "c.json", dir / "a", 11));
    for (std::size_t i = 0; i < 4; ++i) CHECK(bytes_of(dir / "a", outputs[i]) == first[i]);
    CHECK(bytes_of(dir / "a", "_provenance.json") == first[4]);

    // Through the executable as well.
    const auto r1 = run_binary("deform " + q(f.image) + " " + q(f.lesions) + " " + q(f.organs) + " " +
                                   q(dir / "c.json") + " " + q(dir / "b") + " --seed 11",
                               dir);
    REQUIRE(r1.status == 0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(bytes_of(dir / "b", outputs[i]) == first[i]);
    const auto prov = json::parse(r1.out);
    CHECK(prov.at("seed") == 11);
    CHECK(r1.out == slurp(dir / "b_provenance.json"));

    cli::run_deform(deform_args(f, dir / "c.json", dir / "c", 12));
    CHECK(bytes_of(dir / "c", "_image.nii.gz") != first[0]);
  }

  TEST_CASE("deform: zero amplitude overrides leave the inputs unchanged") {
    TempDir dir("cli_zero");
    const auto f = files::write_phantom(dir.path, "in", grid);
    spit(dir / "c.json", small_config);
    auto a = deform_args(f, dir / "c.json", dir / "z", 5);
    a.amplitudes = {cli::parse_amplitude_override("rectum=0"), cli::parse_amplitude_override("2=0")};
    const auto prov = cli::run_deform(a);
    CHECK(prov.at("mode") == "override");
    CHECK(prov.at("applied") == true);
    CHECK(oracle::bit_identical(read_image<float>(dir / "z_image.nii.gz"), read_image<float>(f.image)));
    CHECK(read_label_volume(dir / "z_lesions.nii.gz") == read_label_volume(f.lesions));
    CHECK(read_label_volume(dir / "z_organs.nii.gz") == read_label_volume(f.organs));
    const auto field = read_image<double>(dir / "z_field.nii.gz");
    for (const auto& c : field) CHECK(c.values().abs().maxCoeff() == 0.0);
  }

  TEST_CASE("deform: drawn amplitudes stay within the configured bounds") {
    TempDir dir("cli_bounds");
    const auto f = files::write_phantom(dir.path, "in", VolumeGeometry({24, 24, 6}, {0.5, 0.5, 3.0}), 1);
    // Default organs and bounds; gate forced open.
    spit(dir / "c.json", R"({"probability": 1.0, "smoothing": {"sigma_inplane": 4}})");
    bool above_half = false;
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
      const auto prov = cli::run_deform(deform_args(f, dir / "c.json", dir / "p", seed));
      REQUIRE(prov.at("applied") == true);
      const auto& amps = prov.at("amplitudes");
      REQUIRE(amps.size() == 2);
      CHECK(amps[0].at("name") == "rectum");
      CHECK(amps[1].at("name") == "bladder");
      const double c_r = amps[0].at("amplitude"), c_b = amps[1].at("amplitude");
      CHECK(std::abs(c_r) <= 1200.0);
      CHECK(std::abs(c_b) <= 600.0);
      above_half = above_half || std::abs(c_r) > 600.0;
    }
    CHECK(above_half);

    // Default probability: skipped draws record no amplitudes.
    spit(dir / "d.json", R"({"smoothing": {"sigma_inplane": 4}})");
    int skipped = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto prov = cli::run_deform(deform_args(f, dir / "d.json", dir / "p", seed));
      if (prov.at("applied") == false) {
        ++skipped;
        CHECK(prov.at("amplitudes").empty());
        CHECK(read_image<float>(dir / "p_image.nii.gz") == read_image<float>(f.image));
      }
    }
    CHECK(skipped > 0);
  }

  TEST_CASE("deform: CLI and array exchange agree for the same seed") {
    TempDir dir("cli_exchange");
    const auto f = files::write_phantom(dir.path, "in", grid);
    spit(dir / "c.json", small_config);
    const auto s = phantom::sample(grid);
    namespace ex = anatomy_warp::exchange;
    const ex::ArrayShape shape{2, grid.shape}, one{1, grid.shape};
    std::vector<float> image(std::size_t(shape.channels * shape.voxels()));
    std::vector<std::uint16_t> lesions(std::size_t(one.voxels())), organs(lesions.size());
    for (int c = 0; c < 2; ++c) ex::from_volume<float>(s.image.channel(c), c, shape, image);
    ex::from_volume<std::uint16_t>(s.lesions.cast<std::uint16_t>(), 0, one, lesions);
    ex::from_volume<std::uint16_t>(s.organs.cast<std::uint16_t>(), 0, one, organs);

    for (std::uint64_t seed : {3ULL, 4ULL}) {
      cli::run_deform(deform_args(f, dir / "c.json", dir / "x", seed));
      const auto arr = ex::augment(image, lesions, organs, shape, grid.spacing, small_config, seed);
      const auto disk = read_image<float>(dir / "x_image.nii.gz");
      std::vector<float> disk_buf(image.size());
      for (int c = 0; c < 2; ++c) ex::from_volume<float>(disk.channel(c), c, shape, disk_buf);
      CHECK(disk_buf == arr.image);
      std::vector<std::uint16_t> disk_org(organs.size());
      ex::from_volume<std::uint16_t>(read_label_volume(dir / "x_organs.nii.gz").cast<std::uint16_t>(), 0, one,
                                     disk_org);
      CHECK(disk_org == arr.organs);
    }
  }

  TEST_CASE("replay reproduces the recorded outputs") {
    TempDir dir("cli_replay");
    const auto f = files::write_phantom(dir.path, "in", grid);
    spit(dir / "anat.json", small_config);
    spit(dir / "skip.json", R"({"probability": 0})");
    spit(dir / "elastic.json",
         R"({"scheme": "random_elastic", "elastic": {"alpha": 3, "sigma": 4}, "probability": 1})");
    for (const std::string name : {"anat", "skip", "elastic"}) {
      CAPTURE(name);
      cli::run_deform(deform_args(f, dir / (name + ".json"), dir / ("o_" + name), 21));
      const auto rep = cli::run_replay(dir / ("o_" + name + "_provenance.json"), dir / ("r_" + name));
      CHECK(rep.at("replayed_from").get<std::string>().find("o_" + name) != std::string::npos);
      for (auto s : outputs) CHECK(bytes_of(dir / ("r_" + name), s) == bytes_of(dir / ("o_" + name), s));
    }
    // Override runs replay from the recorded amplitudes.
    auto a = deform_args(f, dir / "anat.json", dir / "o_ovr", 1);
    a.amplitudes = {cli::parse_amplitude_override("1=45.5")};
    cli::run_deform(a);
    cli::run_replay(dir / "o_ovr_provenance.json", dir / "r_ovr");
    for (auto s : outputs) CHECK(bytes_of(dir / "r_ovr", s) == bytes_of(dir / "o_ovr", s));
  }

  TEST_CASE("field: defaults to c_max and matches the library") {
    TempDir dir("cli_field");
    const auto f = files::write_phantom(dir.path, "in", grid);
    spit(dir / "c.json", small_config);
    const auto out = cli::run_field({f.organs, dir / "c.json", dir / "f.nii.gz", {}});
    CHECK(out.at("amplitudes")[0].at("amplitude") == 60.0);
    CHECK(out.at("amplitudes")[1].at("amplitude") == 30.0);
    const auto ref = anatomy_field<double>(phantom::organs(grid), std::vector<OrganAmplitude>{{1, 60.0}, {2, 30.0}}, SmoothingSpec{3.0});
    NiftiInfo info;
    const auto disk = read_image<double>(dir / "f.nii.gz", &info);
    CHECK(info.channels == 3);
    for (int a = 0; a < 3; ++a)
      CHECK((disk.channel(a).values() - ref.component(a).cast<float>().cast<double>()).abs().maxCoeff() ==
            0.0);

    cli::run_field({f.organs, dir / "c.json", dir / "g.nii.gz", {cli::parse_amplitude_override("bladder=-10")}});
    const auto only = anatomy_field<double>(phantom::organs(grid), std::vector<OrganAmplitude>{{2, -10.0}}, SmoothingSpec{3.0});
    CHECK(read_image<double>(dir / "g.nii.gz").channel(1).values().isApprox(
        only.component(1).cast<float>().cast<double>()));
  }

  TEST_CASE("crop writes the region and its box") {
    TempDir dir("cli_crop");
    const VolumeGeometry g({48, 48, 12}, {0.5, 0.5, 3.0});
    const auto f = files::write_phantom(dir.path, "in", g);
    spit(dir / "c.json", "{}");
    const auto rec = cli::run_crop({f.image, f.lesions, f.organs, dir / "c.json", dir / "k"});
    const auto s = phantom::sample(g);
    const std::vector<std::int32_t> adj{1, 2};
    const auto box = compute_crop_box(s.organs, 3, adj, CropOffsets{});
    CHECK(rec.at("box").at("lo").get<std::array<std::int64_t, 3>>() == box.lo);
    CHECK(rec.at("box").at("hi").get<std::array<std::int64_t, 3>>() == box.hi);
    CHECK(json::parse(slurp(dir / "k_crop.json")) == rec);
    CHECK(read_label_volume(dir / "k_organs.nii.gz") == crop_volume(s.organs, box));
    NiftiInfo info;
    read_image<float>(dir / "k_image.nii.gz", &info);
    CHECK(info.geometry.spacing == g.spacing);
  }

  TEST_CASE("eval: report matches the metrics library and is worker-invariant") {
    TempDir dir("cli_eval");
    const VolumeGeometry g({12, 12, 4}, {1, 1, 1});
    std::vector<CaseResult> direct;
    json manifest{{"cases", json::array()}}, manifest_b{{"cases", json::array()}};
    for (int i = 0; i < 10; ++i) {
      LabelVolume gt(g);
      ScalarVolume prob(g), prob_b(g);
      const bool positive = i % 3 != 0;
      if (positive) phantom::fill_box(gt, {2, 2, 1}, {5, 5, 3}, 1);
      // Detections of varying confidence; some miss, some are strays.
      for (std::int64_t z = 1; z < 3; ++z)
        for (std::int64_t y = 2; y < 5; ++y)
          for (std::int64_t x = 2 + (i % 4 == 1 ? 5 : 0); x < 5 + (i % 4 == 1 ? 5 : 0); ++x) {
            prob(x, y, z) = 0.5 + 0.045 * i;
            prob_b(x, y, z) = std::min(1.0, 0.55 + 0.045 * i);
          }
      if (i == 7) prob(10, 10, 3) = 0.97;
      const std::string id = "case" + std::to_string(i);
      write_volume(dir / (id + "_p.nii.gz"), prob);
      write_volume(dir / (id + "_q.nii.gz"), prob_b);
      write_label_volume(dir / (id + "_gt.nii.gz"), gt);
      manifest["cases"].push_back({{"id", id}, {"prediction", id + "_p.nii.gz"}, {"ground_truth", id + "_gt.nii.gz"}});
      manifest_b["cases"].push_back(
          {{"id", id}, {"prediction", id + "_q.nii.gz"}, {"ground_truth", id + "_gt.nii.gz"}, {"patient_label", positive}});
      direct.push_back(make_case_result(id, read_scalar_volume(dir / (id + "_p.nii.gz")), gt, std::nullopt));
    }
    spit(dir / "m.json", manifest.dump());
    spit(dir / "mb.json", manifest_b.dump());
    spit(dir / "c.json", R"({"metrics": {"bootstrap_replications": 200}})");

    cli::EvalArgs a{dir / "m.json", dir / "c.json", dir / "r1.json", dir / "mb.json", 9, 1};
    const auto rep = cli::run_eval(a);
    std::vector<double> sc;
    std::vector<int> lb;
    for (const auto& c : direct) {
      sc.push_back(c.patient_score);
      lb.push_back(c.patient_label);
    }
    const auto roc = roc_and_pauroc(sc, lb, 0.7875);
    CHECK(rep.at("patient").at("pauroc") == roc.pauroc);
    CHECK(rep.at("patient").at("f1").at("f1") == f1_at_sensitivity(sc, lb, 0.875).f1);
    const auto op = sensitivity_at_fp(froc(direct, 0.1), 0.32);
    CHECK(rep.at("lesion").at("detected") == op.detected);
    CHECK(rep.at("lesion_count") == 6);
    CHECK(rep.at("comparison").at("f1").at("replications").get<int>() +
              rep.at("comparison").at("f1").at("skipped_replications").get<int>() ==
          200);
    const double p = rep.at("comparison").at("pauroc").at("p_value");
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    CHECK(slurp(dir / "r1_roc.csv").rfind("threshold,fpr,tpr\ninf,0,0\n", 0) == 0);
    CHECK(slurp(dir / "r1_froc.csv").rfind("threshold,fp_per_scan,sensitivity,tp,fp\n", 0) == 0);

    a.report = dir / "r4.json";
    a.workers = 4;
    cli::run_eval(a);
    auto j1 = json::parse(slurp(dir / "r1.json")), j4 = json::parse(slurp(dir / "r4.json"));
    j1.erase("outputs");
    j4.erase("outputs");
    CHECK(j1.dump() == j4.dump());
    CHECK(slurp(dir / "r1_froc.csv") == slurp(dir / "r4_froc.csv"));
  }

  TEST_CASE("turing-batch: blinded, complete and reproducible") {
    TempDir dir("cli_turing");
    json list{{"cases", json::array()}};
    for (int i = 0; i < 5; ++i) {
      const auto f = files::write_phantom(dir.path, "case" + std::to_string(i), VolumeGeometry({20, 20, 6}, {1, 1, 2}), 1);
      list["cases"].push_back({{"id", "p" + std::to_string(i)},
                               {"image", f.image.filename().string()},
                               {"lesions", f.lesions.filename().string()},
                               {"organs", f.organs.filename().string()}});
    }
    spit(dir / "list.json", list.dump());
    spit(dir / "c.json",
         R"({"smoothing": {"sigma_inplane": 3}, "elastic": {"alpha": 2, "sigma": 3},
             "organs": [{"label": 1, "c_max": 60}, {"label": 2, "c_max": 30}]})");

    cli::TuringArgs a{dir / "list.json", dir / "c.json", dir / "out1", dir / "key1.json", 17, true, 1};
    const auto summary = cli::run_turing_batch(a);
    CHECK(summary.at("samples") == 15);
    CHECK_FALSE(summary.dump().find("variant") != std::string::npos);
    const auto key = json::parse(slurp(dir / "key1.json"));
    std::map<std::string, int> per_variant;
    std::set<std::string> names;
    for (const auto& s : key.at("samples")) {
      ++per_variant[s.at("variant")];
      names.insert(s.at("name").get<std::string>());
      CHECK(fs::exists(dir / "out1" / (s.at("name").get<std::string>() + ".nii.gz")));
      if (s.at("variant") == "original") {
        const auto id = s.at("case_id").get<std::string>();
        CHECK(read_image<float>(dir / "out1" / (s.at("name").get<std::string>() + ".nii.gz")) ==
              read_image<float>(dir / ("case" + id.substr(1) + "_image.nii.gz")));
      }
    }
    CHECK(names.size() == 15);
    CHECK(per_variant["original"] == 5);
    CHECK(per_variant["anatomy"] == 5);
    CHECK(per_variant["elastic"] == 5);
    // Names do not follow case order.
    bool shuffled = false;
    for (std::size_t i = 0; i < 15; ++i)
      shuffled = shuffled || key.at("samples")[i].at("case_id") != "p" + std::to_string(i / 3);
    CHECK(shuffled);

    a.out_dir = dir / "out4";
    a.answer_key = dir / "key4.json";
    a.workers = 4;
    cli::run_turing_batch(a);
    CHECK(slurp(dir / "key1.json") == slurp(dir / "key4.json"));
    for (const auto& s : key.at("samples")) {
      const auto n = s.at("name").get<std::string>() + ".nii.gz";
      CHECK(slurp(dir / "out1" / n) == slurp(dir / "out4" / n));
    }

    // One variant per case by default.
    a.all_variants = false;
    a.out_dir = dir / "single";
    a.answer_key.reset();
    CHECK(cli::run_turing_batch(a).at("samples") == 5);
    CHECK(fs::exists(dir / "single" / "answer_key.json"));
  }

  TEST_CASE("errors are machine-readable on stderr with a nonzero exit") {
    TempDir dir("cli_err");
    const auto f = files::write_phantom(dir.path, "in", VolumeGeometry({8, 8, 4}, {1, 1, 1}));
    spit(dir / "c.json", "{}");
    spit(dir / "bad.json", R"({"sigma": 3})");

    auto r = run_binary("field " + q(dir / "missing.nii.gz") + " " + q(dir / "c.json") + " " + q(dir / "o.nii"), dir);
    CHECK(r.status == 1);
    CHECK(json::parse(r.err).at("error").at("kind") == "io");

    r = run_binary("field " + q(f.organs) + " " + q(dir / "bad.json") + " " + q(dir / "o.nii"), dir);
    CHECK(r.status == 1);
    CHECK(json::parse(r.err).at("error").at("kind") == "config");
    CHECK(json::parse(r.err).at("error").at("message").get<std::string>().find("sigma") != std::string::npos);

    r = run_binary("deform " + q(f.image), dir);
    CHECK(r.status == 2);
    CHECK(json::parse(r.err).at("error").at("kind") == "usage");

    r = run_binary("field " + q(f.organs) + " " + q(dir / "c.json") + " " + q(dir / "o.nii") + " --amplitude liver=3",
                   dir);
    CHECK(r.status == 1);
    CHECK(json::parse(r.err).at("error").at("kind") == "usage");
    CHECK_FALSE(fs::exists(dir / "o.nii"));

    spit(dir / "m.json", R"({"cases": [{"id": "a"}]})");
    r = run_binary("eval " + q(dir / "m.json") + " " + q(dir / "c.json") + " " + q(dir / "r.json"), dir);
    CHECK(r.status == 1);
    CHECK(json::parse(r.err).at("error").at("kind") == "manifest");

    CHECK_THROWS_AS(cli::parse_amplitude_override("1=abc"), cli::CliError);
    CHECK_THROWS_AS(cli::parse_amplitude_override("=3"), cli::CliError);
    CHECK(cli::parse_amplitude_override("rectum=-12.5").amplitude == -12.5);
  }
}
