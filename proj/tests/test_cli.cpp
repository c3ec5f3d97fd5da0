#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "emcid/csv.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kBin = EMCID_BIN;
const std::string kData = EMCID_DATA_DIR;

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / "emcid_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

int run(const std::string& args) {
  const std::string cmd = kBin + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

// Tiny but real config: short training, small schedule, low sampling
// budget, so the CLI paths stay fast.
std::string write_config(const Workspace& ws, uint64_t seed) {
  json cfg = {
      {"seed", seed},
      {"workers", 2},
      {"paths",
       {{"vocab", kData + "/vocab.txt"},
        {"registry", kData + "/registry.json"},
        {"corpus", kData + "/corpus.txt"},
        {"out_dir", ws.path("out")}}},
      {"encoder", {{"n_layers", 4}, {"d_model", 16}, {"d_ff", 32}, {"n_heads", 2}, {"max_seq", 16}}},
      {"denoiser", {{"hidden", 32}, {"t_dim", 16}, {"blocks", 2}}},
      {"schedule", {{"steps", 10}, {"beta_min", 1e-4}, {"beta_max", 0.05}}},
      {"train", {{"steps", 60}, {"batch", 8}, {"lr", 0.002}, {"contrast_weight", 0.3}}},
      {"stage1",
       {{"steps", 8}, {"lr", 0.2}, {"lambda_s", 0.01}, {"noise_images", 2}, {"noise_timesteps", 2},
        {"objective", "hybrid"}}},
      {"edit", {{"alpha", 0.5}, {"lambda", 1.0}, {"layer_lo", 0}, {"layer_hi", 2},
                {"recompute_keys", true}}},
      {"bench", {{"images_per_cell", 4}, {"oracle_tau", 10.0}}},
  };
  const std::string path = ws.path("config.json");
  emcid::write_text_file(path, cfg.dump(2));
  return path;
}

}  // namespace

TEST_CASE("cli validation failures exit with code 2") {
  Workspace ws;
  json cfg = json::parse(emcid::read_text_file(write_config(ws, 1)));
  cfg["paths"]["registry"] = ws.path("missing_registry.json");
  const std::string bad = ws.path("bad_config.json");
  emcid::write_text_file(bad, cfg.dump());
  CHECK(run("--config " + bad + " train") == 2);

  json bad_alpha = json::parse(emcid::read_text_file(write_config(ws, 1)));
  bad_alpha["edit"]["alpha"] = 1.5;
  const std::string bad2 = ws.path("bad_alpha.json");
  emcid::write_text_file(bad2, bad_alpha.dump());
  CHECK(run("--config " + bad2 + " train") == 2);
}

TEST_CASE("cli end-to-end on a tiny model") {
  Workspace ws;
  const std::string cfg = write_config(ws, 11);

  REQUIRE(run("--config " + cfg + " train") == 0);
  const std::string model = ws.path("out/model.ckpt");
  REQUIRE(fs::exists(model));
  REQUIRE(fs::exists(model + ".provenance.json"));

  // Determinism: retrain into a second directory, byte-identical weights.
  REQUIRE(run("--config " + cfg + " --out " + ws.path("out2") + " train") == 0);
  CHECK(emcid::read_text_file(model) == emcid::read_text_file(ws.path("out2/model.ckpt")));

  REQUIRE(run("--config " + cfg + " covariance --model " + model) == 0);
  const std::string cov = ws.path("out/cov.ckpt");
  REQUIRE(fs::exists(cov));

  // Empty request file -> empty archive, exit 0.
  const std::string empty_requests = ws.path("empty.json");
  emcid::write_text_file(empty_requests, "{\"requests\": []}\n");
  REQUIRE(run("--config " + cfg + " stage1 --model " + model + " --requests " + empty_requests) ==
          0);

  // Two-concept request file.
  json requests = {
      {"requests",
       {{{"id", "red_square"},
         {"subject", "red square"},
         {"source_prompts", {"an image of a red square", "a photo of a red square"}},
         {"dest_prompts", {"an image of a yellow square", "a photo of a yellow square"}},
         {"dest_concept", "yellow_square"}},
        {{"id", "green_circle"},
         {"subject", "green circle"},
         {"source_prompts", {"an image of a green circle", "a photo of a green circle"}},
         {"dest_prompts", {"an image of a yellow circle", "a photo of a yellow circle"}},
         {"dest_concept", "yellow_circle"}}}}};
  const std::string req_path = ws.path("requests.json");
  emcid::write_text_file(req_path, requests.dump(2));
  REQUIRE(run("--config " + cfg + " stage1 --model " + model + " --requests " + req_path) == 0);
  const std::string payloads = ws.path("out/payloads.ckpt");
  REQUIRE(fs::exists(payloads));

  REQUIRE(run("--config " + cfg + " edit --model " + model + " --payloads " + payloads +
              " --cov " + cov + " --requests " + req_path) == 0);
  const std::string edited = ws.path("out/edited.ckpt");
  REQUIRE(fs::exists(edited));
  REQUIRE(fs::exists(ws.path("out/edit_report.csv")));

  // Identity eval: pre == post, all metrics exactly zero.
  REQUIRE(run("--config " + cfg + " eval --pre " + model + " --post " + model + " --requests " +
              req_path) == 0);
  const std::string metrics = emcid::read_text_file(ws.path("out/metrics.csv"));
  CHECK(metrics.rfind("metric,value,n,seed", 0) == 0);
  CHECK(metrics.find("sf,0,") != std::string::npos);
  CHECK(metrics.find("hd,0,") != std::string::npos);

  // Real eval pre vs edited runs and writes the same schema.
  REQUIRE(run("--config " + cfg + " eval --pre " + model + " --post " + edited + " --requests " +
              req_path) == 0);
  const std::string metrics2 = emcid::read_text_file(ws.path("out/metrics.csv"));
  CHECK(metrics2.rfind("metric,value,n,seed", 0) == 0);

  // Residual-level alpha sweep.
  REQUIRE(run("--config " + cfg + " sweep-alpha --model " + model + " --payloads " + payloads +
              " --cov " + cov + " --alphas 0.2 0.5 0.8") == 0);
  CHECK(emcid::read_text_file(ws.path("out/alpha_sweep.csv"))
            .rfind("alpha,edit_residual,preservation_residual", 0) == 0);

  // Input files were never mutated.
  CHECK(emcid::read_text_file(model) == emcid::read_text_file(ws.path("out2/model.ckpt")));
}
