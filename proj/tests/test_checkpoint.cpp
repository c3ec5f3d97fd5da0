#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "emcid/checkpoint.hpp"
#include "emcid/csv.hpp"
#include "emcid/sha1.hpp"

using namespace emcid;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-identical") {
  Rng rng(1);
  Checkpoint ckpt;
  ckpt.tensors["a"] = rng.normal_matrix(3, 4);
  ckpt.tensors["b/nested"] = rng.normal_matrix(1, 7);
  ckpt.metadata["seed"] = 42;
  ckpt.metadata["note"] = "round trip";
  const std::string p1 = temp_path("emcid_rt1.ckpt");
  const std::string p2 = temp_path("emcid_rt2.ckpt");
  ckpt.save(p1);

  const Checkpoint loaded = Checkpoint::load(p1);
  CHECK(loaded.tensor("a") == ckpt.tensor("a"));
  CHECK(loaded.tensor("b/nested") == ckpt.tensor("b/nested"));
  CHECK(loaded.metadata.at("seed").get<int>() == 42);

  loaded.save(p2);
  CHECK(read_text_file(p1) == read_text_file(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("checkpoint rejects bad magic, version and trailing bytes") {
  Rng rng(2);
  Checkpoint ckpt;
  ckpt.tensors["w"] = rng.normal_matrix(2, 2);
  const std::string path = temp_path("emcid_bad.ckpt");
  ckpt.save(path);

  std::string bytes = read_text_file(path);
  std::string corrupted = bytes;
  corrupted[0] = 'X';
  write_text_file(path, corrupted);
  CHECK_THROWS_AS(Checkpoint::load(path), FormatError);

  corrupted = bytes;
  corrupted[8] = char(9);  // version field
  write_text_file(path, corrupted);
  CHECK_THROWS_AS(Checkpoint::load(path), FormatError);

  write_text_file(path, bytes + "zz");
  CHECK_THROWS_AS(Checkpoint::load(path), FormatError);

  write_text_file(path, bytes.substr(0, bytes.size() - 4));
  CHECK_THROWS_AS(Checkpoint::load(path), FormatError);

  std::remove(path.c_str());
  CHECK_THROWS_AS(Checkpoint::load(path), IoError);
}

TEST_CASE("model pair survives the container") {
  const Vocabulary vocab = Vocabulary::load(std::string(EMCID_DATA_DIR) + "/vocab.txt");
  Rng rng(3);
  EncoderConfig ecfg;
  ModelPair pair{init_encoder(ecfg, vocab.size(), rng), init_denoiser(DenoiserConfig{}, rng)};
  Checkpoint ckpt;
  put_model_pair(ckpt, pair);
  const std::string path = temp_path("emcid_models.ckpt");
  ckpt.save(path);
  const ModelPair back = take_model_pair(Checkpoint::load(path));
  const auto a = encoder_named_params(pair.encoder);
  const auto b = encoder_named_params(back.encoder);
  for (size_t i = 0; i < a.size(); ++i) CHECK(*a[i].second == *b[i].second);
  const auto da = denoiser_named_params(pair.denoiser);
  const auto db = denoiser_named_params(back.denoiser);
  for (size_t i = 0; i < da.size(); ++i) CHECK(*da[i].second == *db[i].second);
  std::remove(path.c_str());
}

TEST_CASE("payload and covariance namespaces survive the container") {
  Rng rng(4);
  LayerEditPayload p;
  p.concept_id = "red_square";
  p.layer = 3;
  p.key = rng.normal_matrix(1, 16);
  p.value = rng.normal_matrix(1, 8);
  p.delta = rng.normal_matrix(1, 8);
  p.new_value = add(p.value, p.delta);
  p.final_loss = {0.5, 1.25, 1.255};

  CovarianceStats cov;
  cov.layer = 2;
  cov.second_moment = rng.normal_matrix(16, 16);
  cov.samples = 321;
  cov.lambda = 2.5;

  Checkpoint ckpt;
  put_payloads(ckpt, {p});
  put_covariances(ckpt, {{2, cov}});
  const std::string path = temp_path("emcid_archive.ckpt");
  ckpt.save(path);

  const Checkpoint loaded = Checkpoint::load(path);
  const auto payloads = take_payloads(loaded);
  REQUIRE(payloads.size() == 1);
  CHECK(payloads[0].concept_id == "red_square");
  CHECK(payloads[0].layer == 3);
  CHECK(payloads[0].key == p.key);
  CHECK(payloads[0].new_value == p.new_value);
  CHECK(payloads[0].final_loss.hybrid == doctest::Approx(1.255));

  const auto covs = take_covariances(loaded);
  REQUIRE(covs.count(2) == 1);
  CHECK(covs.at(2).second_moment == cov.second_moment);
  CHECK(covs.at(2).samples == 321);
  CHECK(covs.at(2).lambda == 2.5);
  std::remove(path.c_str());
}

TEST_CASE("sha1 known vectors and git blob hash") {
  CHECK(sha1_hex(std::string("")) == "da39a3ee5e6b4b0d3255bfef95601890afd80709");
  CHECK(sha1_hex(std::string("abc")) == "a9993e364706816aba3e25717850c26c9cd0d89d");
  // `echo -n "" | git hash-object --stdin` == e69de29...
  CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}
