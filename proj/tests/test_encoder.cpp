#include <doctest.h>

#include <fstream>

#include "emcid/encoder.hpp"
#include "emcid/gradcheck.hpp"
#include "emcid/registry.hpp"

using namespace emcid;

namespace {

const std::string kData = EMCID_DATA_DIR;

Vocabulary test_vocab() { return Vocabulary::load(kData + "/vocab.txt"); }

EncoderModel small_model(const Vocabulary& vocab, uint64_t seed = 99) {
  Rng rng(seed);
  EncoderConfig cfg;
  return init_encoder(cfg, vocab.size(), rng);
}

}  // namespace

TEST_CASE("tokenize basics") {
  const Vocabulary vocab = test_vocab();
  const std::vector<int> empty = vocab.tokenize("");
  REQUIRE(empty.size() == 2);
  CHECK(empty[0] == Vocabulary::kBos);
  CHECK(empty[1] == Vocabulary::kEos);

  const std::vector<int> ids = vocab.tokenize("red square");
  REQUIRE(ids.size() == 4);
  CHECK(ids[1] == vocab.id_of("red"));
  CHECK(ids[2] == vocab.id_of("square"));

  CHECK_THROWS_AS(vocab.tokenize("red zeppelin"), UnknownToken);
}

TEST_CASE("tokenize round trip over the corpus") {
  const Vocabulary vocab = test_vocab();
  std::ifstream in(kData + "/corpus.txt");
  REQUIRE(in.good());
  std::string line;
  int count = 0;
  while (std::getline(in, line) && count < 150) {
    if (line.empty()) continue;
    CHECK(vocab.detokenize(vocab.tokenize(line)) == line);
    ++count;
  }
  CHECK(count >= 100);
}

TEST_CASE("registry loads and validates against the vocabulary") {
  const Vocabulary vocab = test_vocab();
  const ConceptRegistry registry = ConceptRegistry::load(kData + "/registry.json");
  registry.validate(vocab);
  CHECK(registry.concepts.size() == 17);
  CHECK(registry.get("red_square").name == "red square");
  CHECK_THROWS_AS(registry.index_of("purple_hexagon"), UnknownConcept);
  const auto alias_prompts = registry.alias_prompts("red_square", 0, PromptTier::Template);
  CHECK(alias_prompts[0] == "an image of a brixel");
}

TEST_CASE("subject position is the final token of the last match") {
  const Vocabulary vocab = test_vocab();
  // [BOS] a red square [EOS]
  CHECK(subject_position_in_prompt(vocab, "a red square", "red square") == 3);
  CHECK(subject_position_in_prompt(vocab, "a red square", "red") == 2);
  // Last occurrence wins.
  CHECK(subject_position_in_prompt(vocab, "a square square", "square") == 3);
  CHECK_THROWS_AS(subject_position_in_prompt(vocab, "a red square", "blue circle"),
                  SubjectNotFound);
}

TEST_CASE("encode is deterministic and hook with zero delta is bit-identical") {
  const Vocabulary vocab = test_vocab();
  const EncoderModel model = small_model(vocab);
  const std::string prompt = "an image of a red square";
  const Matrix base = encode(model, vocab, prompt);
  CHECK(base == encode(model, vocab, prompt));

  HookSpec hook;
  hook.layer = 2;
  hook.pos = subject_position_in_prompt(vocab, prompt, "red square");
  hook.delta = Matrix(1, model.cfg.d_model);
  CHECK(encode(model, vocab, prompt, &hook) == base);
}

TEST_CASE("hook validation") {
  const Vocabulary vocab = test_vocab();
  const EncoderModel model = small_model(vocab);
  HookSpec hook;
  hook.delta = Matrix(1, model.cfg.d_model);
  hook.layer = 99;
  hook.pos = 1;
  CHECK_THROWS_AS(encode(model, vocab, "a red square", &hook), InvalidHook);
  hook.layer = 0;
  hook.pos = 40;
  CHECK_THROWS_AS(encode(model, vocab, "a red square", &hook), InvalidHook);
  hook.pos = 1;
  hook.delta = Matrix(1, 3);
  CHECK_THROWS_AS(encode(model, vocab, "a red square", &hook), InvalidHook);
}

TEST_CASE("hooked MLP outputs change only at the hooked position") {
  const Vocabulary vocab = test_vocab();
  const EncoderModel model = small_model(vocab);
  const std::vector<int> ids = vocab.tokenize("a photo of a blue circle");
  Rng rng(5);
  const Matrix delta = rng.normal_matrix(1, model.cfg.d_model);
  const int layer = 3, pos = 4;

  GradTape plain_tape;
  const EncodeTrace plain =
      encoder_forward(plain_tape, bind_encoder(plain_tape, model, false), ids);
  GradTape hooked_tape;
  const EncoderNodes nodes = bind_encoder(hooked_tape, model, false);
  const NodeId d = hooked_tape.constant(delta);
  const EncodeTrace hooked = encoder_forward(hooked_tape, nodes, ids, layer, pos, d);

  const Matrix& plain_out = plain_tape.value(plain.mlp_out[layer]);
  const Matrix& hooked_out = hooked_tape.value(hooked.mlp_out[layer]);
  for (int r = 0; r < plain_out.rows(); ++r) {
    for (int c = 0; c < plain_out.cols(); ++c) {
      if (r == pos)
        CHECK(hooked_out(r, c) == plain_out(r, c) + delta(0, c));
      else
        CHECK(hooked_out(r, c) == plain_out(r, c));
    }
  }
  // Everything before the hook layer is untouched.
  CHECK(hooked_tape.value(hooked.layer_input[layer]) == plain_tape.value(plain.layer_input[layer]));
  // The embedding does move.
  CHECK(frobenius_norm(sub(hooked_tape.value(hooked.embedding),
                           plain_tape.value(plain.embedding))) > 0.0);
}

TEST_CASE("editing a projection leaves earlier layers bit-identical") {
  const Vocabulary vocab = test_vocab();
  const EncoderModel model = small_model(vocab);
  Rng rng(7);
  const int layer = 2;
  const Matrix w_new = add(model.layers[layer].w_proj,
                           rng.normal_matrix(model.cfg.d_model, model.cfg.d_ff, 0.1));
  const EncoderModel edited = with_projection(model, layer, w_new);
  CHECK(model.layers[layer].w_proj == small_model(vocab).layers[layer].w_proj);  // input untouched

  const std::vector<int> ids = vocab.tokenize("there is a green triangle here");
  GradTape t1, t2;
  const EncodeTrace a = encoder_forward(t1, bind_encoder(t1, model, false), ids);
  const EncodeTrace b = encoder_forward(t2, bind_encoder(t2, edited, false), ids);
  for (int l = 0; l <= layer; ++l) {
    CHECK(t1.value(a.layer_input[l]) == t2.value(b.layer_input[l]));
    CHECK(t1.value(a.mlp_key[l]) == t2.value(b.mlp_key[l]));
  }
  CHECK_FALSE(t1.value(a.mlp_out[layer]) == t2.value(b.mlp_out[layer]));
  CHECK_FALSE(t1.value(a.mlp_key[layer + 1]) == t2.value(b.mlp_key[layer + 1]));
}

TEST_CASE("extract_key determinism, averaging and edit locality") {
  const Vocabulary vocab = test_vocab();
  const EncoderModel model = small_model(vocab);
  const std::vector<std::string> p1{"an image of a red square"};
  const std::vector<std::string> p2{"a photo of a red square"};
  const std::vector<std::string> both{p1[0], p2[0]};
  const int layer = 2;

  const Matrix k1 = extract_key(model, vocab, layer, p1, "red square");
  CHECK(k1 == extract_key(model, vocab, layer, p1, "red square"));

  const Matrix k2 = extract_key(model, vocab, layer, p2, "red square");
  const Matrix mean = extract_key(model, vocab, layer, both, "red square");
  CHECK(frobenius_norm(sub(mean, scale(add(k1, k2), 0.5))) < 1e-15);

  CHECK_THROWS_AS(extract_key(model, vocab, layer, p1, "blue circle"), SubjectNotFound);

  // Editing layer `layer` changes keys above it but not its own.
  Rng rng(13);
  const EncoderModel edited = with_projection(
      model, layer, add(model.layers[layer].w_proj,
                        rng.normal_matrix(model.cfg.d_model, model.cfg.d_ff, 0.2)));
  CHECK(extract_key(edited, vocab, layer, p1, "red square") == k1);
  const Matrix above_before = extract_key(model, vocab, layer + 1, p1, "red square");
  const Matrix above_after = extract_key(edited, vocab, layer + 1, p1, "red square");
  CHECK(frobenius_norm(sub(above_before, above_after)) > 0.0);
}

TEST_CASE("read_value linearity and forward-pass oracle") {
  const Vocabulary vocab = test_vocab();
  const EncoderModel model = small_model(vocab);
  const int layer = 1;

  CHECK(frobenius_norm(read_value(model, layer, Matrix(1, model.cfg.d_ff))) == 0.0);

  Matrix basis(1, model.cfg.d_ff);
  basis(0, 17) = 1.0;
  const Matrix col = read_value(model, layer, basis);
  for (int i = 0; i < model.cfg.d_model; ++i)
    CHECK(col(0, i) == model.layers[layer].w_proj(i, 17));

  Rng rng(21);
  const Matrix ka = rng.normal_matrix(1, model.cfg.d_ff);
  const Matrix kb = rng.normal_matrix(1, model.cfg.d_ff);
  const Matrix lhs = read_value(model, layer, add(scale(ka, 0.3), scale(kb, -1.7)));
  const Matrix rhs =
      add(scale(read_value(model, layer, ka), 0.3), scale(read_value(model, layer, kb), -1.7));
  CHECK(frobenius_norm(sub(lhs, rhs)) < 1e-12);

  CHECK_THROWS_AS(read_value(model, layer, Matrix(1, 3)), DimensionMismatch);

  // v = W k equals the recorded MLP output minus its bias at the subject
  // position.
  const std::string prompt = "a small red square drawn on canvas";
  const int pos = subject_position_in_prompt(vocab, prompt, "red square");
  const Matrix key = extract_key(model, vocab, layer, {{prompt}}, "red square");
  const Matrix v = read_value(model, layer, key);
  GradTape tape;
  const EncodeTrace trace =
      encoder_forward(tape, bind_encoder(tape, model, false), vocab.tokenize(prompt));
  const Matrix& mlp_out = tape.value(trace.mlp_out[layer]);
  for (int c = 0; c < model.cfg.d_model; ++c)
    CHECK(v(0, c) == doctest::Approx(mlp_out(pos, c) - model.layers[layer].b_proj(0, c))
                         .epsilon(1e-12));
}
