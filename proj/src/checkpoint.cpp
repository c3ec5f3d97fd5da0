#include "emcid/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace emcid {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'E', 'M', 'C', 'I', 'D', 'C', 'K', 'P'};

void write_u32(std::ostream& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(char((v >> (8 * i)) & 0xFF));
}

void write_u64(std::ostream& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(char((v >> (8 * i)) & 0xFF));
}

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(in.get())) << (8 * i);
  return v;
}

uint64_t read_u64(std::istream& in) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(in.get())) << (8 * i);
  return v;
}

void write_f64le(std::ostream& out, const double* data, size_t count) {
  for (size_t i = 0; i < count; ++i) {
    const uint64_t bits = std::bit_cast<uint64_t>(data[i]);
    for (int b = 0; b < 8; ++b) out.put(char((bits >> (8 * b)) & 0xFF));
  }
}

void read_f64le(std::istream& in, double* data, size_t count) {
  std::vector<char> buf(count * 8);
  in.read(buf.data(), std::streamsize(buf.size()));
  for (size_t i = 0; i < count; ++i) {
    uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= uint64_t(uint8_t(buf[i * 8 + b])) << (8 * b);
    data[i] = std::bit_cast<double>(bits);
  }
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  json meta = metadata;
  meta["dtype"] = "f64le";
  json tensor_list = json::array();
  uint64_t offset = 0;
  for (const auto& [name, m] : tensors) {
    json t;
    t["name"] = name;
    t["rows"] = m.rows();
    t["cols"] = m.cols();
    t["offset"] = offset;
    tensor_list.push_back(t);
    offset += m.size() * sizeof(double);
  }
  meta["tensors"] = tensor_list;
  const std::string meta_str = meta.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kMagic, 8);
  write_u32(out, kVersion);
  write_u64(out, meta_str.size());
  out.write(meta_str.data(), std::streamsize(meta_str.size()));
  for (const auto& [name, m] : tensors) write_f64le(out, m.data(), m.size());
  if (!out) throw IoError("checkpoint write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError("not an EMCIDCKP container: " + path);
  const uint32_t version = read_u32(in);
  if (version != kVersion)
    throw FormatError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kVersion) + ")");
  const uint64_t meta_len = read_u64(in);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), std::streamsize(meta_len));
  if (!in) throw FormatError("truncated checkpoint metadata: " + path);

  Checkpoint ckpt;
  try {
    ckpt.metadata = json::parse(meta_str);
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint metadata parse error: ") + e.what());
  }
  if (ckpt.metadata.value("dtype", "") != "f64le")
    throw FormatError("checkpoint dtype must be f64le");

  const std::streampos payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  const uint64_t payload_size = uint64_t(in.tellg() - payload_start);

  uint64_t expected_offset = 0;
  for (const auto& t : ckpt.metadata.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const int rows = t.at("rows").get<int>();
    const int cols = t.at("cols").get<int>();
    const uint64_t offset = t.at("offset").get<uint64_t>();
    const uint64_t bytes = uint64_t(rows) * cols * sizeof(double);
    if (offset != expected_offset)
      throw FormatError("tensor '" + name + "' offset overlaps or leaves a gap");
    if (offset + bytes > payload_size)
      throw FormatError("tensor '" + name + "' extends past the payload");
    expected_offset = offset + bytes;

    Matrix m(rows, cols);
    in.seekg(payload_start + std::streampos(offset));
    read_f64le(in, m.data(), m.size());
    if (!in) throw FormatError("truncated tensor payload for '" + name + "'");
    ckpt.tensors.emplace(name, std::move(m));
  }
  if (expected_offset != payload_size)
    throw FormatError("checkpoint has " + std::to_string(payload_size - expected_offset) +
                      " trailing payload bytes");
  ckpt.metadata.erase("tensors");
  ckpt.metadata.erase("dtype");
  return ckpt;
}

const Matrix& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw FormatError("checkpoint lacks tensor '" + name + "'");
  return it->second;
}

void put_encoder(Checkpoint& ckpt, const EncoderModel& m) {
  for (const auto& [name, w] : encoder_named_params(m)) ckpt.tensors[name] = *w;
  ckpt.metadata["encoder"] = {{"n_layers", m.cfg.n_layers}, {"d_model", m.cfg.d_model},
                              {"d_ff", m.cfg.d_ff},         {"n_heads", m.cfg.n_heads},
                              {"max_seq", m.cfg.max_seq}};
}

EncoderModel take_encoder(const Checkpoint& ckpt) {
  const auto& meta = ckpt.metadata.at("encoder");
  EncoderConfig cfg;
  cfg.n_layers = meta.at("n_layers").get<int>();
  cfg.d_model = meta.at("d_model").get<int>();
  cfg.d_ff = meta.at("d_ff").get<int>();
  cfg.n_heads = meta.at("n_heads").get<int>();
  cfg.max_seq = meta.at("max_seq").get<int>();
  EncoderModel m;
  m.cfg = cfg;
  m.layers.resize(cfg.n_layers);
  const auto names = encoder_named_params(m);
  const auto params = encoder_params(m);  // same canonical order
  for (size_t i = 0; i < names.size(); ++i) *params[i] = ckpt.tensor(names[i].first);
  return m;
}

void put_denoiser(Checkpoint& ckpt, const DenoiserModel& m) {
  for (const auto& [name, w] : denoiser_named_params(m)) ckpt.tensors[name] = *w;
  ckpt.metadata["denoiser"] = {{"x_dim", m.cfg.x_dim},
                               {"hidden", m.cfg.hidden},
                               {"t_dim", m.cfg.t_dim},
                               {"c_dim", m.cfg.c_dim},
                               {"blocks", m.cfg.blocks}};
}

DenoiserModel take_denoiser(const Checkpoint& ckpt) {
  const auto& meta = ckpt.metadata.at("denoiser");
  DenoiserConfig cfg;
  cfg.x_dim = meta.at("x_dim").get<int>();
  cfg.hidden = meta.at("hidden").get<int>();
  cfg.t_dim = meta.at("t_dim").get<int>();
  cfg.c_dim = meta.at("c_dim").get<int>();
  cfg.blocks = meta.at("blocks").get<int>();
  DenoiserModel m;
  m.cfg = cfg;
  m.blocks.resize(cfg.blocks);
  const auto names = denoiser_named_params(m);
  const auto params = denoiser_params(m);  // same canonical order
  for (size_t i = 0; i < names.size(); ++i) *params[i] = ckpt.tensor(names[i].first);
  return m;
}

void put_model_pair(Checkpoint& ckpt, const ModelPair& pair) {
  put_encoder(ckpt, pair.encoder);
  put_denoiser(ckpt, pair.denoiser);
}

ModelPair take_model_pair(const Checkpoint& ckpt) {
  return {take_encoder(ckpt), take_denoiser(ckpt)};
}

void put_payloads(Checkpoint& ckpt, const std::vector<LayerEditPayload>& payloads) {
  json list = json::array();
  for (const auto& p : payloads) {
    const std::string base =
        "stage1/" + p.concept_id + "/layer_" + std::to_string(p.layer) + "/";
    ckpt.tensors[base + "key"] = p.key;
    ckpt.tensors[base + "value"] = p.value;
    ckpt.tensors[base + "delta"] = p.delta;
    ckpt.tensors[base + "new_value"] = p.new_value;
    json meta;
    meta["concept"] = p.concept_id;
    meta["layer"] = p.layer;
    meta["loss_txt"] = p.final_loss.txt;
    meta["loss_noise"] = p.final_loss.noise;
    meta["loss_hybrid"] = p.final_loss.hybrid;
    list.push_back(meta);
  }
  ckpt.metadata["stage1_payloads"] = list;
}

std::vector<LayerEditPayload> take_payloads(const Checkpoint& ckpt) {
  std::vector<LayerEditPayload> out;
  if (!ckpt.metadata.contains("stage1_payloads")) return out;
  for (const auto& meta : ckpt.metadata.at("stage1_payloads")) {
    LayerEditPayload p;
    p.concept_id = meta.at("concept").get<std::string>();
    p.layer = meta.at("layer").get<int>();
    p.final_loss.txt = meta.at("loss_txt").get<double>();
    p.final_loss.noise = meta.at("loss_noise").get<double>();
    p.final_loss.hybrid = meta.at("loss_hybrid").get<double>();
    const std::string base =
        "stage1/" + p.concept_id + "/layer_" + std::to_string(p.layer) + "/";
    p.key = ckpt.tensor(base + "key");
    p.value = ckpt.tensor(base + "value");
    p.delta = ckpt.tensor(base + "delta");
    p.new_value = ckpt.tensor(base + "new_value");
    out.push_back(std::move(p));
  }
  return out;
}

void put_covariances(Checkpoint& ckpt, const std::map<int, CovarianceStats>& covs) {
  json list = json::array();
  for (const auto& [layer, stats] : covs) {
    ckpt.tensors["cov/layer_" + std::to_string(layer)] = stats.second_moment;
    json meta;
    meta["layer"] = layer;
    meta["samples"] = stats.samples;
    meta["lambda"] = stats.lambda;
    list.push_back(meta);
  }
  ckpt.metadata["covariances"] = list;
}

std::map<int, CovarianceStats> take_covariances(const Checkpoint& ckpt) {
  std::map<int, CovarianceStats> out;
  if (!ckpt.metadata.contains("covariances")) return out;
  for (const auto& meta : ckpt.metadata.at("covariances")) {
    CovarianceStats stats;
    stats.layer = meta.at("layer").get<int>();
    stats.samples = meta.at("samples").get<long>();
    stats.lambda = meta.at("lambda").get<double>();
    stats.second_moment = ckpt.tensor("cov/layer_" + std::to_string(stats.layer));
    out.emplace(stats.layer, std::move(stats));
  }
  return out;
}

}  // namespace emcid
