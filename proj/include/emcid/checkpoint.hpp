#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "emcid/bench.hpp"
#include "emcid/matrix.hpp"
#include "emcid/stage1.hpp"
#include "emcid/stage2.hpp"

namespace emcid {

// Container file layout:
//   8-byte magic "EMCIDCKP" | u32 version (little-endian) | u64 metadata
//   length | UTF-8 JSON metadata | raw little-endian float64 payloads in
//   the order declared by metadata["tensors"].
// Offsets are relative to the payload start, non-overlapping and
// in-bounds; save -> load round trips bit-identically on any host because
// byte order is explicit.
class Checkpoint {
 public:
  static constexpr uint32_t kVersion = 1;

  std::map<std::string, Matrix> tensors;  // ordered: deterministic layout
  nlohmann::json metadata;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  const Matrix& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const { return tensors.count(name) > 0; }
};

// Model <-> container adapters.
void put_encoder(Checkpoint& ckpt, const EncoderModel& m);
EncoderModel take_encoder(const Checkpoint& ckpt);
void put_denoiser(Checkpoint& ckpt, const DenoiserModel& m);
DenoiserModel take_denoiser(const Checkpoint& ckpt);
void put_model_pair(Checkpoint& ckpt, const ModelPair& pair);
ModelPair take_model_pair(const Checkpoint& ckpt);

// Stage-I payload archive under the stage1/ namespace.
void put_payloads(Checkpoint& ckpt, const std::vector<LayerEditPayload>& payloads);
std::vector<LayerEditPayload> take_payloads(const Checkpoint& ckpt);

// Covariance stats under cov/layer_<l>.
void put_covariances(Checkpoint& ckpt, const std::map<int, CovarianceStats>& covs);
std::map<int, CovarianceStats> take_covariances(const Checkpoint& ckpt);

}  // namespace emcid
