#pragma once

#include <map>
#include <string>
#include <vector>

#include "emcid/encoder.hpp"
#include "emcid/stage1.hpp"

namespace emcid {

// Second-moment statistics of preservation keys at one layer. Every token
// position of every corpus prompt counts as a preservation key.
struct CovarianceStats {
  int layer = 0;
  Matrix second_moment;  // d_ff x d_ff, E[k k^T]
  long samples = 0;
  double lambda = 1.0;

  Matrix c0() const { return scale(second_moment, lambda); }
};

// Batch form over explicit key rows (n x d_ff).
CovarianceStats covariance_from_keys(const Matrix& keys, int layer, double lambda);

CovarianceStats estimate_covariance(const EncoderModel& model, const Vocabulary& vocab,
                                    const std::vector<std::string>& corpus, int layer,
                                    double lambda, int workers = 1);

// One encoder pass per prompt, accumulating every requested layer.
std::map<int, CovarianceStats> estimate_covariances(const EncoderModel& model,
                                                    const Vocabulary& vocab,
                                                    const std::vector<std::string>& corpus,
                                                    const std::vector<int>& layers, double lambda,
                                                    int workers = 1);

struct EditReportEntry {
  int layer = 0;
  double frob_delta = 0.0;
  double edit_residual = 0.0;      // ||W* K1 - V1*||_F with the applied K1
  double pre_edit_residual = 0.0;  // ||W0 K1 - V1*||_F
  double stationarity = 0.0;       // relative residual of the optimality identity
  double cond_estimate = 0.0;      // rough condition estimate of the bracket matrix
};

struct EditReport {
  std::vector<EditReportEntry> entries;
  std::string to_csv() const;
};

// W* = W0 + alpha (V1* - W0 K1) K1^T [ (1-alpha) C0 + alpha K1 K1^T ]^{-1}
// Shapes: W0 d_model x d_ff, C0 d_ff x d_ff, K1 d_ff x e, V1* d_model x e.
// Throws SingularBracket when the bracket matrix is not positive definite.
Matrix closed_form_update(const Matrix& w0, const Matrix& c0, const Matrix& k1, const Matrix& v1,
                          double alpha, EditReportEntry* entry = nullptr);

struct EditPlan {
  double alpha = 0.5;
  int layer_lo = 0;
  int layer_hi = 4;  // inclusive; must stay below n_layers - 1
  bool recompute_keys = true;
};

// Applies the closed-form update layer by layer from shallow to deep.
// Values stay the stage-I ones; keys are re-extracted on the partially
// edited model when recompute_keys is set (which needs the requests).
// The input model is untouched; a new model value is returned.
std::pair<EncoderModel, EditReport> edit_model(const EncoderModel& model, const Vocabulary& vocab,
                                               const std::vector<LayerEditPayload>& payloads,
                                               const std::vector<EditRequest>& requests,
                                               const EditPlan& plan,
                                               const std::map<int, CovarianceStats>& covariances);

struct AlphaSweepRow {
  double alpha = 0.0;
  double edit_residual = 0.0;
  double preservation_residual = 0.0;
};

// Residual trade-off on one (W0, C0, K1, V1*) instance. The preservation
// residual is ||(W* - W0) K0||_F when explicit keys are given, otherwise
// sqrt(trace(Delta C0 Delta^T)).
std::vector<AlphaSweepRow> alpha_sweep_instance(const Matrix& w0, const Matrix& c0,
                                                const Matrix& k1, const Matrix& v1,
                                                const std::vector<double>& alphas,
                                                const Matrix* k0 = nullptr);

// Mean residual curves across the edited layers of a model.
std::vector<AlphaSweepRow> alpha_sweep(const EncoderModel& model, const Vocabulary& vocab,
                                       const std::vector<LayerEditPayload>& payloads,
                                       const std::map<int, CovarianceStats>& covariances,
                                       const EditPlan& plan, const std::vector<double>& alphas);

}  // namespace emcid
