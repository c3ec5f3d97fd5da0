#pragma once

#include <stdexcept>
#include <string>

namespace emcid {

// Error categories map onto CLI exit codes: validation -> 2,
// numerical -> 3, io -> 4.
enum class ErrorKind { Validation, Numerical, Io };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string name, const std::string& what)
      : std::runtime_error(name + ": " + what),
        kind_(kind),
        name_(std::move(name)) {}

  ErrorKind kind() const { return kind_; }
  const std::string& name() const { return name_; }

 private:
  ErrorKind kind_;
  std::string name_;
};

#define EMCID_ERROR_TYPE(NAME, KIND)                        \
  class NAME : public Error {                               \
   public:                                                  \
    explicit NAME(const std::string& what)                  \
        : Error(ErrorKind::KIND, #NAME, what) {}            \
  }

EMCID_ERROR_TYPE(DimensionMismatch, Validation);
EMCID_ERROR_TYPE(NonFiniteValue, Validation);
EMCID_ERROR_TYPE(NotPositiveDefinite, Numerical);
EMCID_ERROR_TYPE(NonFiniteEvaluation, Numerical);
EMCID_ERROR_TYPE(UnknownToken, Validation);
EMCID_ERROR_TYPE(InvalidHook, Validation);
EMCID_ERROR_TYPE(SubjectNotFound, Validation);
EMCID_ERROR_TYPE(TimestepOutOfRange, Validation);
EMCID_ERROR_TYPE(DivergedTraining, Numerical);
EMCID_ERROR_TYPE(DivergedOptimization, Numerical);
EMCID_ERROR_TYPE(LastLayerWithTextLoss, Validation);
EMCID_ERROR_TYPE(SingularBracket, Numerical);
EMCID_ERROR_TYPE(EmptyCorpus, Validation);
EMCID_ERROR_TYPE(MissingCovariance, Validation);
EMCID_ERROR_TYPE(MissingPayload, Validation);
EMCID_ERROR_TYPE(UnknownConcept, Validation);
EMCID_ERROR_TYPE(EmptyPromptTier, Validation);
EMCID_ERROR_TYPE(NoHoldoutConcepts, Validation);
EMCID_ERROR_TYPE(AliasNotMisunderstood, Validation);
EMCID_ERROR_TYPE(RatioEstimationFailed, Numerical);
EMCID_ERROR_TYPE(ConfigError, Validation);
EMCID_ERROR_TYPE(IoError, Io);
EMCID_ERROR_TYPE(FormatError, Io);

#undef EMCID_ERROR_TYPE

inline int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Validation: return 2;
    case ErrorKind::Numerical: return 3;
    case ErrorKind::Io: return 4;
  }
  return 1;
}

}  // namespace emcid
