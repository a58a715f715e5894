#pragma once

#include <stdexcept>
#include <string>

namespace nuc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define NUC_DECLARE_ERROR(Name)        \
  class Name : public Error {          \
   public:                             \
    using Error::Error;                \
  }

NUC_DECLARE_ERROR(ConfigError);
NUC_DECLARE_ERROR(InvalidTransformError);
NUC_DECLARE_ERROR(EmptyOverlapError);
NUC_DECLARE_ERROR(RegistrationFailureError);
NUC_DECLARE_ERROR(IllConditionedRegistrationError);
NUC_DECLARE_ERROR(InsufficientOverlapError);
NUC_DECLARE_ERROR(DegeneratePointError);
NUC_DECLARE_ERROR(EvaluationError);
NUC_DECLARE_ERROR(NormalizationError);
NUC_DECLARE_ERROR(InternalError);
NUC_DECLARE_ERROR(IoError);

#undef NUC_DECLARE_ERROR

// Raised when an objective evaluation turns non-finite; carries the stage name.
class DivergenceError : public Error {
 public:
  DivergenceError(std::string stage, const std::string& what)
      : Error(what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace nuc
