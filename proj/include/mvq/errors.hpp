#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mvq {

/// Base class for all recoverable errors thrown by this library.
/// kind() is a stable machine-readable tag; the CLI exposes it in its
/// error JSON and maps it to an exit code.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define MVQ_DEFINE_ERROR(Name)                                         \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& message) : Error(#Name, message) {} \
  }

// Geometry
MVQ_DEFINE_ERROR(DegenerateConic);
MVQ_DEFINE_ERROR(NotAnEllipsoid);
MVQ_DEFINE_ERROR(BehindCamera);
MVQ_DEFINE_ERROR(DegenerateInput);

// Encoding
MVQ_DEFINE_ERROR(VisibilityOutOfRange);

// Losses
MVQ_DEFINE_ERROR(SingularCovariance);
MVQ_DEFINE_ERROR(EmptyBatch);

// Estimation
MVQ_DEFINE_ERROR(InsufficientViews);
MVQ_DEFINE_ERROR(IllConditioned);
MVQ_DEFINE_ERROR(DivergedFit);
MVQ_DEFINE_ERROR(AllViewsDropped);

// Experiment / IO
MVQ_DEFINE_ERROR(DanglingReference);
MVQ_DEFINE_ERROR(ConfigParse);
MVQ_DEFINE_ERROR(IoFailure);

#undef MVQ_DEFINE_ERROR

}  // namespace mvq
