#pragma once

#include <stdexcept>
#include <string>

namespace fedbnr {

struct NotPositiveDefinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnsupportedPrimitive : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LayoutMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NoKdData : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnknownMode : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingTarget : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TooFewRows : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateFeature : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyClient : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TooFewPairs : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fedbnr
