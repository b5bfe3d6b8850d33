#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "fedbnr/linalg.hpp"
#include "fedbnr/params.hpp"

namespace fedbnr::msgs {

// Wire format (little-endian): one byte tag, then per payload matrix a
// u32 row count, u32 column count and rows*cols f64 values in row-major
// order. Payload sizes depend only on the model dimensions, never on the
// client's dataset size.
enum class Tag : std::uint8_t {
  ModelBroadcast = 1,
  ClientModelUpdate = 2,
  ScatterMatrix = 3,
  PrecisionBroadcast = 4,
  IntermediateWeights = 5,
  GlobalWeights = 6,
};

/// Phase-1/2 broadcast of the global model: flat parameters (network
/// weights, log σ, log λ) plus the shared weight samples.
struct ModelBroadcast {
  Vector params;
  Matrix omegas;
};

struct ClientModelUpdate {
  Vector params;
};

/// Φ_c·Φ_cᵀ; symmetric PSD, md x md.
struct ScatterMatrix {
  Matrix scatter;
};

/// A⁻¹ represented by the lower Cholesky factor of A; clients solve
/// against it instead of receiving a dense inverse.
struct PrecisionBroadcast {
  Matrix chol_lower;
};

struct IntermediateWeights {
  Vector weights;
};

struct GlobalWeights {
  Vector weights;
};

using Message =
    std::variant<ModelBroadcast, ClientModelUpdate, ScatterMatrix,
                 PrecisionBroadcast, IntermediateWeights, GlobalWeights>;

std::vector<std::uint8_t> serialize(const Message& msg);

/// Parses a full frame; validates the tag, shapes, and (for ScatterMatrix)
/// symmetry within 1e-10.
Message deserialize(const std::vector<std::uint8_t>& bytes);

Tag tag_of(const Message& msg);

/// serialize → deserialize; the in-process transport used by the
/// orchestrator so every protocol exchange passes through the wire format.
template <typename M>
M wire_transfer(const M& msg) {
  return std::get<M>(deserialize(serialize(Message{msg})));
}

}  // namespace fedbnr::msgs
