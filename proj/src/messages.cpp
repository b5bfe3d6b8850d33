#include "fedbnr/messages.hpp"

#include <bit>
#include <cstring>

#include "fedbnr/errors.hpp"

namespace fedbnr::msgs {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
}

struct Reader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t at = 0;

  std::uint8_t u8() {
    if (at + 1 > bytes.size()) throw ParseError("message truncated");
    return bytes[at++];
  }

  std::uint32_t u32() {
    if (at + 4 > bytes.size()) throw ParseError("message truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(bytes[at + static_cast<std::size_t>(i)])
           << (8 * i);
    }
    at += 4;
    return v;
  }

  double f64() {
    if (at + 8 > bytes.size()) throw ParseError("message truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(bytes[at + static_cast<std::size_t>(i)])
           << (8 * i);
    }
    at += 8;
    return std::bit_cast<double>(v);
  }
};

void put_matrix(std::vector<std::uint8_t>& out, const Matrix& m) {
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      put_f64(out, m(i, j));
    }
  }
}

void put_vector(std::vector<std::uint8_t>& out, const Vector& v) {
  put_matrix(out, Matrix(Eigen::Map<const Matrix>(v.data(), v.size(), 1)));
}

Matrix read_matrix(Reader& r) {
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  // validate the declared size against the frame before allocating
  const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
  if (count > (r.bytes.size() - r.at) / 8) {
    throw ParseError("declared payload exceeds the frame size");
  }
  Matrix m(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i) {
    for (std::uint32_t j = 0; j < cols; ++j) {
      m(i, j) = r.f64();
    }
  }
  return m;
}

Vector read_vector(Reader& r) {
  const Matrix m = read_matrix(r);
  if (m.cols() != 1) throw ParseError("expected a column vector payload");
  return m.col(0);
}

}  // namespace

Tag tag_of(const Message& msg) {
  return std::visit(
      [](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ModelBroadcast>) {
          return Tag::ModelBroadcast;
        } else if constexpr (std::is_same_v<T, ClientModelUpdate>) {
          return Tag::ClientModelUpdate;
        } else if constexpr (std::is_same_v<T, ScatterMatrix>) {
          return Tag::ScatterMatrix;
        } else if constexpr (std::is_same_v<T, PrecisionBroadcast>) {
          return Tag::PrecisionBroadcast;
        } else if constexpr (std::is_same_v<T, IntermediateWeights>) {
          return Tag::IntermediateWeights;
        } else {
          return Tag::GlobalWeights;
        }
      },
      msg);
}

std::vector<std::uint8_t> serialize(const Message& msg) {
  std::vector<std::uint8_t> out;
  out.push_back(static_cast<std::uint8_t>(tag_of(msg)));
  std::visit(
      [&out](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ModelBroadcast>) {
          put_vector(out, m.params);
          put_matrix(out, m.omegas);
        } else if constexpr (std::is_same_v<T, ClientModelUpdate>) {
          put_vector(out, m.params);
        } else if constexpr (std::is_same_v<T, ScatterMatrix>) {
          put_matrix(out, m.scatter);
        } else if constexpr (std::is_same_v<T, PrecisionBroadcast>) {
          put_matrix(out, m.chol_lower);
        } else if constexpr (std::is_same_v<T, IntermediateWeights>) {
          put_vector(out, m.weights);
        } else {
          put_vector(out, m.weights);
        }
      },
      msg);
  return out;
}

Message deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  const auto tag = static_cast<Tag>(r.u8());
  Message out = [&]() -> Message {
    switch (tag) {
      case Tag::ModelBroadcast: {
        ModelBroadcast m;
        m.params = read_vector(r);
        m.omegas = read_matrix(r);
        return m;
      }
      case Tag::ClientModelUpdate:
        return ClientModelUpdate{read_vector(r)};
      case Tag::ScatterMatrix: {
        ScatterMatrix m{read_matrix(r)};
        if (m.scatter.rows() != m.scatter.cols()) {
          throw ParseError("scatter matrix must be square");
        }
        if (symmetry_gap(m.scatter) > 1e-10) {
          throw ParseError("scatter matrix is not symmetric within 1e-10");
        }
        return m;
      }
      case Tag::PrecisionBroadcast:
        return PrecisionBroadcast{read_matrix(r)};
      case Tag::IntermediateWeights:
        return IntermediateWeights{read_vector(r)};
      case Tag::GlobalWeights:
        return GlobalWeights{read_vector(r)};
    }
    throw ParseError("unknown message tag");
  }();
  if (r.at != bytes.size()) {
    throw ParseError("trailing bytes after message payload");
  }
  return out;
}

}  // namespace fedbnr::msgs
