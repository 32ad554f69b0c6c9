#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "karma/error.hpp"
#include "karma/tensor.hpp"

namespace karma {

/// Layout: "TNSR", u32 version, u32 dtype, u32 rank, u64 dims[rank], then the
/// payload. Everything little-endian.
enum class Dtype : std::uint32_t { f64 = 1, u8 = 2 };

constexpr std::uint32_t kTensorFileVersion = 1;

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};
class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};
class UnknownDtypeError : public FormatError {
 public:
  using FormatError::FormatError;
};

struct RawTensor {
  Dtype dtype = Dtype::f64;
  std::vector<std::uint64_t> dims;
  std::vector<double> f64;
  std::vector<std::uint8_t> u8;

  std::uint64_t numel() const;
  static RawTensor from(const Tensor& t);
  static RawTensor bytes(std::vector<std::uint64_t> dims, std::vector<std::uint8_t> values);
  /// f64 payload as a Tensor (rank 0 becomes shape [1]).
  Tensor to_tensor() const;
};

std::string encode_tensor(const RawTensor& t);
RawTensor decode_tensor(std::span<const char> bytes, const std::string& origin = "<memory>");

void write_tensor(const std::filesystem::path& path, const RawTensor& t);
RawTensor read_tensor(const std::filesystem::path& path);

}  // namespace karma
