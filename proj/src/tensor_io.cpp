#include "karma/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace karma {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

std::uint64_t RawTensor::numel() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

RawTensor RawTensor::from(const Tensor& t) {
  RawTensor r;
  r.dtype = Dtype::f64;
  r.dims.assign(t.shape().begin(), t.shape().end());
  r.f64.assign(t.data().begin(), t.data().end());
  return r;
}

RawTensor RawTensor::bytes(std::vector<std::uint64_t> dims, std::vector<std::uint8_t> values) {
  RawTensor r;
  r.dtype = Dtype::u8;
  r.dims = std::move(dims);
  r.u8 = std::move(values);
  if (r.u8.size() != r.numel()) throw DimensionError("u8 payload does not match dims");
  return r;
}

Tensor RawTensor::to_tensor() const {
  if (dtype != Dtype::f64) throw FormatError("expected an f64 tensor");
  Shape s(dims.begin(), dims.end());
  if (s.empty()) s = {1};
  return Tensor(s, f64);
}

namespace {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(std::span<const char> b, const std::string& origin) : b_(b), origin_(origin) {}
  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(std::uint64_t n, const char* what) const {
    if (n > b_.size() - pos_) {
      throw TruncatedError(origin_ + ": truncated " + what + " (need " + std::to_string(n) + " bytes, have " +
                           std::to_string(b_.size() - pos_) + ")");
    }
  }
  const char* here() const { return b_.data() + pos_; }
  void skip(std::size_t n) { pos_ += n; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const char> b_;
  std::size_t pos_ = 0;
  const std::string& origin_;
};

}  // namespace

std::string encode_tensor(const RawTensor& t) {
  const std::uint64_t n = t.numel();
  if ((t.dtype == Dtype::f64 && t.f64.size() != n) || (t.dtype == Dtype::u8 && t.u8.size() != n))
    throw DimensionError("tensor payload does not match dims");
  std::string out("TNSR");
  put(out, kTensorFileVersion);
  put(out, static_cast<std::uint32_t>(t.dtype));
  put(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) put(out, d);
  if (t.dtype == Dtype::f64) out.append(reinterpret_cast<const char*>(t.f64.data()), n * sizeof(double));
  else out.append(reinterpret_cast<const char*>(t.u8.data()), n);
  return out;
}

RawTensor decode_tensor(std::span<const char> bytes, const std::string& origin) {
  Reader in(bytes, origin);
  in.need(4, "magic");
  if (std::memcmp(in.here(), "TNSR", 4) != 0) throw BadMagicError(origin + ": not a TNSR file");
  in.skip(4);
  const auto version = in.get<std::uint32_t>("header");
  if (version != kTensorFileVersion) throw FormatError(origin + ": unsupported version " + std::to_string(version));
  const auto code = in.get<std::uint32_t>("header");
  if (code != 1 && code != 2) throw UnknownDtypeError(origin + ": unknown dtype code " + std::to_string(code));
  const auto rank = in.get<std::uint32_t>("header");
  RawTensor t;
  t.dtype = static_cast<Dtype>(code);
  for (std::uint32_t i = 0; i < rank; ++i) t.dims.push_back(in.get<std::uint64_t>("dims"));
  const std::uint64_t n = t.numel();
  const std::uint64_t elem = t.dtype == Dtype::f64 ? sizeof(double) : 1;
  if (n != 0 && elem * n / elem != n) throw FormatError(origin + ": dims overflow");
  in.need(n * elem, "payload");
  if (in.remaining() != n * elem) throw FormatError(origin + ": trailing bytes after payload");
  if (t.dtype == Dtype::f64) {
    t.f64.resize(n);
    std::memcpy(t.f64.data(), in.here(), n * elem);
  } else {
    t.u8.assign(reinterpret_cast<const std::uint8_t*>(in.here()), reinterpret_cast<const std::uint8_t*>(in.here()) + n);
  }
  return t;
}

void write_tensor(const std::filesystem::path& path, const RawTensor& t) {
  const std::string bytes = encode_tensor(t);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

RawTensor read_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes, path.string());
}

}  // namespace karma
