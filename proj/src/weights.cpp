#include "cbnet/weights.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <set>

namespace cbnet {
namespace {

constexpr char kMagic[4] = {'C', 'B', 'N', 'W'};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void context(std::string what) { context_ = std::move(what); }
  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw WeightFormatError("CBNW: truncated data while reading " + context_);
  }
  std::uint64_t le(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  std::string context_ = "header";
};

std::size_t element_count(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (std::uint32_t d : dims) n *= d;
  return n;
}

}  // namespace

std::vector<std::uint8_t> encode_weights(const TensorList& tensors) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kWeightFormatVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  std::set<std::string> seen;
  for (const NamedTensor& t : tensors) {
    if (!seen.insert(t.name).second) throw WeightFormatError("CBNW: duplicate tensor name " + t.name);
    if (t.name.size() > 0xffff) throw WeightFormatError("CBNW: tensor name too long: " + t.name);
    if (t.dims.size() > 0xff) throw WeightFormatError("CBNW: too many dims for " + t.name);
    if (element_count(t.dims) != t.data.size()) {
      throw WeightFormatError("CBNW: dims do not match payload for " + t.name);
    }
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (std::uint32_t d : t.dims) w.u32(d);
    for (double v : t.data) w.f64(v);
  }
  return w.take();
}

TensorList decode_weights(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.context("magic");
  if (r.str(4) != std::string(kMagic, 4)) throw WeightFormatError("CBNW: bad magic");
  r.context("version");
  const std::uint32_t version = r.u32();
  if (version != kWeightFormatVersion) {
    throw WeightFormatError("CBNW: unsupported version " + std::to_string(version));
  }
  r.context("tensor count");
  const std::uint32_t count = r.u32();

  TensorList out;
  std::set<std::string> seen;
  for (std::uint32_t t = 0; t < count; ++t) {
    NamedTensor tensor;
    r.context("name of tensor #" + std::to_string(t));
    tensor.name = r.str(r.u16());
    r.context("tensor " + tensor.name);
    if (!seen.insert(tensor.name).second) {
      throw WeightFormatError("CBNW: duplicate tensor name " + tensor.name);
    }
    const std::uint8_t ndim = r.u8();
    tensor.dims.resize(ndim);
    for (auto& d : tensor.dims) d = r.u32();
    const std::size_t n = element_count(tensor.dims);
    if (r.remaining() / 8 < n) throw WeightFormatError("CBNW: truncated payload for tensor " + tensor.name);
    tensor.data.resize(n);
    for (auto& v : tensor.data) v = r.f64();
    out.push_back(std::move(tensor));
  }
  if (r.remaining() != 0) throw WeightFormatError("CBNW: trailing bytes after last tensor");
  return out;
}

void save_weights(const TensorList& tensors, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = encode_weights(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

TensorList load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return decode_weights(bytes);
}

const NamedTensor* find_tensor(const TensorList& tensors, const std::string& name) {
  auto it = std::find_if(tensors.begin(), tensors.end(),
                         [&](const NamedTensor& t) { return t.name == name; });
  return it == tensors.end() ? nullptr : &*it;
}

TensorList export_tensors(std::span<const TensorView> views) {
  TensorList out;
  out.reserve(views.size());
  for (const TensorView& v : views) {
    out.push_back({v.name, v.dims, std::vector<double>(v.value.begin(), v.value.end())});
  }
  return out;
}

void import_tensors(std::span<const TensorView> views, const TensorList& tensors) {
  for (const TensorView& v : views) {
    const NamedTensor* t = find_tensor(tensors, v.name);
    if (!t) throw WeightFormatError("missing tensor " + v.name);
    if (t->dims != v.dims) throw WeightFormatError("dims mismatch for tensor " + v.name);
    std::copy(t->data.begin(), t->data.end(), v.value.begin());
  }
}

}  // namespace cbnet
