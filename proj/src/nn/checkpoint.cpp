#include "camforge/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>

#include "camforge/errors.hpp"
#include "camforge/io_util.hpp"

namespace camforge::nn {

namespace {

static_assert(std::numeric_limits<float>::is_iec559, "checkpoints assume IEEE-754 floats");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> blobs) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(blobs.size()));
  for (const auto& b : blobs) {
    put_u32(out, static_cast<std::uint32_t>(b.name.size()));
    out.insert(out.end(), b.name.begin(), b.name.end());
    put_u32(out, 4);
    const Shape& s = b.tensor.shape();
    for (auto d : {s.n, s.c, s.h, s.w}) put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : b.tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(sizeof(kCheckpointMagic));
  if (std::memcmp(magic.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw DataError("not a checkpoint file (bad magic)");
  }
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.u32();
  std::vector<NamedTensor> blobs;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = r.u32();
    auto name = r.take(name_len);
    const auto ndims = r.u32();
    if (ndims != 4) throw DataError("checkpoint blob with " + std::to_string(ndims) + " dims");
    Shape s;
    s.n = r.u32();
    s.c = r.u32();
    s.h = r.u32();
    s.w = r.u32();
    std::vector<float> data(static_cast<std::size_t>(s.numel()));
    for (auto& f : data) f = std::bit_cast<float>(r.u32());
    blobs.push_back({std::string(name.begin(), name.end()), Tensor(s, std::move(data))});
  }
  if (!r.done()) throw DataError("trailing bytes after checkpoint blobs");
  return blobs;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> blobs) {
  write_bytes_atomic(path, encode_checkpoint(blobs));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::vector<NamedTensor> export_state(std::span<const NamedParameter> params,
                                      std::span<const NamedBuffer> buffers) {
  std::vector<NamedTensor> out;
  for (const auto& p : params) out.push_back({p.name, p.var.value()});
  for (const auto& b : buffers) out.push_back({b.name, *b.tensor});
  return out;
}

void import_state(std::span<const NamedTensor> blobs, std::span<NamedParameter> params,
                  std::span<NamedBuffer> buffers) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& b : blobs) by_name[b.name] = &b.tensor;
  auto fetch = [&](const std::string& name, const Shape& expected) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint is missing '" + name + "'");
    if (it->second->shape() != expected) {
      throw DataError("checkpoint blob '" + name + "' has dims " + it->second->shape().str() +
                      ", model expects " + expected.str());
    }
    return *it->second;
  };
  for (auto& p : params) p.var.mutable_value() = fetch(p.name, p.var.shape());
  for (auto& b : buffers) *b.tensor = fetch(b.name, b.tensor->shape());
}

}  // namespace camforge::nn
