#include "h4d/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <stdexcept>

namespace h4d {

namespace {

constexpr char kMagic[4] = {'H', 'T', 'A', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw ParseError(std::string("truncated archive: ") + what, pos_);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void TensorArchive::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate archive entry '" + name + "'");
  entries_.emplace_back(name, std::move(value));
}

void TensorArchive::put(const std::string& name, Tensor value) {
  for (auto& e : entries_) {
    if (e.first == name) {
      e.second = std::move(value);
      return;
    }
  }
  entries_.emplace_back(name, std::move(value));
}

const Tensor* TensorArchive::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return &e.second;
  return nullptr;
}

const Tensor& TensorArchive::get(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw ConfigError("archive has no entry '" + name + "'");
  return *t;
}

float TensorArchive::scalar(const std::string& name) const {
  const Tensor& t = get(name);
  if (t.size() != 1) throw ConfigError("archive entry '" + name + "' is not a scalar");
  return t[0];
}

std::vector<std::uint8_t> encode_archive(const TensorArchive& archive) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, std::uint32_t(archive.size()));
  for (const auto& [name, t] : archive) {
    if (t.rank() > 255) throw DimensionError("archive entry '" + name + "' has rank > 255");
    put_u32(out, std::uint32_t(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(std::uint8_t(t.rank()));
    for (std::size_t d : t.shape()) {
      if (d > std::numeric_limits<std::uint32_t>::max()) throw DimensionError("archive dim exceeds u32");
      put_u32(out, std::uint32_t(d));
    }
    out.reserve(out.size() + 4 * t.size());
    for (float f : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

TensorArchive decode_archive(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  const auto magic = in.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) throw ParseError("bad magic, expected HTA1", 0);
  const std::uint32_t count = in.u32("entry count");
  TensorArchive archive;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::size_t entry_start = in.offset();
    const std::uint32_t name_len = in.u32("name length");
    const auto name_bytes = in.take(name_len, "name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const std::uint8_t rank = in.u8("rank");
    Shape shape(rank);
    std::size_t n = 1;
    bool zero = false;
    for (auto& d : shape) {
      d = in.u32("dims");
      // Saturate instead of overflowing; a later zero dim still yields an empty payload.
      n = (d != 0 && n > std::numeric_limits<std::size_t>::max() / d) ? std::numeric_limits<std::size_t>::max() : n * d;
    }
    for (std::size_t d : shape) zero = zero || d == 0;
    if (zero) n = 0;
    if (n > in.remaining() / 4) throw ParseError("truncated archive: payload of '" + name + "'", in.offset());
    const auto payload = in.take(4 * n, "payload");
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t v = 0;
      for (int k = 0; k < 4; ++k) v |= std::uint32_t(payload[4 * i + k]) << (8 * k);
      data[i] = std::bit_cast<float>(v);
    }
    if (archive.contains(name)) throw ParseError("duplicate entry '" + name + "'", entry_start);
    archive.add(name, Tensor(std::move(shape), std::move(data)));
  }
  if (in.remaining() != 0) throw ParseError("trailing bytes after last entry", in.offset());
  return archive;
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  const std::vector<std::uint8_t> bytes = encode_archive(archive);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

TensorArchive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_archive(bytes);
}

}  // namespace h4d
