#include "contconv/checkpoint.hpp"

#include "contconv/keyvalue.hpp"

#include <bit>
#include <cstring>
#include <set>

namespace contconv {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_bytes(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source) : b_(bytes), src_(source) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return b_.size() - pos_; }
  [[noreturn]] void fail(const std::string& what) const { throw IoError(src_ + ": " + what); }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) fail("truncated checkpoint");
  }
  const std::string& b_;
  const std::string& src_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out = "PCCN";
  put_u32(out, kCheckpointVersion);
  put_bytes(out, ck.architecture);
  put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& t : ck.tensors) {
    std::uint64_t numel = 1;
    for (auto d : t.shape) numel *= d;
    if (numel != t.data.size()) throw ShapeError("tensor " + t.name + " data does not match its shape");
    put_bytes(out, t.name);
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u64(out, d);
    put_u64(out, offset);
    offset += numel;
  }
  put_u64(out, offset);
  for (const auto& t : ck.tensors)
    for (float f : t.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.bytes(4) != "PCCN") r.fail("not a checkpoint (bad magic)");
  const auto version = r.uint(4);
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.architecture = r.bytes(r.uint(4));
  const auto count = r.uint(4);
  std::vector<std::uint64_t> offsets;
  std::set<std::string> names;
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = r.bytes(r.uint(4));
    if (!names.insert(t.name).second) r.fail("duplicate tensor " + t.name);
    const auto rank = r.uint(4);
    if (rank > 8) r.fail("implausible rank for " + t.name);
    std::uint64_t numel = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      t.shape.push_back(r.uint(8));
      numel *= t.shape.back();
    }
    if (numel > bytes.size()) r.fail("tensor " + t.name + " larger than the file");
    t.data.resize(numel);
    offsets.push_back(r.uint(8));
    ck.tensors.push_back(std::move(t));
  }
  const auto total = r.uint(8);
  if (r.remaining() != total * 4) r.fail("data block size does not match the manifest");
  const std::string data = r.bytes(r.remaining());
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    auto& t = ck.tensors[i];
    if (offsets[i] + t.data.size() > total) r.fail("tensor " + t.name + " runs past the data block");
    for (std::size_t k = 0; k < t.data.size(); ++k) {
      const std::size_t at = 4 * (offsets[i] + k);
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b)
        u |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[at + static_cast<std::size_t>(b)])) << (8 * b);
      t.data[k] = std::bit_cast<float>(u);
    }
  }
  return ck;
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  write_file_atomic(path, encode_checkpoint(ck));
}

Checkpoint read_checkpoint(const std::string& path) { return decode_checkpoint(read_text_file(path), path); }

}  // namespace contconv
