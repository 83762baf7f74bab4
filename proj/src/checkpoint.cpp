#include "scnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

SCNN_NAMESPACE_BEGIN

namespace {

constexpr char kMagic[8] = {'S', 'C', 'N', 'N', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u32(std::uint32_t v) { little_endian(v, 4); }
  void u64(std::uint64_t v) { little_endian(v, 8); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }

  std::vector<unsigned char> bytes;

 private:
  void little_endian(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& bytes, std::size_t end, const std::string& path)
      : bytes_(bytes), end_(end), path_(path) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(little_endian(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(little_endian(4)); }
  std::uint64_t u64() { return little_endian(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::size_t n = u32();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw CheckpointError(path_ + ": truncated checkpoint");
  }
  std::uint64_t little_endian(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t{bytes_[pos_ + static_cast<std::size_t>(i)]} << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  const std::vector<unsigned char>& bytes_;
  std::size_t end_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EmbeddedNet& net, const CheckpointInfo& info) {
  Writer w;
  w.bytes.insert(w.bytes.end(), std::begin(kMagic), std::end(kMagic));
  w.u32(kCheckpointVersion);

  const NetConfig& c = net.config();
  w.u64(c.channels);
  w.u64(c.height);
  w.u64(c.width);
  w.u64(c.filters.size());
  for (auto f : c.filters) w.u64(f);
  w.u64(c.hidden);
  w.u64(c.classes);
  w.u64(c.kernel_size);
  w.u8(net.frozen() ? 1 : 0);
  w.i32(info.cycle);
  w.u64(info.seed);
  w.str(info.phase);

  const auto tensors = net.named_tensors();
  w.u64(tensors.size());
  for (const auto& [name, tensor] : tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(tensor->rank()));
    for (auto d : tensor->shape()) w.u64(d);
    for (Real v : tensor->data()) w.f64(static_cast<double>(v));
  }
  w.u64(fnv1a(w.bytes.data(), w.bytes.size()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (bytes.size() < sizeof kMagic + 4 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(name + ": not a checkpoint file");
  }
  Reader header(bytes, bytes.size(), name);
  header.skip(sizeof kMagic);
  const std::uint32_t version = header.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError(name + ": checkpoint version " + std::to_string(version) + ", this build reads " +
                                 std::to_string(kCheckpointVersion));
  }
  if (bytes.size() < sizeof kMagic + 4 + 8) throw CheckpointError(name + ": truncated checkpoint");
  const std::size_t body_end = bytes.size() - 8;
  Reader trailer(bytes, bytes.size(), name);
  trailer.skip(body_end);
  if (trailer.u64() != fnv1a(bytes.data(), body_end)) throw CheckpointError(name + ": checksum mismatch");

  Reader r(bytes, body_end, name);
  r.skip(sizeof kMagic + 4);
  NetConfig c;
  c.channels = r.u64();
  c.height = r.u64();
  c.width = r.u64();
  c.filters.resize(r.u64());
  for (auto& f : c.filters) f = r.u64();
  c.hidden = r.u64();
  c.classes = r.u64();
  c.kernel_size = r.u64();
  const bool frozen = r.u8() != 0;
  CheckpointInfo info;
  info.cycle = r.i32();
  info.seed = r.u64();
  info.phase = r.str();

  LoadedCheckpoint loaded{EmbeddedNet(c, 0), info};
  auto tensors = loaded.net.named_tensors();
  if (r.u64() != tensors.size()) throw CheckpointError(name + ": tensor count does not match the net layout");
  for (auto& [expected_name, tensor] : tensors) {
    const std::string stored = r.str();
    if (stored != expected_name) throw CheckpointError(name + ": expected tensor " + expected_name + ", found " + stored);
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    if (shape != tensor->shape()) {
      throw CheckpointError(name + ": tensor " + stored + " has shape " + to_string(shape) + ", net expects " +
                            to_string(tensor->shape()));
    }
    for (Real& v : tensor->data()) v = static_cast<Real>(r.f64());
  }
  if (r.position() != body_end) throw CheckpointError(name + ": trailing bytes in checkpoint");
  if (frozen) loaded.net.freeze();
  return loaded;
}

SCNN_NAMESPACE_END
