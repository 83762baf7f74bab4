#include "scnn/idx.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

SCNN_NAMESPACE_BEGIN

namespace {

struct IdxArray {
  IdxType type = IdxType::u8;
  std::vector<std::uint32_t> dims;
  std::vector<unsigned char> payload;  // raw big-endian elements

  std::size_t count() const {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }
  std::size_t element_size() const { return type == IdxType::u8 ? 1 : 4; }

  double element(std::size_t i) const {
    if (type == IdxType::u8) return payload[i];
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits = (bits << 8) | payload[i * 4 + b];
    return std::bit_cast<float>(bits);
  }
};

struct GzCloser {
  void operator()(gzFile f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

// gzread reads plain files unchanged, so both encodings share this path.
IdxArray read_idx(const std::filesystem::path& path) {
  GzHandle file(gzopen(path.c_str(), "rb"));
  if (!file) throw IdxError("cannot open IDX file " + path.string());
  std::vector<unsigned char> bytes;
  unsigned char chunk[1 << 16];
  for (;;) {
    const int n = gzread(file.get(), chunk, sizeof chunk);
    if (n < 0) throw IdxTruncatedError("corrupt compressed stream in " + path.string());
    if (n == 0) break;
    bytes.insert(bytes.end(), chunk, chunk + n);
  }
  if (bytes.size() < 4) throw IdxTruncatedError(path.string() + ": file shorter than the IDX magic");
  if (bytes[0] != 0 || bytes[1] != 0) throw IdxMagicError(path.string() + ": magic must start with two zero bytes");
  IdxArray array;
  if (bytes[2] == 0x08) {
    array.type = IdxType::u8;
  } else if (bytes[2] == 0x0D) {
    array.type = IdxType::f32;
  } else {
    throw IdxMagicError(path.string() + ": unsupported IDX element type " + std::to_string(bytes[2]));
  }
  const std::size_t rank = bytes[3];
  if (rank == 0) throw IdxMagicError(path.string() + ": IDX rank 0");
  const std::size_t header = 4 + 4 * rank;
  if (bytes.size() < header) throw IdxTruncatedError(path.string() + ": truncated IDX header");
  for (std::size_t d = 0; d < rank; ++d) {
    const unsigned char* p = bytes.data() + 4 + 4 * d;
    array.dims.push_back((std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3]);
  }
  const std::size_t expected = header + array.count() * array.element_size();
  if (bytes.size() < expected) {
    throw IdxTruncatedError(path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                            std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) throw IdxError(path.string() + ": trailing bytes after IDX payload");
  array.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return array;
}

void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (path.extension() == ".gz") {
    GzHandle file(gzopen(path.c_str(), "wb9"));
    if (!file) throw IdxError("cannot write " + path.string());
    std::size_t offset = 0;
    while (offset < bytes.size()) {
      const unsigned n = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - offset, 1u << 30));
      if (gzwrite(file.get(), bytes.data() + offset, n) != static_cast<int>(n)) {
        throw IdxError("short write to " + path.string());
      }
      offset += n;
    }
    if (gzclose(file.release()) != Z_OK) throw IdxError("cannot finish " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IdxError("cannot write " + path.string());
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<unsigned char>(v >> shift));
}

std::vector<unsigned char> header(IdxType type, const std::vector<std::uint32_t>& dims) {
  std::vector<unsigned char> out{0, 0, static_cast<unsigned char>(type), static_cast<unsigned char>(dims.size())};
  for (auto d : dims) put_u32(out, d);
  return out;
}

std::uint32_t checked_dim(std::size_t v) {
  if (v > 0xFFFFFFFFu) throw IdxError("dimension " + std::to_string(v) + " exceeds the IDX limit");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::size_t idx_item_count(const std::filesystem::path& path) {
  GzHandle file(gzopen(path.c_str(), "rb"));
  if (!file) throw IdxError("cannot open IDX file " + path.string());
  unsigned char head[8];
  if (gzread(file.get(), head, sizeof head) != static_cast<int>(sizeof head)) {
    throw IdxTruncatedError(path.string() + ": truncated IDX header");
  }
  if (head[0] != 0 || head[1] != 0 || head[3] == 0) throw IdxMagicError(path.string() + ": not an IDX file");
  return (std::size_t{head[4]} << 24) | (std::size_t{head[5]} << 16) | (std::size_t{head[6]} << 8) | head[7];
}

LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const IdxArray img = read_idx(images);
  const IdxArray lab = read_idx(labels);
  if (img.dims.size() != 3 && img.dims.size() != 4) {
    throw IdxMagicError(images.string() + ": image file must have rank 3 or 4, has " + std::to_string(img.dims.size()));
  }
  if (lab.dims.size() != 1) throw IdxMagicError(labels.string() + ": label file must have rank 1");
  if (lab.type != IdxType::u8) throw IdxMagicError(labels.string() + ": labels must be unsigned bytes");
  if (img.dims[0] != lab.dims[0]) {
    throw IdxCountMismatchError(images.string() + " holds " + std::to_string(img.dims[0]) + " images but " +
                                labels.string() + " holds " + std::to_string(lab.dims[0]) + " labels");
  }
  const std::size_t n = img.dims[0];
  const Shape shape = img.dims.size() == 3 ? Shape{1, img.dims[1], img.dims[2]}
                                           : Shape{img.dims[1], img.dims[2], img.dims[3]};
  const std::size_t per_image = shape_size(shape);
  const double scale = img.type == IdxType::u8 ? 1.0 / 255.0 : 1.0;
  LabeledDataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Real> values(per_image);
    for (std::size_t j = 0; j < per_image; ++j) values[j] = static_cast<Real>(img.element(i * per_image + j) * scale);
    ds.add(Tensor(shape, std::move(values)), static_cast<int>(lab.payload[i]));
  }
  return ds;
}

void save_idx(const LabeledDataset& dataset, const std::filesystem::path& images, const std::filesystem::path& labels,
              IdxType type) {
  std::vector<std::uint32_t> dims{checked_dim(dataset.size())};
  if (!dataset.empty()) {
    const Shape s = dataset.image_shape();
    if (s[0] != 1) dims.push_back(checked_dim(s[0]));
    dims.push_back(checked_dim(s[1]));
    dims.push_back(checked_dim(s[2]));
  } else {
    dims.push_back(0);
    dims.push_back(0);
  }
  std::vector<unsigned char> img = header(type, dims);
  std::vector<unsigned char> lab = header(IdxType::u8, {checked_dim(dataset.size())});
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (Real v : dataset.image(i).data()) {
      if (type == IdxType::u8) {
        const double clamped = std::clamp(static_cast<double>(v), 0.0, 1.0);
        img.push_back(static_cast<unsigned char>(std::lround(clamped * 255.0)));
      } else {
        put_u32(img, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
    const int label = dataset.label(i);
    if (label < 0 || label > 255) throw IdxError("label " + std::to_string(label) + " does not fit in a byte");
    lab.push_back(static_cast<unsigned char>(label));
  }
  write_bytes(images, img);
  write_bytes(labels, lab);
}

LabeledDataset subset(const LabeledDataset& dataset, std::size_t n, std::uint64_t seed, bool stratified) {
  if (n > dataset.size()) {
    throw std::invalid_argument("subset: requested " + std::to_string(n) + " samples from a dataset of " +
                                std::to_string(dataset.size()));
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen;
  if (!stratified) {
    chosen.resize(dataset.size());
    std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    std::shuffle(chosen.begin(), chosen.end(), rng);
    chosen.resize(n);
  } else {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < dataset.size(); ++i) by_class[dataset.label(i)].push_back(i);
    const std::size_t classes = by_class.size();
    std::size_t remainder = classes ? n % classes : 0;
    for (auto& [label, members] : by_class) {
      std::size_t quota = n / classes + (remainder > 0 ? 1 : 0);
      if (remainder > 0) --remainder;
      if (quota > members.size()) {
        throw std::invalid_argument("subset: class " + std::to_string(label) + " has " +
                                    std::to_string(members.size()) + " samples, stratified draw needs " +
                                    std::to_string(quota));
      }
      std::shuffle(members.begin(), members.end(), rng);
      chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(quota));
    }
    std::shuffle(chosen.begin(), chosen.end(), rng);
  }
  LabeledDataset out;
  for (std::size_t i : chosen) out.add(dataset.image(i), dataset.label(i), dataset.provenance(i));
  return out;
}

SCNN_NAMESPACE_END
