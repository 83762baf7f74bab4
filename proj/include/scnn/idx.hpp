#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "scnn/model.hpp"

SCNN_NAMESPACE_BEGIN

class IdxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class IdxMagicError : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxTruncatedError : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxCountMismatchError : public IdxError {
 public:
  using IdxError::IdxError;
};

/// Element type codes of the IDX container.
enum class IdxType : std::uint8_t { u8 = 0x08, f32 = 0x0D };

/// Reads an image file ([N,H,W] or [N,C,H,W]) and a label file ([N]). Files
/// may be gzip-compressed. u8 pixels are scaled to [0,1].
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Leading dimension from the header alone.
std::size_t idx_item_count(const std::filesystem::path& path);

/// Writes images and labels; a ".gz" suffix selects gzip. u8 quantizes
/// clamp(v,0,1)*255 to the nearest integer; f32 is lossless for float data.
void save_idx(const LabeledDataset& dataset, const std::filesystem::path& images, const std::filesystem::path& labels,
              IdxType type = IdxType::u8);

/// Seeded selection of n samples without replacement. Stratified draws
/// n / K per class (the remainder goes to the lowest class ids).
LabeledDataset subset(const LabeledDataset& dataset, std::size_t n, std::uint64_t seed, bool stratified);

SCNN_NAMESPACE_END
