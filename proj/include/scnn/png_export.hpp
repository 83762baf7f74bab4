#pragma once

#include <filesystem>
#include <span>

#include "scnn/model.hpp"
#include "scnn/synthesizer.hpp"

SCNN_NAMESPACE_BEGIN

/// 8-bit PNG of a [C,H,W] image with values in [0,1]; C is 1 (gray) or 3 (RGB).
void write_png(const std::filesystem::path& path, const Tensor& image);

/// Original and manipulated image side by side, separated by a 2-pixel gap.
Tensor side_by_side(const Tensor& left, const Tensor& right);

/// Writes pair_NNNNN_yL_pP.png for each synthesized sample next to its
/// source. `records` maps each synthesized entry to its source index; aborted
/// records are skipped. Returns the number of files written.
std::size_t export_pairs(const std::filesystem::path& dir, const LabeledDataset& sources,
                         const LabeledDataset& synthesized, std::span<const SampleRecord> records,
                         std::size_t limit);

SCNN_NAMESPACE_END
