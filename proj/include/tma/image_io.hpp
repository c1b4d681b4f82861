#pragma once

#include "tma/common.hpp"

#include <filesystem>

namespace tma {

/// Writes an 8-bit PNG (1 or 3 channels). Pixels are clamped to [0, 1].
/// No time or text chunks are emitted.
void write_png(const std::filesystem::path& path, const Image& image);

/// Reads any PNG as 3-channel RGB in [0, 1]; alpha is composited away.
Image read_png(const std::filesystem::path& path);

/// Bilinear resampling with half-pixel centers.
Image resize_bilinear(const Image& src, int height, int width);

/// Replicates a single channel image to `channels` channels.
Image to_channels(const Image& src, int channels);

}  // namespace tma
