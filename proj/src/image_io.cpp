#include "tma/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

namespace tma {
void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw IoError("write_png: unsupported channel count " + std::to_string(image.channels));
  }
  std::vector<png_byte> buffer(image.pixels.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const float v = std::clamp(image.pixels[i], 0.0F, 1.0F);
    buffer[i] = static_cast<png_byte>(std::lround(v * 255.0F));
  }
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(image.width);
  desc.height = static_cast<png_uint_32>(image.height);
  desc.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (png_image_write_to_file(&desc, path.c_str(), 0, buffer.data(), 0, nullptr) == 0) {
    const std::string msg = desc.message;
    png_image_free(&desc);
    throw IoError("cannot write PNG " + path.string() + ": " + msg);
  }
}

Image read_png(const std::filesystem::path& path) {
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&desc, path.c_str()) == 0) {
    const std::string msg = desc.message;
    png_image_free(&desc);
    throw IoError("cannot read PNG " + path.string() + ": " + msg);
  }
  desc.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(desc));
  if (png_image_finish_read(&desc, nullptr, buffer.data(), 0, nullptr) == 0) {
    const std::string msg = desc.message;
    png_image_free(&desc);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  Image out(static_cast<int>(desc.height), static_cast<int>(desc.width), 3);
  for (std::size_t i = 0; i < buffer.size(); ++i) out.pixels[i] = buffer[i] / 255.0F;
  return out;
}

Image resize_bilinear(const Image& src, int height, int width) {
  if (src.height == height && src.width == width) return src;
  Image out(height, width, src.channels);
  const double sy = static_cast<double>(src.height) / height;
  const double sx = static_cast<double>(src.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < src.channels; ++c) {
        const double top = src.at(y0, x0, c) * (1 - wx) + src.at(y0, x1, c) * wx;
        const double bottom = src.at(y1, x0, c) * (1 - wx) + src.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

Image to_channels(const Image& src, int channels) {
  if (src.channels == channels) return src;
  if (src.channels != 1) {
    throw IoError("to_channels: can only expand single-channel images");
  }
  Image out(src.height, src.width, channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < channels; ++c) out.at(y, x, c) = src.at(y, x, 0);
  return out;
}

}  // namespace tma
