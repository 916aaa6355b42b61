#pragma once

// Balanced subsets of MNIST from the IDX files
// (big-endian; magic 0x00000803 for images, 0x00000801 for labels).

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pfc/core.hpp"
#include "pfc/data.hpp"

namespace pfc {

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                               const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) throw FormatError("truncated IDX header in '" + path.string() + "'");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::size_t kMnistClasses = 10;

/// First `per_class` images of every digit, pixels scaled to [0, 1] and
/// flattened; columns are grouped by class.
inline LabeledData load_mnist_idx(const std::filesystem::path& images_path,
                                  const std::filesystem::path& labels_path, std::size_t per_class) {
  if (per_class < 1) throw ValidationError("load_mnist_idx: per_class must be >= 1");
  const auto images = detail::read_file_bytes(images_path);
  const auto labels = detail::read_file_bytes(labels_path);

  if (detail::read_be32(images, 0, images_path) != kIdxImageMagic)
    throw FormatError("bad IDX image magic number in '" + images_path.string() + "'");
  if (detail::read_be32(labels, 0, labels_path) != kIdxLabelMagic)
    throw FormatError("bad IDX label magic number in '" + labels_path.string() + "'");

  const std::size_t count = detail::read_be32(images, 4, images_path);
  const std::size_t rows = detail::read_be32(images, 8, images_path);
  const std::size_t cols = detail::read_be32(images, 12, images_path);
  const std::size_t label_count = detail::read_be32(labels, 4, labels_path);
  const std::size_t pixels = rows * cols;
  if (pixels == 0) throw FormatError("empty images in '" + images_path.string() + "'");
  if (images.size() < 16 + count * pixels)
    throw FormatError("truncated image data in '" + images_path.string() + "'");
  if (labels.size() < 8 + label_count)
    throw FormatError("truncated label data in '" + labels_path.string() + "'");
  if (label_count != count)
    throw FormatError("image/label count mismatch between '" + images_path.string() + "' and '" +
                      labels_path.string() + "'");

  std::array<std::vector<std::size_t>, kMnistClasses> picked;
  for (std::size_t s = 0; s < count; ++s) {
    const unsigned label = labels[8 + s];
    if (label >= kMnistClasses)
      throw FormatError("label " + std::to_string(label) + " out of range in '" +
                        labels_path.string() + "'");
    if (picked[label].size() < per_class) picked[label].push_back(s);
  }
  for (std::size_t k = 0; k < kMnistClasses; ++k)
    if (picked[k].size() < per_class)
      throw ValidationError("load_mnist_idx: insufficient data: class " + std::to_string(k) +
                            " has " + std::to_string(picked[k].size()) + " samples, need " +
                            std::to_string(per_class));

  Matrix x(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(kMnistClasses * per_class));
  for (std::size_t k = 0; k < kMnistClasses; ++k)
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t offset = 16 + picked[k][i] * pixels;
      auto col = x.col(static_cast<Eigen::Index>(k * per_class + i));
      for (std::size_t p = 0; p < pixels; ++p)
        col(static_cast<Eigen::Index>(p)) = static_cast<double>(images[offset + p]) / 255.0;
    }
  return {FeatureSet(std::move(x), kMnistClasses, per_class),
          block_labels(kMnistClasses, per_class), Matrix()};
}

}  // namespace pfc
