// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace taskfuse {

// A batch of square images stored row-major as [n][y][x][channel], with one
// label and one generator sample index per image.
struct ImageSet {
  int image_size = 0;
  int channels = 1;
  std::vector<double> pixels;
  std::vector<int> labels;
  std::vector<std::int64_t> sample_ids;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t image_len() const {
    return static_cast<std::size_t>(image_size) * image_size * channels;
  }
  std::span<const double> image(std::size_t i) const {
    return {pixels.data() + i * image_len(), image_len()};
  }

  // Copies the listed rows, in order.
  ImageSet subset(std::span<const std::size_t> rows) const;
  // Appends another set with the same geometry.
  void append(const ImageSet& other);

  bool operator==(const ImageSet&) const = default;
};

}  // namespace taskfuse
