#pragma once

#include <vector>

#include "far/config.hpp"
#include "far/tokenizer.hpp"

namespace far {

struct Dataset {
    std::vector<Image> images;
    std::vector<Index> labels;

    std::size_t size() const noexcept { return images.size(); }
    std::vector<Image> class_images(Index label) const;
};

/// Shape class ids for the "shapes" dataset.
enum class ShapeClass : Index { Circle = 0, Square = 1, Cross = 2, Stripes = 3 };

/// Synthetic, seed-deterministic grayscale dataset.
///
/// shapes: filled circle / filled square / cross / horizontal stripes with
/// random position, scale and intensity on a noisy dark background.
/// gaussian-field: class c draws fields with power spectrum (1 + r)^-e_c,
/// e_c = spectral_exponent (c + 1) / num_classes, min-max normalized.
Dataset generate_dataset(const DatasetSpec& spec);

} // namespace far
