#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dat/tensor.hpp"

namespace dat {

// Images in [0,1], row-major [N,C,H,W]; labels are class indices.
struct Dataset {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<float> images;
    std::vector<int> labels;
    int num_classes = 0;

    long image_size() const { return long(c) * h * w; }
    const float* image(int i) const { return images.data() + size_t(i) * image_size(); }
};

// Copy a run of dataset images into a batch tensor of scalar type T.
template <typename T>
Tensor<T> dataset_batch(const Dataset& ds, const std::vector<int>& order, int start, int count) {
    auto x = make_tensor<T>({count, ds.c, ds.h, ds.w});
    for (int i = 0; i < count; ++i) {
        const float* src = ds.image(order[size_t(start + i)]);
        T* dst = x->value.data() + size_t(i) * ds.image_size();
        for (long j = 0; j < ds.image_size(); ++j) dst[j] = T(src[j]);
    }
    return x;
}

inline std::vector<int> batch_labels(const Dataset& ds, const std::vector<int>& order, int start,
                                     int count) {
    std::vector<int> y(size_t(count), 0);
    for (int i = 0; i < count; ++i) y[size_t(i)] = ds.labels[size_t(order[size_t(start + i)])];
    return y;
}

// IDX container parsing (MNIST layout; big-endian magic and dims).
Dataset load_idx(const std::string& image_path, const std::string& label_path);

// Seeded procedural 32x32 RGB shapes, `classes` balanced classes.
Dataset synthetic_dataset(int n, int classes, uint64_t seed);

}  // namespace dat
