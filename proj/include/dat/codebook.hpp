#pragma once

#include "dat/ops.hpp"
#include "dat/rng.hpp"

namespace dat {

// Learnable vocabulary of K d-dimensional visual words.
template <typename T>
struct Codebook {
    Tensor<T> entries;  // [K, d]

    int K() const { return entries->shape[0]; }
    int dim() const { return entries->shape[1]; }
};

// entries drawn uniformly from [-1/K, 1/K]
template <typename T>
Codebook<T> make_codebook(int K, int d, RngStream& rng) {
    if (K < 2 || d < 1) throw std::invalid_argument("codebook: need K >= 2 and d >= 1");
    auto e = make_tensor<T>({K, d}, true);
    const double lim = 1.0 / K;
    for (long i = 0; i < e->size(); ++i) e->value[i] = T(rng.uniform(-lim, lim));
    return Codebook<T>{e};
}

template <typename T>
struct QuantizeResult {
    Tensor<T> quantized;       // same shape as latents, values bitwise from entries
    std::vector<int> indices;  // one per latent vector, row-major over the grid
    Shape index_shape;         // latent shape without the trailing d
};

// Nearest-entry quantization under squared Euclidean distance; ties break to
// the lowest index. Gradients of `quantized` flow to the codebook entries only.
template <typename T>
QuantizeResult<T> quantize(Tape<T>* tape, const Tensor<T>& latents, const Codebook<T>& cb) {
    const int d = cb.dim();
    if (latents->shape.empty() || latents->shape.back() != d)
        throw std::invalid_argument("quantize: latents " + shape_str(latents->shape) +
                                    " do not end in codebook dim " + std::to_string(d));
    for (long i = 0; i < latents->size(); ++i)
        if (!std::isfinite(double(latents->value[i])))
            throw std::invalid_argument("quantize: non-finite latent value");

    const int K = cb.K();
    const long nvec = latents->size() / d;
    QuantizeResult<T> res;
    res.index_shape.assign(latents->shape.begin(), latents->shape.end() - 1);
    res.indices.resize(size_t(nvec));
    res.quantized = make_tensor<T>(latents->shape);

    const T* cbv = cb.entries->value.data();
    for (long v = 0; v < nvec; ++v) {
        const T* lv = latents->value.data() + v * d;
        int best = 0;
        T best_dist = 0;
        for (int j = 0; j < d; ++j) {
            const T diff = lv[j] - cbv[j];
            best_dist += diff * diff;
        }
        for (int k = 1; k < K; ++k) {
            const T* ck = cbv + size_t(k) * d;
            T dist = 0;
            for (int j = 0; j < d; ++j) {
                const T diff = lv[j] - ck[j];
                dist += diff * diff;
            }
            if (dist < best_dist) {
                best_dist = dist;
                best = k;
            }
        }
        res.indices[size_t(v)] = best;
        std::memcpy(res.quantized->value.data() + v * d, cbv + size_t(best) * d, sizeof(T) * d);
    }

    if (tape && cb.entries->requires_grad) {
        res.quantized->requires_grad = true;
        res.quantized->ensure_grad();
        auto entries = cb.entries;
        auto indices = std::make_shared<std::vector<int>>(res.indices);
        auto q = res.quantized;
        tape->record([entries, indices, q, d] {
            entries->ensure_grad();
            for (size_t v = 0; v < indices->size(); ++v) {
                T* dst = entries->grad.data() + size_t((*indices)[v]) * d;
                const T* src = q->grad.data() + v * d;
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return res;
}

// codebook_loss = ||sg[latents] - quantized||^2 / n  (moves entries toward encodings)
// commitment_loss = ||sg[quantized] - latents||^2 / n  (moves encodings toward entries)
template <typename T>
std::pair<Tensor<T>, Tensor<T>> vq_losses(Tape<T>* tape, const Tensor<T>& latents,
                                          const Tensor<T>& quantized) {
    check_same_shape(latents, quantized, "vq_losses");
    auto codebook_loss = mse(tape, stop_gradient(tape, latents), quantized);
    auto commitment_loss = mse(tape, stop_gradient(tape, quantized), latents);
    return {codebook_loss, commitment_loss};
}

inline std::vector<long> usage_histogram(const std::vector<int>& indices, int K) {
    std::vector<long> counts(size_t(K), 0);
    for (int i : indices) {
        if (i < 0 || i >= K)
            throw std::invalid_argument("usage_histogram: index " + std::to_string(i) +
                                        " out of range [0," + std::to_string(K) + ")");
        ++counts[size_t(i)];
    }
    return counts;
}

}  // namespace dat
