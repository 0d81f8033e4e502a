#pragma once

#include "dat/codebook.hpp"
#include "dat/ops.hpp"
#include "dat/rng.hpp"

namespace dat {

template <typename T>
struct ConvLayer {
    Tensor<T> w;  // [F,C,kh,kw]
    Tensor<T> b;  // [F]
    int stride = 1;
    int pad = 1;
};

template <typename T>
ConvLayer<T> make_conv(int out_ch, int in_ch, int k, int stride, int pad, RngStream& rng) {
    ConvLayer<T> l;
    l.w = make_tensor<T>({out_ch, in_ch, k, k}, true);
    l.b = make_tensor<T>({out_ch}, true);
    const double s = std::sqrt(2.0 / (in_ch * k * k));  // He init
    for (long i = 0; i < l.w->size(); ++i) l.w->value[i] = T(rng.normal() * s);
    l.stride = stride;
    l.pad = pad;
    return l;
}

// Encoder (stride-2 conv stack) -> codebook quantization -> decoder (nearest
// upsample + conv stack), everything in [0,1] image space.
template <typename T>
struct DiscretizerModel {
    int f = 4;         // spatial downsampling factor, power of two
    int d = 16;        // latent dimension
    int channels = 3;  // image channels
    int width = 32;    // channels of the first encoder stage
    std::vector<ConvLayer<T>> enc;
    std::vector<ConvLayer<T>> dec;
    Codebook<T> codebook;
};

template <typename T>
DiscretizerModel<T> make_discretizer(int f, int d, int K, int channels, int width,
                                     uint64_t master_seed) {
    if (f < 2 || (f & (f - 1)) != 0) throw std::invalid_argument("discretizer: f must be a power of two >= 2");
    DiscretizerModel<T> m;
    m.f = f;
    m.d = d;
    m.channels = channels;
    m.width = width;
    RngStream wrng(master_seed, "discretizer_init");
    int stages = 0;
    for (int v = f; v > 1; v >>= 1) ++stages;
    // encoder: one stride-2 conv per stage, widths width, 2*width, ...
    int in = channels;
    std::vector<int> widths;
    for (int s = 0; s < stages; ++s) {
        int out = width << s;
        widths.push_back(out);
        m.enc.push_back(make_conv<T>(out, in, 3, 2, 1, wrng));
        in = out;
    }
    m.enc.push_back(make_conv<T>(d, in, 3, 1, 1, wrng));  // projection to latent dim
    // decoder mirrors: conv from d, then (upsample, conv) per stage
    in = d;
    for (int s = stages - 1; s >= 0; --s) {
        m.dec.push_back(make_conv<T>(widths[size_t(s)], in, 3, 1, 1, wrng));
        in = widths[size_t(s)];
    }
    m.dec.push_back(make_conv<T>(channels, in, 3, 1, 1, wrng));
    RngStream crng(master_seed, "codebook_init");
    m.codebook = make_codebook<T>(K, d, crng);
    return m;
}

template <typename T>
std::vector<Tensor<T>> discretizer_params(const DiscretizerModel<T>& m) {
    std::vector<Tensor<T>> ps;
    for (auto& l : m.enc) {
        ps.push_back(l.w);
        ps.push_back(l.b);
    }
    for (auto& l : m.dec) {
        ps.push_back(l.w);
        ps.push_back(l.b);
    }
    ps.push_back(m.codebook.entries);
    return ps;
}

// x[N,C,H,W] in [0,1] -> latents [N,h,w,d]
template <typename T>
Tensor<T> encode(Tape<T>* tape, const DiscretizerModel<T>& m, const Tensor<T>& x) {
    if (x->shape.size() != 4 || x->shape[1] != m.channels)
        throw std::invalid_argument("encode: expected [N," + std::to_string(m.channels) +
                                    ",H,W], got " + shape_str(x->shape));
    if (x->shape[2] % m.f || x->shape[3] % m.f)
        throw std::invalid_argument(
            "encode: spatial size " + std::to_string(x->shape[2]) + "x" +
            std::to_string(x->shape[3]) + " not divisible by f=" + std::to_string(m.f) +
            "; pad input to a multiple of " + std::to_string(m.f) + " before encoding");
    Tensor<T> h = x;
    for (size_t i = 0; i < m.enc.size(); ++i) {
        h = conv2d(tape, h, m.enc[i].w, m.enc[i].b, m.enc[i].stride, m.enc[i].pad);
        if (i + 1 < m.enc.size()) h = relu(tape, h);
    }
    return to_nhwc(tape, h);
}

// latents/quantized [N,h,w,d] -> image [N,C,H,W] clamped to [0,1]
template <typename T>
Tensor<T> decode(Tape<T>* tape, const DiscretizerModel<T>& m, const Tensor<T>& vq) {
    if (vq->shape.size() != 4 || vq->shape[3] != m.d)
        throw std::invalid_argument("decode: expected [N,h,w," + std::to_string(m.d) + "], got " +
                                    shape_str(vq->shape));
    Tensor<T> h = to_nchw(tape, vq);
    for (size_t i = 0; i < m.dec.size(); ++i) {
        h = conv2d(tape, h, m.dec[i].w, m.dec[i].b, 1, m.dec[i].pad);
        if (i + 1 < m.dec.size()) {
            h = relu(tape, h);
            h = upsample_nearest(tape, h, 2);
        }
    }
    return clamp(tape, h, T(0), T(1));
}

template <typename T>
struct DiscretizeResult {
    Tensor<T> image;           // x_hat, [N,C,H,W] in [0,1]
    std::vector<int> indices;  // token grid, row-major [N,h,w]
    Shape index_shape;
    Tensor<T> latents;    // pre-quantization encodings
    Tensor<T> quantized;  // codebook vectors (no straight-through bridge)
};

// Q(x) = decode(quantize(encode(x))). With a tape, the quantizer is bridged by
// a straight-through estimator so reconstruction gradients reach the encoder.
template <typename T>
DiscretizeResult<T> discretize(Tape<T>* tape, const DiscretizerModel<T>& m, const Tensor<T>& x) {
    DiscretizeResult<T> r;
    r.latents = encode(tape, m, x);
    auto q = quantize(tape, r.latents, m.codebook);
    r.indices = std::move(q.indices);
    r.index_shape = std::move(q.index_shape);
    r.quantized = q.quantized;
    Tensor<T> bridge = tape ? straight_through(tape, r.latents, r.quantized) : r.quantized;
    r.image = decode(tape, m, bridge);
    return r;
}

}  // namespace dat
