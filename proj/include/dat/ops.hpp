#pragma once

#include <cmath>
#include <cstring>

#include "dat/tensor.hpp"

namespace dat {

// ---------------------------------------------------------------------------
// small dense matmul helpers (row-major)
// ---------------------------------------------------------------------------

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void matmul_acc(const T* A, const T* B, T* C, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        T* c = C + size_t(i) * N;
        const T* a = A + size_t(i) * K;
        for (int k = 0; k < K; ++k) {
            const T av = a[k];
            const T* b = B + size_t(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T  (dot of rows)
template <typename T>
void matmul_bt_acc(const T* A, const T* B, T* C, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        const T* a = A + size_t(i) * K;
        T* c = C + size_t(i) * N;
        for (int j = 0; j < N; ++j) {
            const T* b = B + size_t(j) * K;
            T acc = 0;
            for (int k = 0; k < K; ++k) acc += a[k] * b[k];
            c[j] += acc;
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void matmul_at_acc(const T* A, const T* B, T* C, int M, int K, int N) {
    for (int k = 0; k < K; ++k) {
        const T* a = A + size_t(k) * M;
        const T* b = B + size_t(k) * N;
        for (int i = 0; i < M; ++i) {
            const T av = a[i];
            T* c = C + size_t(i) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a->shape != b->shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->shape) +
                                    " vs " + shape_str(b->shape));
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "add");
    auto out = make_tensor<T>(a->shape);
    for (long i = 0; i < a->size(); ++i) out->value[i] = a->value[i] + b->value[i];
    if (tracked(tape, {a.get(), b.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (long i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (long i = 0; i < out->size(); ++i) b->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "sub");
    auto out = make_tensor<T>(a->shape);
    for (long i = 0; i < a->size(); ++i) out->value[i] = a->value[i] - b->value[i];
    if (tracked(tape, {a.get(), b.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (long i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (long i = 0; i < out->size(); ++i) b->grad[i] -= out->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "mul");
    auto out = make_tensor<T>(a->shape);
    for (long i = 0; i < a->size(); ++i) out->value[i] = a->value[i] * b->value[i];
    if (tracked(tape, {a.get(), b.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (long i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i] * b->value[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (long i = 0; i < out->size(); ++i) b->grad[i] += out->grad[i] * a->value[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& a, T c) {
    auto out = make_tensor<T>(a->shape);
    for (long i = 0; i < a->size(); ++i) out->value[i] = a->value[i] * c;
    if (tracked(tape, {a.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([a, out, c] {
            a->ensure_grad();
            for (long i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i] * c;
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& a) {
    auto out = make_tensor<T>(a->shape);
    for (long i = 0; i < a->size(); ++i) out->value[i] = a->value[i] > T(0) ? a->value[i] : T(0);
    if (tracked(tape, {a.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([a, out] {
            a->ensure_grad();
            for (long i = 0; i < out->size(); ++i)
                if (a->value[i] > T(0)) a->grad[i] += out->grad[i];
        });
    }
    return out;
}

// subgradient 0 at the bounds
template <typename T>
Tensor<T> clamp(Tape<T>* tape, const Tensor<T>& a, T lo, T hi) {
    auto out = make_tensor<T>(a->shape);
    for (long i = 0; i < a->size(); ++i) out->value[i] = std::min(hi, std::max(lo, a->value[i]));
    if (tracked(tape, {a.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([a, out, lo, hi] {
            a->ensure_grad();
            for (long i = 0; i < out->size(); ++i)
                if (a->value[i] > lo && a->value[i] < hi) a->grad[i] += out->grad[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& a) {
    T s = 0;
    for (long i = 0; i < a->size(); ++i) s += a->value[i];
    auto out = scalar_tensor<T>(s);
    if (tracked(tape, {a.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([a, out] {
            a->ensure_grad();
            const T g = out->grad[0];
            for (long i = 0; i < a->size(); ++i) a->grad[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(Tape<T>* tape, const Tensor<T>& a) {
    const T n = T(a->size());
    T s = 0;
    for (long i = 0; i < a->size(); ++i) s += a->value[i];
    auto out = scalar_tensor<T>(s / n);
    if (tracked(tape, {a.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([a, out, n] {
            a->ensure_grad();
            const T g = out->grad[0] / n;
            for (long i = 0; i < a->size(); ++i) a->grad[i] += g;
        });
    }
    return out;
}

// mean squared error between a and b, fused
template <typename T>
Tensor<T> mse(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "mse");
    const T n = T(a->size());
    T s = 0;
    for (long i = 0; i < a->size(); ++i) {
        const T d = a->value[i] - b->value[i];
        s += d * d;
    }
    auto out = scalar_tensor<T>(s / n);
    if (tracked(tape, {a.get(), b.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([a, b, out, n] {
            const T g = out->grad[0] * T(2) / n;
            if (a->requires_grad) {
                a->ensure_grad();
                for (long i = 0; i < a->size(); ++i) a->grad[i] += g * (a->value[i] - b->value[i]);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (long i = 0; i < b->size(); ++i) b->grad[i] -= g * (a->value[i] - b->value[i]);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// gradient routing
// ---------------------------------------------------------------------------

// forward identity, zero backward contribution
template <typename T>
Tensor<T> stop_gradient(Tape<T>* /*tape*/, const Tensor<T>& a) {
    auto out = make_tensor<T>(a->shape);
    out->value = a->value;
    return out;  // requires_grad stays false: nothing downstream routes back
}

// forward returns `quantized` bitwise; backward copies the output gradient to
// `continuous` unchanged and contributes nothing to `quantized`.
template <typename T>
Tensor<T> straight_through(Tape<T>* tape, const Tensor<T>& continuous, const Tensor<T>& quantized) {
    check_same_shape(continuous, quantized, "straight_through");
    auto out = make_tensor<T>(quantized->shape);
    out->value = quantized->value;
    if (tape && continuous->requires_grad) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([continuous, out] {
            continuous->ensure_grad();
            for (long i = 0; i < out->size(); ++i) continuous->grad[i] += out->grad[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& a, Shape shape) {
    if (numel(shape) != a->size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a->shape) + " as " +
                                    shape_str(shape));
    auto out = make_tensor<T>(std::move(shape));
    out->value = a->value;
    if (tracked(tape, {a.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([a, out] {
            a->ensure_grad();
            for (long i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i];
        });
    }
    return out;
}

// [N,C,H,W] -> [N,H,W,C]
template <typename T>
Tensor<T> to_nhwc(Tape<T>* tape, const Tensor<T>& a) {
    if (a->shape.size() != 4) throw std::invalid_argument("to_nhwc: rank-4 input required");
    const int N = a->shape[0], C = a->shape[1], H = a->shape[2], W = a->shape[3];
    auto out = make_tensor<T>({N, H, W, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    out->value[((size_t(n) * H + h) * W + w) * C + c] =
                        a->value[((size_t(n) * C + c) * H + h) * W + w];
    if (tracked(tape, {a.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([a, out, N, C, H, W] {
            a->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w)
                            a->grad[((size_t(n) * C + c) * H + h) * W + w] +=
                                out->grad[((size_t(n) * H + h) * W + w) * C + c];
        });
    }
    return out;
}

// [N,H,W,C] -> [N,C,H,W]
template <typename T>
Tensor<T> to_nchw(Tape<T>* tape, const Tensor<T>& a) {
    if (a->shape.size() != 4) throw std::invalid_argument("to_nchw: rank-4 input required");
    const int N = a->shape[0], H = a->shape[1], W = a->shape[2], C = a->shape[3];
    auto out = make_tensor<T>({N, C, H, W});
    for (int n = 0; n < N; ++n)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                for (int c = 0; c < C; ++c)
                    out->value[((size_t(n) * C + c) * H + h) * W + w] =
                        a->value[((size_t(n) * H + h) * W + w) * C + c];
    if (tracked(tape, {a.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([a, out, N, C, H, W] {
            a->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        for (int c = 0; c < C; ++c)
                            a->grad[((size_t(n) * H + h) * W + w) * C + c] +=
                                out->grad[((size_t(n) * C + c) * H + h) * W + w];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear layer: x[N,I] * w[O,I]^T + b[O]
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x->shape.size() != 2 || w->shape.size() != 2 || b->shape.size() != 1)
        throw std::invalid_argument("linear: expected x[N,I], w[O,I], b[O]");
    const int N = x->shape[0], I = x->shape[1], O = w->shape[0];
    if (w->shape[1] != I || b->shape[0] != O)
        throw std::invalid_argument("linear: shape mismatch x" + shape_str(x->shape) + " w" +
                                    shape_str(w->shape));
    auto out = make_tensor<T>({N, O});
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) out->value[size_t(n) * O + o] = b->value[o];
    matmul_bt_acc(x->value.data(), w->value.data(), out->value.data(), N, I, O);
    if (tracked(tape, {x.get(), w.get(), b.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([x, w, b, out, N, I, O] {
            if (x->requires_grad) {
                x->ensure_grad();
                matmul_acc(out->grad.data(), w->value.data(), x->grad.data(), N, O, I);
            }
            if (w->requires_grad) {
                w->ensure_grad();
                matmul_at_acc(out->grad.data(), x->value.data(), w->grad.data(), O, N, I);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int n = 0; n < N; ++n)
                    for (int o = 0; o < O; ++o) b->grad[o] += out->grad[size_t(n) * O + o];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d (cross-correlation), im2col based
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void im2col(const T* img, int C, int H, int W, int kh, int kw, int stride, int pad, int OH, int OW,
            T* cols) {
    // cols has shape [C*kh*kw, OH*OW]
    size_t r = 0;
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j, ++r) {
                T* dst = cols + r * size_t(OH) * OW;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + i;
                    if (ih < 0 || ih >= H) {
                        for (int ow = 0; ow < OW; ++ow) dst[oh * size_t(OW) + ow] = T(0);
                        continue;
                    }
                    const T* src = img + (size_t(c) * H + ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + j;
                        dst[oh * size_t(OW) + ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_acc(const T* cols, int C, int H, int W, int kh, int kw, int stride, int pad, int OH,
                int OW, T* img) {
    size_t r = 0;
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j, ++r) {
                const T* src = cols + r * size_t(OH) * OW;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + i;
                    if (ih < 0 || ih >= H) continue;
                    T* dst = img + (size_t(c) * H + ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + j;
                        if (iw >= 0 && iw < W) dst[iw] += src[oh * size_t(OW) + ow];
                    }
                }
            }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, int stride, int padding) {
    if (input->shape.size() != 4 || kernel->shape.size() != 4)
        throw std::invalid_argument("conv2d: expected input[N,C,H,W], kernel[F,C,kh,kw]");
    const int N = input->shape[0], C = input->shape[1], H = input->shape[2], W = input->shape[3];
    const int F = kernel->shape[0], KC = kernel->shape[1], kh = kernel->shape[2],
              kw = kernel->shape[3];
    if (KC != C)
        throw std::invalid_argument("conv2d: channel mismatch input" + shape_str(input->shape) +
                                    " kernel" + shape_str(kernel->shape));
    if (bias->shape.size() != 1 || bias->shape[0] != F)
        throw std::invalid_argument("conv2d: bias must be [F]");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (kh > H + 2 * padding || kw > W + 2 * padding)
        throw std::invalid_argument("conv2d: kernel " + shape_str(kernel->shape) +
                                    " larger than padded input " + shape_str(input->shape));
    const int OH = (H + 2 * padding - kh) / stride + 1;
    const int OW = (W + 2 * padding - kw) / stride + 1;
    const int CKK = C * kh * kw;
    const int P = OH * OW;

    auto out = make_tensor<T>({N, F, OH, OW});
    std::vector<T> cols(size_t(CKK) * P);
    for (int n = 0; n < N; ++n) {
        detail::im2col(input->value.data() + size_t(n) * C * H * W, C, H, W, kh, kw, stride,
                       padding, OH, OW, cols.data());
        T* o = out->value.data() + size_t(n) * F * P;
        for (int f = 0; f < F; ++f)
            for (int p = 0; p < P; ++p) o[size_t(f) * P + p] = bias->value[f];
        matmul_acc(kernel->value.data(), cols.data(), o, F, CKK, P);
    }

    if (tracked(tape, {input.get(), kernel.get(), bias.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([input, kernel, bias, out, N, C, H, W, F, kh, kw, stride, padding, OH, OW,
                      CKK, P] {
            std::vector<T> cols(size_t(CKK) * P);
            std::vector<T> dcols;
            if (input->requires_grad) {
                input->ensure_grad();
                dcols.resize(size_t(CKK) * P);
            }
            if (kernel->requires_grad) kernel->ensure_grad();
            if (bias->requires_grad) bias->ensure_grad();
            for (int n = 0; n < N; ++n) {
                const T* dout = out->grad.data() + size_t(n) * F * P;
                if (kernel->requires_grad) {
                    detail::im2col(input->value.data() + size_t(n) * C * H * W, C, H, W, kh, kw,
                                   stride, padding, OH, OW, cols.data());
                    matmul_bt_acc(dout, cols.data(), kernel->grad.data(), F, P, CKK);
                }
                if (bias->requires_grad) {
                    for (int f = 0; f < F; ++f) {
                        T s = 0;
                        for (int p = 0; p < P; ++p) s += dout[size_t(f) * P + p];
                        bias->grad[f] += s;
                    }
                }
                if (input->requires_grad) {
                    std::fill(dcols.begin(), dcols.end(), T(0));
                    matmul_at_acc(kernel->value.data(), dout, dcols.data(), CKK, F, P);
                    detail::col2im_acc(dcols.data(), C, H, W, kh, kw, stride, padding, OH, OW,
                                       input->grad.data() + size_t(n) * C * H * W);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// pooling / upsampling
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> avg_pool2d(Tape<T>* tape, const Tensor<T>& a, int k) {
    if (a->shape.size() != 4) throw std::invalid_argument("avg_pool2d: rank-4 input required");
    const int N = a->shape[0], C = a->shape[1], H = a->shape[2], W = a->shape[3];
    if (k < 1 || H % k || W % k)
        throw std::invalid_argument("avg_pool2d: spatial dims " + shape_str(a->shape) +
                                    " not divisible by window " + std::to_string(k));
    const int OH = H / k, OW = W / k;
    auto out = make_tensor<T>({N, C, OH, OW});
    const T inv = T(1) / T(k * k);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    T s = 0;
                    for (int i = 0; i < k; ++i)
                        for (int j = 0; j < k; ++j)
                            s += a->value[((size_t(n) * C + c) * H + oh * k + i) * W + ow * k + j];
                    out->value[((size_t(n) * C + c) * OH + oh) * OW + ow] = s * inv;
                }
    if (tracked(tape, {a.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([a, out, N, C, H, W, OH, OW, k, inv] {
            a->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int oh = 0; oh < OH; ++oh)
                        for (int ow = 0; ow < OW; ++ow) {
                            const T g = out->grad[((size_t(n) * C + c) * OH + oh) * OW + ow] * inv;
                            for (int i = 0; i < k; ++i)
                                for (int j = 0; j < k; ++j)
                                    a->grad[((size_t(n) * C + c) * H + oh * k + i) * W + ow * k +
                                            j] += g;
                        }
        });
    }
    return out;
}

// [N,C,H,W] -> [N,C]
template <typename T>
Tensor<T> global_avg_pool(Tape<T>* tape, const Tensor<T>& a) {
    if (a->shape.size() != 4) throw std::invalid_argument("global_avg_pool: rank-4 input required");
    const int N = a->shape[0], C = a->shape[1], H = a->shape[2], W = a->shape[3];
    auto out = make_tensor<T>({N, C});
    const T inv = T(1) / T(H * W);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            T s = 0;
            const T* src = a->value.data() + (size_t(n) * C + c) * H * W;
            for (int i = 0; i < H * W; ++i) s += src[i];
            out->value[size_t(n) * C + c] = s * inv;
        }
    if (tracked(tape, {a.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([a, out, N, C, H, W, inv] {
            a->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T g = out->grad[size_t(n) * C + c] * inv;
                    T* dst = a->grad.data() + (size_t(n) * C + c) * H * W;
                    for (int i = 0; i < H * W; ++i) dst[i] += g;
                }
        });
    }
    return out;
}

template <typename T>
Tensor<T> upsample_nearest(Tape<T>* tape, const Tensor<T>& a, int f) {
    if (a->shape.size() != 4) throw std::invalid_argument("upsample_nearest: rank-4 input required");
    if (f < 1) throw std::invalid_argument("upsample_nearest: factor must be >= 1");
    const int N = a->shape[0], C = a->shape[1], H = a->shape[2], W = a->shape[3];
    const int OH = H * f, OW = W * f;
    auto out = make_tensor<T>({N, C, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow)
                    out->value[((size_t(n) * C + c) * OH + oh) * OW + ow] =
                        a->value[((size_t(n) * C + c) * H + oh / f) * W + ow / f];
    if (tracked(tape, {a.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([a, out, N, C, H, W, OH, OW, f] {
            a->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int oh = 0; oh < OH; ++oh)
                        for (int ow = 0; ow < OW; ++ow)
                            a->grad[((size_t(n) * C + c) * H + oh / f) * W + ow / f] +=
                                out->grad[((size_t(n) * C + c) * OH + oh) * OW + ow];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

enum class BnMode {
    Train,     // batch statistics, running stats updated
    Eval,      // running statistics
    Analysis,  // batch statistics, running stats untouched
};

template <typename T>
struct BatchNormResult {
    Tensor<T> out;
    std::vector<T> batch_mean;  // per channel (Train/Analysis); running copy in Eval
    std::vector<T> batch_var;
};

template <typename T>
BatchNormResult<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                              const Tensor<T>& beta, std::vector<T>& running_mean,
                              std::vector<T>& running_var, BnMode mode, T momentum, T eps) {
    if (x->shape.size() != 4) throw std::invalid_argument("batch_norm: rank-4 input required");
    const int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
    if (gamma->shape != Shape{C} || beta->shape != Shape{C})
        throw std::invalid_argument("batch_norm: gamma/beta must be [C]");
    if (int(running_mean.size()) != C || int(running_var.size()) != C)
        throw std::invalid_argument("batch_norm: running stats must be [C]");
    const long m = long(N) * H * W;
    const bool use_batch = mode != BnMode::Eval;
    if (use_batch && m < 2)
        throw std::invalid_argument("batch_norm: need N*H*W >= 2 in train mode, got " +
                                    std::to_string(m));

    BatchNormResult<T> res;
    res.batch_mean.assign(C, T(0));
    res.batch_var.assign(C, T(0));
    if (use_batch) {
        for (int c = 0; c < C; ++c) {
            T s = 0;
            for (int n = 0; n < N; ++n) {
                const T* src = x->value.data() + (size_t(n) * C + c) * H * W;
                for (long i = 0; i < long(H) * W; ++i) s += src[i];
            }
            const T mu = s / T(m);
            T v = 0;
            for (int n = 0; n < N; ++n) {
                const T* src = x->value.data() + (size_t(n) * C + c) * H * W;
                for (long i = 0; i < long(H) * W; ++i) {
                    const T d = src[i] - mu;
                    v += d * d;
                }
            }
            res.batch_mean[c] = mu;
            res.batch_var[c] = v / T(m);  // biased, matching the running estimate
        }
        if (mode == BnMode::Train) {
            for (int c = 0; c < C; ++c) {
                running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * res.batch_mean[c];
                running_var[c] = (T(1) - momentum) * running_var[c] + momentum * res.batch_var[c];
            }
        }
    } else {
        res.batch_mean = running_mean;
        res.batch_var = running_var;
    }

    const std::vector<T>& mu = use_batch ? res.batch_mean : running_mean;
    const std::vector<T>& var = use_batch ? res.batch_var : running_var;
    auto out = make_tensor<T>(x->shape);
    std::vector<T> ivstd(C);
    for (int c = 0; c < C; ++c) ivstd[c] = T(1) / std::sqrt(var[c] + eps);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = x->value.data() + (size_t(n) * C + c) * H * W;
            T* dst = out->value.data() + (size_t(n) * C + c) * H * W;
            const T g = gamma->value[c], b = beta->value[c], mc = mu[c], iv = ivstd[c];
            for (long i = 0; i < long(H) * W; ++i) dst[i] = g * (src[i] - mc) * iv + b;
        }
    res.out = out;

    if (tracked(tape, {x.get(), gamma.get(), beta.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        std::vector<T> mu_c = mu, iv_c = ivstd;
        tape->record([x, gamma, beta, out, N, C, H, W, m, use_batch, mu_c, iv_c] {
            const long hw = long(H) * W;
            for (int c = 0; c < C; ++c) {
                const T g = gamma->value[c], mc = mu_c[c], iv = iv_c[c];
                // per-channel reductions over the batch
                T sum_dy = 0, sum_dy_xhat = 0;
                for (int n = 0; n < N; ++n) {
                    const T* xd = x->value.data() + (size_t(n) * C + c) * H * W;
                    const T* dy = out->grad.data() + (size_t(n) * C + c) * H * W;
                    for (long i = 0; i < hw; ++i) {
                        sum_dy += dy[i];
                        sum_dy_xhat += dy[i] * (xd[i] - mc) * iv;
                    }
                }
                if (gamma->requires_grad) {
                    gamma->ensure_grad();
                    gamma->grad[c] += sum_dy_xhat;
                }
                if (beta->requires_grad) {
                    beta->ensure_grad();
                    beta->grad[c] += sum_dy;
                }
                if (x->requires_grad) {
                    x->ensure_grad();
                    if (use_batch) {
                        const T inv_m = T(1) / T(m);
                        for (int n = 0; n < N; ++n) {
                            const T* xd = x->value.data() + (size_t(n) * C + c) * H * W;
                            const T* dy = out->grad.data() + (size_t(n) * C + c) * H * W;
                            T* dx = x->grad.data() + (size_t(n) * C + c) * H * W;
                            for (long i = 0; i < hw; ++i) {
                                const T xhat = (xd[i] - mc) * iv;
                                dx[i] += g * iv *
                                         (dy[i] - inv_m * sum_dy - inv_m * xhat * sum_dy_xhat);
                            }
                        }
                    } else {
                        const T k = g * iv;
                        for (int n = 0; n < N; ++n) {
                            const T* dy = out->grad.data() + (size_t(n) * C + c) * H * W;
                            T* dx = x->grad.data() + (size_t(n) * C + c) * H * W;
                            for (long i = 0; i < hw; ++i) dx[i] += k * dy[i];
                        }
                    }
                }
            }
        });
    }
    return res;
}

// ---------------------------------------------------------------------------
// softmax cross-entropy, mean over the batch, max-subtraction stabilized
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>* tape, const Tensor<T>& logits,
                                const std::vector<int>& labels) {
    if (logits->shape.size() != 2) throw std::invalid_argument("softmax_cross_entropy: logits must be [N,K]");
    const int N = logits->shape[0], K = logits->shape[1];
    if (int(labels.size()) != N)
        throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for batch of " + std::to_string(N));
    for (int n = 0; n < N; ++n)
        if (labels[n] < 0 || labels[n] >= K)
            throw std::invalid_argument("softmax_cross_entropy: label " +
                                        std::to_string(labels[n]) + " out of range [0," +
                                        std::to_string(K) + ")");
    auto probs = std::make_shared<std::vector<T>>(size_t(N) * K);
    T loss = 0;
    for (int n = 0; n < N; ++n) {
        const T* row = logits->value.data() + size_t(n) * K;
        T mx = row[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        T denom = 0;
        for (int k = 0; k < K; ++k) denom += std::exp(row[k] - mx);
        const T log_denom = std::log(denom);
        for (int k = 0; k < K; ++k) (*probs)[size_t(n) * K + k] = std::exp(row[k] - mx) / denom;
        loss += -(row[labels[n]] - mx - log_denom);
    }
    auto out = scalar_tensor<T>(loss / T(N));
    if (tracked(tape, {logits.get()})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record([logits, out, probs, labels, N, K] {
            logits->ensure_grad();
            const T g = out->grad[0] / T(N);
            for (int n = 0; n < N; ++n) {
                T* dst = logits->grad.data() + size_t(n) * K;
                const T* p = probs->data() + size_t(n) * K;
                for (int k = 0; k < K; ++k) dst[k] += g * (p[k] - (k == labels[n] ? T(1) : T(0)));
            }
        });
    }
    return out;
}

}  // namespace dat
