#pragma once

#include "dat/discretizer.hpp"
#include "dat/ops.hpp"
#include "dat/rng.hpp"

namespace dat {

template <typename T>
struct BnLayer {
    Tensor<T> gamma, beta;
    std::vector<T> running_mean, running_var;
};

template <typename T>
BnLayer<T> make_bn(int C) {
    BnLayer<T> l;
    l.gamma = make_tensor<T>({C}, true);
    std::fill(l.gamma->value.begin(), l.gamma->value.end(), T(1));
    l.beta = make_tensor<T>({C}, true);
    l.running_mean.assign(size_t(C), T(0));
    l.running_var.assign(size_t(C), T(1));
    return l;
}

template <typename T>
struct BasicBlock {
    ConvLayer<T> conv1, conv2;
    BnLayer<T> bn1, bn2;
    bool has_proj = false;
    ConvLayer<T> proj;
    BnLayer<T> proj_bn;
};

// Small residual CNN with BN after every conv: stem + 3 basic blocks + linear
// head. The second BN of the last block is the designated "last BN" whose
// batch statistics the analysis module reads.
template <typename T>
struct ClassifierModel {
    ConvLayer<T> stem;
    BnLayer<T> stem_bn;
    std::vector<BasicBlock<T>> blocks;
    Tensor<T> fc_w, fc_b;
    int channels = 3;
    int num_classes = 10;
    int width = 16;
    T bn_momentum = T(0.1);
    T bn_eps = T(1e-5);

    // captured on the most recent batch-stat forward
    mutable std::vector<T> last_bn_mean, last_bn_var;
};

template <typename T>
ClassifierModel<T> make_classifier(int channels, int num_classes, int width,
                                   uint64_t master_seed) {
    ClassifierModel<T> m;
    m.channels = channels;
    m.num_classes = num_classes;
    m.width = width;
    RngStream rng(master_seed, "classifier_init");
    m.stem = make_conv<T>(width, channels, 3, 1, 1, rng);
    m.stem_bn = make_bn<T>(width);
    int in = width;
    for (int s = 0; s < 3; ++s) {
        const int out = width << s;
        const int stride = s == 0 ? 1 : 2;
        BasicBlock<T> b;
        b.conv1 = make_conv<T>(out, in, 3, stride, 1, rng);
        b.bn1 = make_bn<T>(out);
        b.conv2 = make_conv<T>(out, out, 3, 1, 1, rng);
        b.bn2 = make_bn<T>(out);
        if (stride != 1 || in != out) {
            b.has_proj = true;
            b.proj = make_conv<T>(out, in, 1, stride, 0, rng);
            b.proj_bn = make_bn<T>(out);
        }
        m.blocks.push_back(std::move(b));
        in = out;
    }
    m.fc_w = make_tensor<T>({num_classes, in}, true);
    m.fc_b = make_tensor<T>({num_classes}, true);
    const double s = std::sqrt(1.0 / in);
    for (long i = 0; i < m.fc_w->size(); ++i) m.fc_w->value[i] = T(rng.uniform(-s, s));
    return m;
}

template <typename T>
std::vector<Tensor<T>> classifier_params(const ClassifierModel<T>& m) {
    std::vector<Tensor<T>> ps{m.stem.w, m.stem.b, m.stem_bn.gamma, m.stem_bn.beta};
    for (auto& b : m.blocks) {
        ps.insert(ps.end(), {b.conv1.w, b.conv1.b, b.bn1.gamma, b.bn1.beta, b.conv2.w, b.conv2.b,
                             b.bn2.gamma, b.bn2.beta});
        if (b.has_proj) ps.insert(ps.end(), {b.proj.w, b.proj.b, b.proj_bn.gamma, b.proj_bn.beta});
    }
    ps.push_back(m.fc_w);
    ps.push_back(m.fc_b);
    return ps;
}

template <typename T>
Tensor<T> classifier_forward(Tape<T>* tape, ClassifierModel<T>& m, const Tensor<T>& x,
                             BnMode mode) {
    if (x->shape.size() != 4 || x->shape[1] != m.channels)
        throw std::invalid_argument("classifier: expected [N," + std::to_string(m.channels) +
                                    ",H,W], got " + shape_str(x->shape));
    auto bn = [&](BnLayer<T>& l, const Tensor<T>& h) {
        return batch_norm(tape, h, l.gamma, l.beta, l.running_mean, l.running_var, mode,
                          m.bn_momentum, m.bn_eps);
    };
    auto h = relu(tape, bn(m.stem_bn, conv2d(tape, x, m.stem.w, m.stem.b, 1, 1)).out);
    for (size_t i = 0; i < m.blocks.size(); ++i) {
        auto& b = m.blocks[i];
        auto h1 = relu(tape, bn(b.bn1, conv2d(tape, h, b.conv1.w, b.conv1.b, b.conv1.stride, 1)).out);
        auto r2 = bn(b.bn2, conv2d(tape, h1, b.conv2.w, b.conv2.b, 1, 1));
        if (i + 1 == m.blocks.size() && mode != BnMode::Eval) {
            m.last_bn_mean = r2.batch_mean;
            m.last_bn_var = r2.batch_var;
        }
        Tensor<T> shortcut = h;
        if (b.has_proj)
            shortcut = bn(b.proj_bn, conv2d(tape, h, b.proj.w, b.proj.b, b.proj.stride, 0)).out;
        h = relu(tape, add(tape, r2.out, shortcut));
    }
    auto pooled = global_avg_pool(tape, h);
    return linear(tape, pooled, m.fc_w, m.fc_b);
}

// Per-channel batch statistics at the designated last BN (pre-affine), without
// touching running stats or parameters.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> last_bn_statistics(ClassifierModel<T>& m,
                                                             const Tensor<T>& x) {
    classifier_forward<T>(nullptr, m, x, BnMode::Analysis);
    return {m.last_bn_mean, m.last_bn_var};
}

}  // namespace dat
