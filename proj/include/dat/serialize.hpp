#pragma once

#include "dat/checkpoint.hpp"
#include "dat/classifier.hpp"
#include "dat/discretizer.hpp"

namespace dat {

inline Tensor<float> vector_tensor(const std::vector<float>& v) {
    return make_tensor<float>({int(v.size())}, std::vector<float>(v));
}

// ---- discretizer ----

inline NamedTensors discretizer_state(const DiscretizerModel<float>& m) {
    NamedTensors ts;
    ts.emplace_back("meta", make_tensor<float>(
                                {5}, {float(m.f), float(m.d), float(m.codebook.K()),
                                      float(m.channels), float(m.width)}));
    for (size_t i = 0; i < m.enc.size(); ++i) {
        ts.emplace_back("enc." + std::to_string(i) + ".w", m.enc[i].w);
        ts.emplace_back("enc." + std::to_string(i) + ".b", m.enc[i].b);
    }
    for (size_t i = 0; i < m.dec.size(); ++i) {
        ts.emplace_back("dec." + std::to_string(i) + ".w", m.dec[i].w);
        ts.emplace_back("dec." + std::to_string(i) + ".b", m.dec[i].b);
    }
    ts.emplace_back("codebook", m.codebook.entries);
    return ts;
}

inline DiscretizerModel<float> discretizer_from_state(const NamedTensors& ts) {
    auto meta = checkpoint_tensor(ts, "meta");
    if (meta->size() != 5) throw std::runtime_error("discretizer checkpoint: bad meta");
    auto m = make_discretizer<float>(int(meta->value[0]), int(meta->value[1]),
                                     int(meta->value[2]), int(meta->value[3]),
                                     int(meta->value[4]), 0);
    auto assign = [&](Tensor<float>& dst, const std::string& name) {
        auto src = checkpoint_tensor(ts, name);
        if (src->shape != dst->shape)
            throw std::runtime_error("discretizer checkpoint: shape mismatch for " + name);
        dst->value = src->value;
    };
    for (size_t i = 0; i < m.enc.size(); ++i) {
        assign(m.enc[i].w, "enc." + std::to_string(i) + ".w");
        assign(m.enc[i].b, "enc." + std::to_string(i) + ".b");
    }
    for (size_t i = 0; i < m.dec.size(); ++i) {
        assign(m.dec[i].w, "dec." + std::to_string(i) + ".w");
        assign(m.dec[i].b, "dec." + std::to_string(i) + ".b");
    }
    assign(m.codebook.entries, "codebook");
    return m;
}

// ---- classifier ----

inline NamedTensors classifier_state(const ClassifierModel<float>& m) {
    NamedTensors ts;
    ts.emplace_back("meta", make_tensor<float>({3}, {float(m.channels), float(m.num_classes),
                                                     float(m.width)}));
    auto put_bn = [&](const std::string& p, const BnLayer<float>& l) {
        ts.emplace_back(p + ".gamma", l.gamma);
        ts.emplace_back(p + ".beta", l.beta);
        ts.emplace_back(p + ".running_mean", vector_tensor(l.running_mean));
        ts.emplace_back(p + ".running_var", vector_tensor(l.running_var));
    };
    ts.emplace_back("stem.w", m.stem.w);
    ts.emplace_back("stem.b", m.stem.b);
    put_bn("stem_bn", m.stem_bn);
    for (size_t i = 0; i < m.blocks.size(); ++i) {
        const std::string p = "block." + std::to_string(i);
        auto& b = m.blocks[i];
        ts.emplace_back(p + ".conv1.w", b.conv1.w);
        ts.emplace_back(p + ".conv1.b", b.conv1.b);
        put_bn(p + ".bn1", b.bn1);
        ts.emplace_back(p + ".conv2.w", b.conv2.w);
        ts.emplace_back(p + ".conv2.b", b.conv2.b);
        put_bn(p + ".bn2", b.bn2);
        if (b.has_proj) {
            ts.emplace_back(p + ".proj.w", b.proj.w);
            ts.emplace_back(p + ".proj.b", b.proj.b);
            put_bn(p + ".proj_bn", b.proj_bn);
        }
    }
    ts.emplace_back("fc.w", m.fc_w);
    ts.emplace_back("fc.b", m.fc_b);
    return ts;
}

inline ClassifierModel<float> classifier_from_state(const NamedTensors& ts) {
    auto meta = checkpoint_tensor(ts, "meta");
    if (meta->size() != 3) throw std::runtime_error("classifier checkpoint: bad meta");
    auto m = make_classifier<float>(int(meta->value[0]), int(meta->value[1]),
                                    int(meta->value[2]), 0);
    auto assign = [&](Tensor<float>& dst, const std::string& name) {
        auto src = checkpoint_tensor(ts, name);
        if (src->shape != dst->shape)
            throw std::runtime_error("classifier checkpoint: shape mismatch for " + name);
        dst->value = src->value;
    };
    auto get_bn = [&](const std::string& p, BnLayer<float>& l) {
        assign(l.gamma, p + ".gamma");
        assign(l.beta, p + ".beta");
        l.running_mean = checkpoint_tensor(ts, p + ".running_mean")->value;
        l.running_var = checkpoint_tensor(ts, p + ".running_var")->value;
    };
    assign(m.stem.w, "stem.w");
    assign(m.stem.b, "stem.b");
    get_bn("stem_bn", m.stem_bn);
    for (size_t i = 0; i < m.blocks.size(); ++i) {
        const std::string p = "block." + std::to_string(i);
        auto& b = m.blocks[i];
        assign(b.conv1.w, p + ".conv1.w");
        assign(b.conv1.b, p + ".conv1.b");
        get_bn(p + ".bn1", b.bn1);
        assign(b.conv2.w, p + ".conv2.w");
        assign(b.conv2.b, p + ".conv2.b");
        get_bn(p + ".bn2", b.bn2);
        if (b.has_proj) {
            assign(b.proj.w, p + ".proj.w");
            assign(b.proj.b, p + ".proj.b");
            get_bn(p + ".proj_bn", b.proj_bn);
        }
    }
    assign(m.fc_w, "fc.w");
    assign(m.fc_b, "fc.b");
    return m;
}

// Convert a float-parameter model to double for gradient-check paths.
template <typename T>
DiscretizerModel<T> discretizer_cast(const DiscretizerModel<float>& m) {
    DiscretizerModel<T> out = make_discretizer<T>(m.f, m.d, m.codebook.K(), m.channels, m.width, 0);
    auto cast = [](Tensor<T>& dst, const Tensor<float>& src) {
        for (long i = 0; i < src->size(); ++i) dst->value[i] = T(src->value[i]);
    };
    for (size_t i = 0; i < m.enc.size(); ++i) {
        cast(out.enc[i].w, m.enc[i].w);
        cast(out.enc[i].b, m.enc[i].b);
    }
    for (size_t i = 0; i < m.dec.size(); ++i) {
        cast(out.dec[i].w, m.dec[i].w);
        cast(out.dec[i].b, m.dec[i].b);
    }
    cast(out.codebook.entries, m.codebook.entries);
    return out;
}

template <typename T>
ClassifierModel<T> classifier_cast(const ClassifierModel<float>& m) {
    ClassifierModel<T> out = make_classifier<T>(m.channels, m.num_classes, m.width, 0);
    auto cast = [](Tensor<T>& dst, const Tensor<float>& src) {
        for (long i = 0; i < src->size(); ++i) dst->value[i] = T(src->value[i]);
    };
    auto cast_vec = [](std::vector<T>& dst, const std::vector<float>& src) {
        dst.assign(src.begin(), src.end());
    };
    cast(out.stem.w, m.stem.w);
    cast(out.stem.b, m.stem.b);
    auto cast_bn = [&](BnLayer<T>& d, const BnLayer<float>& s) {
        cast(d.gamma, s.gamma);
        cast(d.beta, s.beta);
        cast_vec(d.running_mean, s.running_mean);
        cast_vec(d.running_var, s.running_var);
    };
    cast_bn(out.stem_bn, m.stem_bn);
    for (size_t i = 0; i < m.blocks.size(); ++i) {
        cast(out.blocks[i].conv1.w, m.blocks[i].conv1.w);
        cast(out.blocks[i].conv1.b, m.blocks[i].conv1.b);
        cast_bn(out.blocks[i].bn1, m.blocks[i].bn1);
        cast(out.blocks[i].conv2.w, m.blocks[i].conv2.w);
        cast(out.blocks[i].conv2.b, m.blocks[i].conv2.b);
        cast_bn(out.blocks[i].bn2, m.blocks[i].bn2);
        if (m.blocks[i].has_proj) {
            cast(out.blocks[i].proj.w, m.blocks[i].proj.w);
            cast(out.blocks[i].proj.b, m.blocks[i].proj.b);
            cast_bn(out.blocks[i].proj_bn, m.blocks[i].proj_bn);
        }
    }
    cast(out.fc_w, m.fc_w);
    cast(out.fc_b, m.fc_b);
    return out;
}

}  // namespace dat
