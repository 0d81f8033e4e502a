#include "dat/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace dat {

namespace {

const char* kCorruptionNames[kNumCorruptionKinds] = {
    "gaussian_noise", "shot_noise", "impulse_noise", "gaussian_blur",
    "contrast",       "brightness", "pixelate",
};

// restore-on-exit guard that detaches all parameters from gradient tracking
struct FreezeParams {
    std::vector<Tensor<float>> params;
    std::vector<bool> saved;
    explicit FreezeParams(std::vector<Tensor<float>> ps) : params(std::move(ps)) {
        for (auto& p : params) {
            saved.push_back(p->requires_grad);
            p->requires_grad = false;
        }
    }
    ~FreezeParams() {
        for (size_t i = 0; i < params.size(); ++i) params[i]->requires_grad = saved[i];
    }
};

int count_correct(const Tensor<float>& logits, const std::vector<int>& labels) {
    const int n = logits->shape[0], c = logits->shape[1];
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        const float* row = logits->value.data() + size_t(i) * c;
        int best = 0;
        for (int j = 1; j < c; ++j)
            if (row[j] > row[best]) best = j;
        if (best == labels[size_t(i)]) ++correct;
    }
    return correct;
}

long poisson_sample(double lam, RngStream& rng) {
    if (lam <= 0) return 0;
    if (lam < 30.0) {  // Knuth
        const double limit = std::exp(-lam);
        long k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= rng.uniform();
        } while (p > limit);
        return k - 1;
    }
    // normal approximation for large rates
    long k = std::lround(lam + std::sqrt(lam) * rng.normal());
    return k < 0 ? 0 : k;
}

std::string eps_key(float eps) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", double(eps) * 255.0);
    return std::string("fgsm_") + buf + "_255";
}

}  // namespace

const char* corruption_name(CorruptionKind kind) { return kCorruptionNames[int(kind)]; }

CorruptionKind corruption_from_name(const std::string& name) {
    for (int i = 0; i < kNumCorruptionKinds; ++i)
        if (name == kCorruptionNames[i]) return CorruptionKind(i);
    throw std::invalid_argument("unknown corruption: " + name);
}

const CorruptionTables& corruption_tables() {
    static const CorruptionTables t = {
        {0.04f, 0.08f, 0.12f, 0.18f, 0.26f},   // gaussian_noise std
        {250.f, 100.f, 50.f, 25.f, 12.f},      // shot_noise photons per unit intensity
        {0.02f, 0.04f, 0.08f, 0.14f, 0.22f},   // impulse_noise pixel probability
        {0.4f, 0.6f, 0.9f, 1.3f, 1.8f},        // gaussian_blur sigma
        {0.75f, 0.6f, 0.45f, 0.3f, 0.2f},      // contrast factor
        {0.08f, 0.14f, 0.2f, 0.26f, 0.32f},    // brightness offset
        {2, 2, 4, 4, 8},                       // pixelate block size
    };
    return t;
}

Tensor<float> apply_brightness(const Tensor<float>& image, float offset) {
    auto out = make_tensor<float>(image->shape);
    for (long i = 0; i < image->size(); ++i)
        out->value[i] = std::clamp(image->value[i] + offset, 0.0f, 1.0f);
    return out;
}

Tensor<float> apply_contrast(const Tensor<float>& image, float factor) {
    double mean = 0;
    for (long i = 0; i < image->size(); ++i) mean += image->value[i];
    mean /= double(image->size());
    auto out = make_tensor<float>(image->shape);
    for (long i = 0; i < image->size(); ++i)
        out->value[i] = std::clamp(float(mean + (image->value[i] - mean) * factor), 0.0f, 1.0f);
    return out;
}

Tensor<float> apply_gaussian_blur(const Tensor<float>& image, float sigma) {
    if (image->shape.size() != 3) throw std::invalid_argument("blur: expected [C,H,W]");
    const int c = image->shape[0], h = image->shape[1], w = image->shape[2];
    const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
    std::vector<float> kernel(size_t(2 * radius + 1));
    double norm = 0;
    for (int i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * double(i) * i / (double(sigma) * sigma));
        kernel[size_t(i + radius)] = float(v);
        norm += v;
    }
    for (auto& k : kernel) k = float(k / norm);

    auto clamp_idx = [](int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); };
    auto tmp = make_tensor<float>(image->shape);
    auto out = make_tensor<float>(image->shape);
    // separable: horizontal then vertical, edge-clamped
    for (int ch = 0; ch < c; ++ch) {
        const float* src = image->value.data() + size_t(ch) * h * w;
        float* mid = tmp->value.data() + size_t(ch) * h * w;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[size_t(i + radius)] * src[y * w + clamp_idx(x + i, w)];
                mid[y * w + x] = float(acc);
            }
        float* dst = out->value.data() + size_t(ch) * h * w;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[size_t(i + radius)] * mid[clamp_idx(y + i, h) * w + x];
                dst[y * w + x] = std::clamp(float(acc), 0.0f, 1.0f);
            }
    }
    return out;
}

Tensor<float> apply_pixelate(const Tensor<float>& image, int factor) {
    if (image->shape.size() != 3) throw std::invalid_argument("pixelate: expected [C,H,W]");
    if (factor < 1) throw std::invalid_argument("pixelate: factor must be >= 1");
    const int c = image->shape[0], h = image->shape[1], w = image->shape[2];
    auto out = make_tensor<float>(image->shape);
    for (int ch = 0; ch < c; ++ch) {
        const float* src = image->value.data() + size_t(ch) * h * w;
        float* dst = out->value.data() + size_t(ch) * h * w;
        for (int by = 0; by < h; by += factor)
            for (int bx = 0; bx < w; bx += factor) {
                const int ey = std::min(by + factor, h), ex = std::min(bx + factor, w);
                double acc = 0;
                for (int y = by; y < ey; ++y)
                    for (int x = bx; x < ex; ++x) acc += src[y * w + x];
                const float avg = float(acc / ((ey - by) * (ex - bx)));
                for (int y = by; y < ey; ++y)
                    for (int x = bx; x < ex; ++x) dst[y * w + x] = avg;
            }
    }
    return out;
}

Tensor<float> corrupt(const Tensor<float>& image, const CorruptionSpec& spec) {
    if (image->shape.size() != 3) throw std::invalid_argument("corrupt: expected [C,H,W]");
    if (spec.severity < 1 || spec.severity > kNumSeverities)
        throw std::invalid_argument("corrupt: severity must be in [1," +
                                    std::to_string(kNumSeverities) + "]");
    const auto& t = corruption_tables();
    const int s = spec.severity - 1;
    RngStream rng(spec.seed, corruption_name(spec.kind), uint64_t(spec.severity));
    switch (spec.kind) {
        case CorruptionKind::GaussianNoise: {
            auto out = make_tensor<float>(image->shape);
            const float std = t.gaussian_noise_std[s];
            for (long i = 0; i < image->size(); ++i)
                out->value[i] = std::clamp(image->value[i] + std * float(rng.normal()), 0.0f, 1.0f);
            return out;
        }
        case CorruptionKind::ShotNoise: {
            auto out = make_tensor<float>(image->shape);
            const double photons = t.shot_noise_photons[s];
            for (long i = 0; i < image->size(); ++i) {
                long k = poisson_sample(double(image->value[i]) * photons, rng);
                out->value[i] = std::clamp(float(double(k) / photons), 0.0f, 1.0f);
            }
            return out;
        }
        case CorruptionKind::ImpulseNoise: {
            auto out = make_tensor<float>(image->shape);
            const double p = t.impulse_noise_prob[s];
            for (long i = 0; i < image->size(); ++i) {
                if (rng.uniform() < p)
                    out->value[i] = rng.uniform() < 0.5 ? 0.0f : 1.0f;
                else
                    out->value[i] = image->value[i];
            }
            return out;
        }
        case CorruptionKind::GaussianBlur:
            return apply_gaussian_blur(image, t.gaussian_blur_sigma[s]);
        case CorruptionKind::Contrast:
            return apply_contrast(image, t.contrast_factor[s]);
        case CorruptionKind::Brightness:
            return apply_brightness(image, t.brightness_offset[s]);
        case CorruptionKind::Pixelate:
            return apply_pixelate(image, t.pixelate_factor[s]);
    }
    throw std::logic_error("corrupt: unreachable");
}

Tensor<float> fgsm_attack(ClassifierModel<float>& model, const Tensor<float>& x,
                          const std::vector<int>& labels, float epsilon) {
    FreezeParams freeze(classifier_params(model));
    auto x_in = make_tensor<float>(x->shape, x->value, true);
    Tape<float> tape;
    auto logits = classifier_forward(&tape, model, x_in, BnMode::Eval);
    auto loss = softmax_cross_entropy(&tape, logits, labels);
    tape.backward(loss);
    auto out = make_tensor<float>(x->shape);
    for (long i = 0; i < x->size(); ++i) {
        const float g = x_in->grad[i];
        const float step = g > 0 ? epsilon : (g < 0 ? -epsilon : 0.0f);
        out->value[i] = std::clamp(x->value[i] + step, 0.0f, 1.0f);
    }
    return out;
}

namespace {

// classify a whole dataset-shaped tensor batch-by-batch, optional Q-preprocessing
int correct_on(ClassifierModel<float>& model, const DiscretizerModel<float>* disc,
               const Tensor<float>& x, const std::vector<int>& labels) {
    Tensor<float> in = x;
    if (disc) in = discretize<float>(nullptr, *disc, x).image;
    auto logits = classifier_forward<float>(nullptr, model, in, BnMode::Eval);
    return count_correct(logits, labels);
}

}  // namespace

MetricsRecord evaluate(ClassifierModel<float>& model, const Dataset& test_set,
                       const EvalOptions& options) {
    if (options.with_discretizer && !options.discretizer)
        throw std::invalid_argument("evaluate: with_discretizer set but no discretizer given");
    if (options.want_rce && !options.baseline_errors)
        throw std::invalid_argument("evaluate: rCE requested without baseline error rates");
    const DiscretizerModel<float>* disc = options.with_discretizer ? options.discretizer : nullptr;
    MetricsRecord rec;
    std::vector<int> order(size_t(test_set.n));
    for (int i = 0; i < test_set.n; ++i) order[size_t(i)] = i;

    long clean_correct = 0;
    std::vector<long> fgsm_correct(options.fgsm_eps.size(), 0);
    // corr_correct[kind][severity-1]
    long corr_correct[kNumCorruptionKinds][kNumSeverities] = {};

    for (int start = 0; start < test_set.n; start += options.batch) {
        const int count = std::min(options.batch, test_set.n - start);
        auto x = dataset_batch<float>(test_set, order, start, count);
        auto y = batch_labels(test_set, order, start, count);
        clean_correct += correct_on(model, disc, x, y);

        for (size_t e = 0; e < options.fgsm_eps.size(); ++e) {
            Tensor<float> at_point = disc ? discretize<float>(nullptr, *disc, x).image : x;
            auto x_adv = fgsm_attack(model, at_point, y, options.fgsm_eps[e]);
            // perturbation applied to the original pixels, then re-preprocessed
            for (long i = 0; i < x->size(); ++i)
                x_adv->value[i] =
                    std::clamp(x->value[i] + (x_adv->value[i] - at_point->value[i]), 0.0f, 1.0f);
            fgsm_correct[e] += correct_on(model, disc, x_adv, y);
        }

        if (options.corruptions) {
            const long img = test_set.image_size();
            for (int k = 0; k < kNumCorruptionKinds; ++k)
                for (int sev = 1; sev <= kNumSeverities; ++sev) {
                    auto xc = make_tensor<float>(x->shape);
                    for (int i = 0; i < count; ++i) {
                        auto one = make_tensor<float>({test_set.c, test_set.h, test_set.w});
                        std::copy_n(x->value.data() + size_t(i) * img, img, one->value.data());
                        CorruptionSpec spec{CorruptionKind(k), sev,
                                            options.seed * 1000003ull + uint64_t(start + i)};
                        auto ci = corrupt(one, spec);
                        std::copy_n(ci->value.data(), img, xc->value.data() + size_t(i) * img);
                    }
                    corr_correct[k][sev - 1] += correct_on(model, disc, xc, y);
                }
        }
    }

    const double n = double(test_set.n);
    rec.values["clean_acc"] = clean_correct / n;
    rec.values["clean_err"] = 1.0 - clean_correct / n;
    for (size_t e = 0; e < options.fgsm_eps.size(); ++e)
        rec.values[eps_key(options.fgsm_eps[e]) + "_acc"] = fgsm_correct[e] / n;

    if (options.corruptions) {
        const double eps0 = 0.5 / n;  // smoothing so zero-error baselines stay finite
        double mean_err = 0, mce = 0, rce = 0;
        for (int k = 0; k < kNumCorruptionKinds; ++k) {
            const std::string base = std::string("corruption_") + kCorruptionNames[k];
            double kind_err = 0;
            for (int sev = 1; sev <= kNumSeverities; ++sev) {
                const double err = 1.0 - corr_correct[k][sev - 1] / n;
                rec.values[base + "_s" + std::to_string(sev) + "_err"] = err;
                kind_err += err;
            }
            kind_err /= kNumSeverities;
            rec.values[base + "_err"] = kind_err;
            rec.values[base + "_acc"] = 1.0 - kind_err;
            mean_err += kind_err;
            if (options.want_rce) {
                const auto& bl = *options.baseline_errors;
                double err_sum = 0, base_sum = 0, rel_sum = 0, base_rel_sum = 0;
                auto bl_clean = bl.find("clean_err");
                if (bl_clean == bl.end())
                    throw std::invalid_argument("evaluate: baseline is missing clean_err");
                for (int sev = 1; sev <= kNumSeverities; ++sev) {
                    const std::string key = base + "_s" + std::to_string(sev) + "_err";
                    auto it = bl.find(key);
                    if (it == bl.end())
                        throw std::invalid_argument("evaluate: baseline is missing " + key);
                    const double err = rec.values[key];
                    err_sum += err;
                    base_sum += it->second;
                    rel_sum += err - rec.values["clean_err"];
                    base_rel_sum += it->second - bl_clean->second;
                }
                mce += (err_sum + eps0) / (base_sum + eps0);
                rce += (rel_sum + eps0) / (base_rel_sum + eps0);
            }
        }
        rec.values["corruption_mean_err"] = mean_err / kNumCorruptionKinds;
        rec.values["corruption_mean_acc"] = 1.0 - mean_err / kNumCorruptionKinds;
        if (options.want_rce) {
            rec.values["mce"] = mce / kNumCorruptionKinds;
            rec.values["rce"] = rce / kNumCorruptionKinds;
        }
    }
    return rec;
}

}  // namespace dat
