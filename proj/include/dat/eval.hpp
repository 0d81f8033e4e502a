#pragma once

#include <optional>

#include "dat/classifier.hpp"
#include "dat/dataset.hpp"
#include "dat/discretizer.hpp"
#include "dat/metrics.hpp"

namespace dat {

enum class CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    GaussianBlur,
    Contrast,
    Brightness,
    Pixelate,
};

constexpr int kNumCorruptionKinds = 7;
constexpr int kNumSeverities = 5;

const char* corruption_name(CorruptionKind kind);
CorruptionKind corruption_from_name(const std::string& name);

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::GaussianNoise;
    int severity = 1;  // 1..5
    uint64_t seed = 0;
};

// Deterministic corruption of one [C,H,W] image in [0,1]. Severity parameter
// tables are fixed in corruption_tables().
Tensor<float> corrupt(const Tensor<float>& image, const CorruptionSpec& spec);

struct CorruptionTables {
    float gaussian_noise_std[kNumSeverities];
    float shot_noise_photons[kNumSeverities];
    float impulse_noise_prob[kNumSeverities];
    float gaussian_blur_sigma[kNumSeverities];
    float contrast_factor[kNumSeverities];
    float brightness_offset[kNumSeverities];
    int pixelate_factor[kNumSeverities];
};

const CorruptionTables& corruption_tables();

// primitive kernels behind corrupt(), exposed for direct parameter control
Tensor<float> apply_brightness(const Tensor<float>& image, float offset);
Tensor<float> apply_contrast(const Tensor<float>& image, float factor);
Tensor<float> apply_gaussian_blur(const Tensor<float>& image, float sigma);
Tensor<float> apply_pixelate(const Tensor<float>& image, int factor);

// x_adv = clamp(x + eps * sign(grad_x L), 0, 1); the model is untouched.
Tensor<float> fgsm_attack(ClassifierModel<float>& model, const Tensor<float>& x,
                          const std::vector<int>& labels, float epsilon);

struct EvalOptions {
    bool with_discretizer = false;                 // route every input through Q first
    const DiscretizerModel<float>* discretizer = nullptr;
    std::vector<float> fgsm_eps;                   // attack sweep
    bool corruptions = true;                       // run the 7x5 corruption suite
    uint64_t seed = 1;
    int batch = 128;
    // per-corruption error rates of a baseline model, keyed like
    // "corruption_gaussian_noise_s3_err"; enables the rCE metric
    std::optional<std::map<std::string, double>> baseline_errors;
    bool want_rce = false;
};

// Clean accuracy, per-attack robust accuracy, per-corruption accuracy, and
// (optionally) baseline-relative corruption error. Never mutates the model.
MetricsRecord evaluate(ClassifierModel<float>& model, const Dataset& test_set,
                       const EvalOptions& options);

}  // namespace dat
