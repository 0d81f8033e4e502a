#pragma once

#include "dat/classifier.hpp"
#include "dat/config.hpp"
#include "dat/dataset.hpp"
#include "dat/discretizer.hpp"
#include "dat/metrics.hpp"
#include "dat/optimizer.hpp"

namespace dat {

// How the one-step adversarial perturbation is formed.
struct PerturbationSpec {
    float alpha = 0.1f;      // gradient magnitude
    bool sign_grad = false;  // substitute sign(grad) for the raw gradient
    bool bounded = false;    // project delta onto an l_inf ball
    float bound_eps = 0.0f;  // ball radius; ignored unless bounded
};

// delta = alpha * grad_{x_hat} L(x_hat, y, theta), detached from any tape.
// The attack forward runs BN in eval mode and leaves no gradient residue in
// the model parameters.
Tensor<float> compute_perturbation(ClassifierModel<float>& model, const Tensor<float>& x_hat,
                                   const std::vector<int>& labels, const PerturbationSpec& spec);

// delta = alpha * grad_x L(Q(x), y, theta) with true backprop through decoder
// and encoder, straight-through only at the quantizer. Analysis path only.
Tensor<float> full_backward_perturbation(ClassifierModel<float>& model,
                                         DiscretizerModel<float>& disc, const Tensor<float>& x,
                                         const std::vector<int>& labels, float alpha);

struct DatStepResult {
    float loss = 0;
    Tensor<float> x_adv;
    float modified_fraction = 0;
};

// One DAT update: x_hat <- Q(x); delta <- alpha * grad; x_adv <- Q(clamp(x+delta));
// one optimizer step on L(x_adv, y, theta).
DatStepResult dat_step(ClassifierModel<float>& model, const DiscretizerModel<float>& disc,
                       const Tensor<float>& x, const std::vector<int>& labels,
                       const PerturbationSpec& spec, SgdOptimizer<float>& opt);

// Re-draws round(fraction*h*w) token positions per image to a different
// uniformly random index and decodes.
Tensor<float> random_word_perturbation(const DiscretizerModel<float>& disc,
                                       const Tensor<float>& x, float fraction, RngStream& rng);

// Projected sign-gradient ascent in pixel space (FGSM when steps == 1).
Tensor<float> pgd_attack(ClassifierModel<float>& model, const Tensor<float>& x,
                         const std::vector<int>& labels, float epsilon, int steps,
                         float step_size);

// One pixel-space AT update: inner maximization by PGD, then an optimizer step.
float pixel_at_step(ClassifierModel<float>& model, const Tensor<float>& x,
                    const std::vector<int>& labels, float epsilon, int steps, float step_size,
                    SgdOptimizer<float>& opt);

float classifier_accuracy(ClassifierModel<float>& model, const Dataset& ds, int batch = 128,
                          const DiscretizerModel<float>* preprocess = nullptr);

uint64_t params_checksum(const std::vector<Tensor<float>>& params);

struct TrainResult {
    ClassifierModel<float> model;
    std::vector<MetricsRecord> history;
};

// Full training loop for all modes (standard | pixel_at | dat | random_word),
// deterministic given config.seed. The discretizer stays frozen.
TrainResult train_classifier(const ExperimentConfig& cfg, const Dataset& train_set,
                             const Dataset& test_set, DiscretizerModel<float>* disc,
                             MetricsWriter* writer = nullptr);

struct DiscTrainResult {
    DiscretizerModel<float> model;
    std::vector<MetricsRecord> history;
};

// VQ training: L2 reconstruction + codebook + commitment terms with a
// straight-through bridge at the quantizer; dead entries re-seeded per epoch.
DiscTrainResult train_discretizer(const ExperimentConfig& cfg, const Dataset& train_set,
                                  const Dataset& test_set, MetricsWriter* writer = nullptr);

}  // namespace dat
