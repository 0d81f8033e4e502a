#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dat {

// Declarative run description; two runs with equal configs and inputs produce
// bitwise-equal outputs.
struct ExperimentConfig {
    std::string run_name = "run";
    uint64_t seed = 1;

    // dataset
    std::string dataset = "synthetic";  // "synthetic" or "idx"
    std::string idx_images, idx_labels, idx_test_images, idx_test_labels;
    int train_size = 10000;
    int test_size = 2000;
    int num_classes = 10;

    // discretizer
    int disc_f = 4;
    int disc_d = 16;
    int disc_k = 128;
    int disc_width = 32;
    double commitment_weight = 0.25;
    int disc_epochs = 6;
    int disc_batch = 64;
    double disc_lr = 2e-3;

    // classifier / trainer
    std::string mode = "standard";  // standard | pixel_at | dat | random_word
    int cls_width = 16;
    int epochs = 4;
    int batch = 64;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double lr_decay = 0.1;
    int lr_decay_every = 0;  // epochs; 0 = no decay
    double alpha = 0.1;      // DAT gradient magnitude
    bool sign_grad = false;  // sign-gradient delta instead of raw gradient
    double bound_eps = 0;    // l_inf bound on delta; 0 = unbounded
    double at_eps = 4.0 / 255.0;
    int at_steps = 1;
    double at_step_size = 0;  // 0 = at_eps / steps (min at_eps for 1 step)
    double random_fraction = 0.038;
    std::string discretizer_ckpt;

    // evaluation
    bool with_discretizer = false;
    std::vector<double> fgsm_eps{1.0 / 255.0, 2.0 / 255.0, 4.0 / 255.0};
    bool corruptions = true;
    std::string baseline_metrics;  // per-corruption errors for rCE

    bool timestamps = false;  // wall-clock in metrics; off for bitwise reproducibility
};

// line-oriented key=value text, '#' comments; unknown keys rejected
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);
void apply_config_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// canonical serialization (sorted key=value lines) and its FNV-1a hash
std::string canonical_config(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace dat
