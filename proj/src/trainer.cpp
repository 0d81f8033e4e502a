#include "dat/trainer.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

namespace dat {

namespace {

// scoped requires_grad=false over a parameter set
class FreezeParams {
  public:
    explicit FreezeParams(const std::vector<Tensor<float>>& params) : params_(params) {
        saved_.reserve(params_.size());
        for (auto& p : params_) {
            saved_.push_back(p->requires_grad);
            p->requires_grad = false;
        }
    }
    ~FreezeParams() {
        for (size_t i = 0; i < params_.size(); ++i) params_[i]->requires_grad = saved_[i];
    }

  private:
    std::vector<Tensor<float>> params_;
    std::vector<bool> saved_;
};

void check_finite(const Tensor<float>& t, const char* what) {
    for (long i = 0; i < t->size(); ++i)
        if (!std::isfinite(t->value[i])) throw std::runtime_error(std::string(what) + ": non-finite value");
}

std::vector<int> shuffled_order(int n, uint64_t seed, const char* label, uint64_t index) {
    std::vector<int> order(size_t(n), 0);
    std::iota(order.begin(), order.end(), 0);
    RngStream rng(seed, label, index);
    for (int i = n - 1; i > 0; --i) std::swap(order[size_t(i)], order[size_t(rng.uniform_int(i + 1))]);
    return order;
}

}  // namespace

uint64_t params_checksum(const std::vector<Tensor<float>>& params) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (auto& p : params) h = fnv1a64(p->value.data(), p->value.size() * sizeof(float), h);
    return h;
}

Tensor<float> compute_perturbation(ClassifierModel<float>& model, const Tensor<float>& x_hat,
                                   const std::vector<int>& labels, const PerturbationSpec& spec) {
    if (spec.alpha < 0) throw std::invalid_argument("compute_perturbation: alpha must be >= 0");
    if (spec.bounded && !(spec.bound_eps > 0))
        throw std::invalid_argument("compute_perturbation: bound requires eps > 0");

    auto x = make_tensor<float>(x_hat->shape);
    x->value = x_hat->value;
    x->requires_grad = true;
    x->ensure_grad();

    {
        FreezeParams freeze(classifier_params(model));
        Tape<float> tape;
        auto logits = classifier_forward(&tape, model, x, BnMode::Eval);
        auto loss = softmax_cross_entropy(&tape, logits, labels);
        tape.backward(loss);
    }

    auto delta = make_tensor<float>(x_hat->shape);
    if (spec.sign_grad) {
        for (long i = 0; i < x->size(); ++i) {
            const float g = x->grad[i];
            delta->value[i] = spec.alpha * (g > 0 ? 1.0f : (g < 0 ? -1.0f : 0.0f));
        }
    } else {
        for (long i = 0; i < x->size(); ++i) delta->value[i] = spec.alpha * x->grad[i];
    }
    check_finite(delta, "compute_perturbation");
    if (spec.bounded && std::isfinite(spec.bound_eps)) {
        for (long i = 0; i < delta->size(); ++i)
            delta->value[i] = std::min(spec.bound_eps, std::max(-spec.bound_eps, delta->value[i]));
    }
    return delta;
}

Tensor<float> full_backward_perturbation(ClassifierModel<float>& model,
                                         DiscretizerModel<float>& disc, const Tensor<float>& x,
                                         const std::vector<int>& labels, float alpha) {
    if (alpha < 0) throw std::invalid_argument("full_backward_perturbation: alpha must be >= 0");
    auto xi = make_tensor<float>(x->shape);
    xi->value = x->value;
    xi->requires_grad = true;
    xi->ensure_grad();
    {
        FreezeParams freeze_cls(classifier_params(model));
        FreezeParams freeze_disc(discretizer_params(disc));
        Tape<float> tape;
        auto q = discretize(&tape, disc, xi);
        auto logits = classifier_forward(&tape, model, q.image, BnMode::Eval);
        auto loss = softmax_cross_entropy(&tape, logits, labels);
        tape.backward(loss);
    }
    auto delta = make_tensor<float>(x->shape);
    for (long i = 0; i < x->size(); ++i) delta->value[i] = alpha * xi->grad[i];
    check_finite(delta, "full_backward_perturbation");
    return delta;
}

DatStepResult dat_step(ClassifierModel<float>& model, const DiscretizerModel<float>& disc,
                       const Tensor<float>& x, const std::vector<int>& labels,
                       const PerturbationSpec& spec, SgdOptimizer<float>& opt) {
    auto clean = discretize<float>(nullptr, disc, x);
    auto delta = compute_perturbation(model, clean.image, labels, spec);

    auto x_plus = make_tensor<float>(x->shape);
    for (long i = 0; i < x->size(); ++i)
        x_plus->value[i] = std::min(1.0f, std::max(0.0f, x->value[i] + delta->value[i]));
    auto adv = discretize<float>(nullptr, disc, x_plus);

    long changed = 0;
    for (size_t i = 0; i < clean.indices.size(); ++i)
        if (clean.indices[i] != adv.indices[i]) ++changed;

    DatStepResult res;
    res.x_adv = adv.image;
    res.modified_fraction = float(changed) / float(clean.indices.size());

    Tape<float> tape;
    auto logits = classifier_forward(&tape, model, adv.image, BnMode::Train);
    auto loss = softmax_cross_entropy(&tape, logits, labels);
    if (!std::isfinite(loss->value[0])) throw std::runtime_error("dat_step: non-finite loss");
    opt.zero_grad();
    tape.backward(loss);
    opt.step();
    res.loss = loss->value[0];
    return res;
}

Tensor<float> random_word_perturbation(const DiscretizerModel<float>& disc,
                                       const Tensor<float>& x, float fraction, RngStream& rng) {
    if (fraction < 0 || fraction > 1)
        throw std::invalid_argument("random_word_perturbation: fraction must be in [0,1]");
    auto q = discretize<float>(nullptr, disc, x);
    const int K = disc.codebook.K();
    const int N = q.index_shape[0];
    const long grid = long(q.index_shape[1]) * q.index_shape[2];
    const long n_replace = std::lround(double(fraction) * double(grid));

    std::vector<int> indices = q.indices;
    std::vector<int> positions(size_t(grid), 0);
    for (int n = 0; n < N; ++n) {
        std::iota(positions.begin(), positions.end(), 0);
        // partial Fisher-Yates: first n_replace entries are the chosen positions
        for (long i = 0; i < n_replace; ++i) {
            const long j = i + rng.uniform_int(int(grid - i));
            std::swap(positions[size_t(i)], positions[size_t(j)]);
        }
        for (long i = 0; i < n_replace; ++i) {
            int& slot = indices[size_t(n) * grid + positions[size_t(i)]];
            const int repl = rng.uniform_int(K - 1);
            slot = repl >= slot ? repl + 1 : repl;  // forced different index
        }
    }

    // rebuild quantized latents from indices and decode
    const int d = disc.d;
    auto vq = make_tensor<float>({N, q.index_shape[1], q.index_shape[2], d});
    for (long v = 0; v < long(indices.size()); ++v)
        std::memcpy(vq->value.data() + v * d,
                    disc.codebook.entries->value.data() + size_t(indices[size_t(v)]) * d,
                    sizeof(float) * size_t(d));
    return decode<float>(nullptr, disc, vq);
}

Tensor<float> pgd_attack(ClassifierModel<float>& model, const Tensor<float>& x,
                         const std::vector<int>& labels, float epsilon, int steps,
                         float step_size) {
    if (!(epsilon > 0)) throw std::invalid_argument("pgd_attack: epsilon must be > 0");
    if (steps < 1) throw std::invalid_argument("pgd_attack: steps must be >= 1");
    auto x_adv = make_tensor<float>(x->shape);
    x_adv->value = x->value;
    FreezeParams freeze(classifier_params(model));
    for (int s = 0; s < steps; ++s) {
        auto xi = make_tensor<float>(x->shape);
        xi->value = x_adv->value;
        xi->requires_grad = true;
        xi->ensure_grad();
        Tape<float> tape;
        auto logits = classifier_forward(&tape, model, xi, BnMode::Eval);
        auto loss = softmax_cross_entropy(&tape, logits, labels);
        tape.backward(loss);
        for (long i = 0; i < x->size(); ++i) {
            if (!std::isfinite(xi->grad[i])) throw std::runtime_error("pgd_attack: non-finite gradient");
            const float g = xi->grad[i];
            float v = x_adv->value[i] + step_size * (g > 0 ? 1.0f : (g < 0 ? -1.0f : 0.0f));
            v = std::min(x->value[i] + epsilon, std::max(x->value[i] - epsilon, v));
            x_adv->value[i] = std::min(1.0f, std::max(0.0f, v));
        }
    }
    return x_adv;
}

float pixel_at_step(ClassifierModel<float>& model, const Tensor<float>& x,
                    const std::vector<int>& labels, float epsilon, int steps, float step_size,
                    SgdOptimizer<float>& opt) {
    auto x_adv = pgd_attack(model, x, labels, epsilon, steps, step_size);
    Tape<float> tape;
    auto logits = classifier_forward(&tape, model, x_adv, BnMode::Train);
    auto loss = softmax_cross_entropy(&tape, logits, labels);
    if (!std::isfinite(loss->value[0])) throw std::runtime_error("pixel_at_step: non-finite loss");
    opt.zero_grad();
    tape.backward(loss);
    opt.step();
    return loss->value[0];
}

float classifier_accuracy(ClassifierModel<float>& model, const Dataset& ds, int batch,
                          const DiscretizerModel<float>* preprocess) {
    std::vector<int> order(size_t(ds.n));
    std::iota(order.begin(), order.end(), 0);
    long correct = 0;
    for (int start = 0; start < ds.n; start += batch) {
        const int count = std::min(batch, ds.n - start);
        auto x = dataset_batch<float>(ds, order, start, count);
        if (preprocess) x = discretize<float>(nullptr, *preprocess, x).image;
        auto logits = classifier_forward<float>(nullptr, model, x, BnMode::Eval);
        const int K = logits->shape[1];
        for (int i = 0; i < count; ++i) {
            const float* row = logits->value.data() + size_t(i) * K;
            int arg = 0;
            for (int k = 1; k < K; ++k)
                if (row[k] > row[arg]) arg = k;
            if (arg == ds.labels[size_t(order[size_t(start + i)])]) ++correct;
        }
    }
    return float(correct) / float(ds.n);
}

TrainResult train_classifier(const ExperimentConfig& cfg, const Dataset& train_set,
                             const Dataset& test_set, DiscretizerModel<float>* disc,
                             MetricsWriter* writer) {
    const bool needs_disc = cfg.mode == "dat" || cfg.mode == "random_word";
    if (cfg.mode != "standard" && cfg.mode != "pixel_at" && !needs_disc)
        throw std::invalid_argument("train_classifier: unknown mode '" + cfg.mode + "'");
    if (needs_disc && !disc)
        throw std::invalid_argument("train_classifier: mode '" + cfg.mode +
                                    "' requires a discretizer checkpoint");

    TrainResult res;
    res.model = make_classifier<float>(train_set.c, train_set.num_classes, cfg.cls_width, cfg.seed);
    auto params = classifier_params(res.model);
    SgdOptimizer<float> opt(params, float(cfg.lr), float(cfg.momentum), float(cfg.weight_decay));

    PerturbationSpec spec;
    spec.alpha = float(cfg.alpha);
    spec.sign_grad = cfg.sign_grad;
    if (cfg.bound_eps > 0) {
        spec.bounded = true;
        spec.bound_eps = float(cfg.bound_eps);
    }
    const float at_step = cfg.at_step_size > 0
                              ? float(cfg.at_step_size)
                              : float(cfg.at_eps) / float(std::max(1, cfg.at_steps));
    const uint64_t disc_sum = disc ? params_checksum(discretizer_params(*disc)) : 0;
    const std::string hash = config_hash(cfg);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.lr_decay_every > 0 && epoch > 0 && epoch % cfg.lr_decay_every == 0)
            opt.set_lr(opt.lr() * float(cfg.lr_decay));
        auto order = shuffled_order(train_set.n, cfg.seed, "shuffle", uint64_t(epoch));
        RngStream word_rng(cfg.seed, "random_word", uint64_t(epoch));
        double loss_sum = 0, frac_sum = 0;
        long steps = 0;
        for (int start = 0; start + cfg.batch <= train_set.n; start += cfg.batch) {
            auto x = dataset_batch<float>(train_set, order, start, cfg.batch);
            auto y = batch_labels(train_set, order, start, cfg.batch);
            if (cfg.mode == "standard") {
                Tape<float> tape;
                auto loss = softmax_cross_entropy(
                    &tape, classifier_forward(&tape, res.model, x, BnMode::Train), y);
                if (!std::isfinite(loss->value[0]))
                    throw std::runtime_error("train: non-finite loss");
                opt.zero_grad();
                tape.backward(loss);
                opt.step();
                loss_sum += loss->value[0];
            } else if (cfg.mode == "pixel_at") {
                loss_sum += pixel_at_step(res.model, x, y, float(cfg.at_eps), cfg.at_steps,
                                          at_step, opt);
            } else if (cfg.mode == "dat") {
                auto r = dat_step(res.model, *disc, x, y, spec, opt);
                loss_sum += r.loss;
                frac_sum += r.modified_fraction;
            } else {  // random_word
                auto x_rand =
                    random_word_perturbation(*disc, x, float(cfg.random_fraction), word_rng);
                Tape<float> tape;
                auto loss = softmax_cross_entropy(
                    &tape, classifier_forward(&tape, res.model, x_rand, BnMode::Train), y);
                if (!std::isfinite(loss->value[0]))
                    throw std::runtime_error("train: non-finite loss");
                opt.zero_grad();
                tape.backward(loss);
                opt.step();
                loss_sum += loss->value[0];
            }
            ++steps;
        }
        if (disc && params_checksum(discretizer_params(*disc)) != disc_sum)
            throw std::runtime_error("train: frozen discretizer was modified");

        MetricsRecord rec;
        rec.run_name = cfg.run_name;
        rec.config_hash = hash;
        rec.epoch = epoch;
        rec.values["train_loss"] = steps ? loss_sum / double(steps) : 0.0;
        rec.values["val_accuracy"] = double(classifier_accuracy(res.model, test_set, 128));
        if (cfg.mode == "dat")
            rec.values["modified_fraction"] = steps ? frac_sum / double(steps) : 0.0;
        if (writer) writer->write(rec);
        res.history.push_back(std::move(rec));
    }
    return res;
}

DiscTrainResult train_discretizer(const ExperimentConfig& cfg, const Dataset& train_set,
                                  const Dataset& test_set, MetricsWriter* writer) {
    DiscTrainResult res;
    res.model = make_discretizer<float>(cfg.disc_f, cfg.disc_d, cfg.disc_k, train_set.c,
                                        cfg.disc_width, cfg.seed);
    auto params = discretizer_params(res.model);
    AdamOptimizer<float> opt(params, float(cfg.disc_lr));
    const std::string hash = config_hash(cfg);
    const int K = cfg.disc_k;

    auto heldout_mse = [&](const Dataset& ds, std::vector<long>* usage) {
        std::vector<int> order(size_t(ds.n));
        std::iota(order.begin(), order.end(), 0);
        double se = 0;
        long n = 0;
        for (int start = 0; start < ds.n; start += 128) {
            const int count = std::min(128, ds.n - start);
            auto x = dataset_batch<float>(ds, order, start, count);
            auto r = discretize<float>(nullptr, res.model, x);
            for (long i = 0; i < x->size(); ++i) {
                const double d = double(r.image->value[i]) - double(x->value[i]);
                se += d * d;
            }
            n += x->size();
            if (usage) {
                auto h = usage_histogram(r.indices, K);
                for (int k = 0; k < K; ++k) (*usage)[size_t(k)] += h[size_t(k)];
            }
        }
        return se / double(n);
    };

    std::vector<long> usage0(size_t(K), 0);
    double epoch0_mse = heldout_mse(test_set, nullptr);

    for (int epoch = 0; epoch < cfg.disc_epochs; ++epoch) {
        auto order = shuffled_order(train_set.n, cfg.seed, "disc_shuffle", uint64_t(epoch));
        RngStream reseed_rng(cfg.seed, "dead_entry", uint64_t(epoch));
        std::vector<long> epoch_usage(size_t(K), 0);
        Tensor<float> last_latents;
        double loss_sum = 0;
        long steps = 0;
        for (int start = 0; start + cfg.disc_batch <= train_set.n; start += cfg.disc_batch) {
            auto x = dataset_batch<float>(train_set, order, start, cfg.disc_batch);
            Tape<float> tape;
            auto r = discretize(&tape, res.model, x);
            auto [codebook_loss, commitment_loss] = vq_losses(&tape, r.latents, r.quantized);
            auto recon = mse(&tape, r.image, x);
            auto loss = add(&tape, recon,
                            add(&tape, codebook_loss,
                                scale(&tape, commitment_loss, float(cfg.commitment_weight))));
            if (!std::isfinite(loss->value[0]))
                throw std::runtime_error("train_discretizer: non-finite loss");
            opt.zero_grad();
            tape.backward(loss);
            opt.step();
            loss_sum += loss->value[0];
            ++steps;
            auto h = usage_histogram(r.indices, K);
            for (int k = 0; k < K; ++k) epoch_usage[size_t(k)] += h[size_t(k)];
            last_latents = r.latents;
        }
        // re-seed entries unused for the whole epoch from the last batch's encodings
        if (last_latents) {
            const long nvec = last_latents->size() / res.model.d;
            for (int k = 0; k < K; ++k) {
                if (epoch_usage[size_t(k)] != 0) continue;
                const long v = reseed_rng.uniform_int(int(nvec));
                std::memcpy(res.model.codebook.entries->value.data() + size_t(k) * res.model.d,
                            last_latents->value.data() + v * res.model.d,
                            sizeof(float) * size_t(res.model.d));
            }
        }

        std::vector<long> usage(size_t(K), 0);
        const double val_mse = heldout_mse(test_set, &usage);
        long used = 0;
        for (long u : usage)
            if (u > 0) ++used;

        MetricsRecord rec;
        rec.run_name = cfg.run_name;
        rec.config_hash = hash;
        rec.epoch = epoch;
        rec.values["train_loss"] = steps ? loss_sum / double(steps) : 0.0;
        rec.values["val_mse"] = val_mse;
        rec.values["epoch0_mse"] = epoch0_mse;
        rec.values["codebook_usage"] = double(used) / double(K);
        if (writer) writer->write(rec);
        res.history.push_back(std::move(rec));
    }
    return res;
}

}  // namespace dat
