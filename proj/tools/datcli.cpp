#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "dat/analysis.hpp"
#include "dat/eval.hpp"
#include "dat/serialize.hpp"
#include "dat/trainer.hpp"

namespace fs = std::filesystem;
using namespace dat;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string runs_root = "runs";
    bool force = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key=value config file");
    cmd->add_option("--set", args.overrides, "config override, key=value (repeatable)");
    cmd->add_option("--runs", args.runs_root, "root directory for run outputs");
    cmd->add_flag("--force", args.force, "reuse an existing run directory");
}

ExperimentConfig build_config(const CommonArgs& args) {
    ExperimentConfig cfg;
    if (!args.config_path.empty()) cfg = load_config_file(args.config_path);
    for (const auto& kv : args.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        apply_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

// <runs>/<run_name>-<hash>, created fresh unless --force
fs::path open_run_dir(const ExperimentConfig& cfg, const CommonArgs& args) {
    fs::path dir = fs::path(args.runs_root) / (cfg.run_name + "-" + config_hash(cfg));
    if (fs::exists(dir) && !args.force)
        throw std::invalid_argument("run directory " + dir.string() +
                                    " already exists (pass --force to append)");
    fs::create_directories(dir);
    std::ofstream f(dir / "config.txt", std::ios::trunc);
    f << canonical_config(cfg);
    return dir;
}

std::pair<Dataset, Dataset> load_datasets(const ExperimentConfig& cfg) {
    if (cfg.dataset == "synthetic") {
        return {synthetic_dataset(cfg.train_size, cfg.num_classes, cfg.seed),
                synthetic_dataset(cfg.test_size, cfg.num_classes, cfg.seed + 1)};
    }
    if (cfg.dataset == "idx") {
        if (cfg.idx_images.empty() || cfg.idx_labels.empty() || cfg.idx_test_images.empty() ||
            cfg.idx_test_labels.empty())
            throw std::invalid_argument("dataset=idx requires idx_images, idx_labels, "
                                        "idx_test_images, idx_test_labels");
        return {load_idx(cfg.idx_images, cfg.idx_labels),
                load_idx(cfg.idx_test_images, cfg.idx_test_labels)};
    }
    throw std::invalid_argument("unknown dataset '" + cfg.dataset + "' (synthetic|idx)");
}

DiscretizerModel<float> load_discretizer(const std::string& path) {
    if (path.empty()) throw std::invalid_argument("missing discretizer checkpoint path");
    return discretizer_from_state(load_checkpoint(path));
}

ClassifierModel<float> load_classifier(const std::string& path) {
    if (path.empty()) throw std::invalid_argument("missing classifier checkpoint path");
    return classifier_from_state(load_checkpoint(path));
}

void print_record(const MetricsRecord& rec) { std::cout << metrics_to_json(rec) << "\n"; }

std::map<std::string, double> load_baseline(const std::string& path) {
    auto recs = read_metrics_jsonl(path);
    if (recs.empty()) throw std::invalid_argument(path + ": no metrics records");
    return recs.back().values;
}

void push_be32(std::ofstream& f, uint32_t v) {
    unsigned char buf[4] = {(unsigned char)(v >> 24), (unsigned char)(v >> 16),
                            (unsigned char)(v >> 8), (unsigned char)v};
    f.write(reinterpret_cast<char*>(buf), 4);
}

// grayscale IDX pair from the synthetic generator (channel mean, 8-bit)
void write_idx_pair(const Dataset& ds, const std::string& images, const std::string& labels) {
    std::ofstream imgf(images, std::ios::binary | std::ios::trunc);
    if (!imgf) throw std::runtime_error(images + ": cannot open for writing");
    push_be32(imgf, 0x00000803u);
    push_be32(imgf, uint32_t(ds.n));
    push_be32(imgf, uint32_t(ds.h));
    push_be32(imgf, uint32_t(ds.w));
    const long hw = long(ds.h) * ds.w;
    for (int i = 0; i < ds.n; ++i) {
        const float* img = ds.image(i);
        for (long p = 0; p < hw; ++p) {
            float v = 0;
            for (int c = 0; c < ds.c; ++c) v += img[c * hw + p];
            const unsigned char byte = (unsigned char)std::lround(255.0f * v / float(ds.c));
            imgf.write(reinterpret_cast<const char*>(&byte), 1);
        }
    }
    std::ofstream labf(labels, std::ios::binary | std::ios::trunc);
    if (!labf) throw std::runtime_error(labels + ": cannot open for writing");
    push_be32(labf, 0x00000801u);
    push_be32(labf, uint32_t(ds.n));
    for (int l : ds.labels) {
        const unsigned char byte = (unsigned char)l;
        labf.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

int cmd_gen_data(const CommonArgs& args, const std::string& out_prefix) {
    auto cfg = build_config(args);
    auto [train, test] = load_datasets(cfg);
    write_idx_pair(train, out_prefix + "-train-images.idx", out_prefix + "-train-labels.idx");
    write_idx_pair(test, out_prefix + "-test-images.idx", out_prefix + "-test-labels.idx");
    std::cout << "wrote " << train.n << " train / " << test.n << " test images to " << out_prefix
              << "-*.idx\n";
    return 0;
}

int cmd_train_discretizer(const CommonArgs& args) {
    auto cfg = build_config(args);
    auto [train, test] = load_datasets(cfg);
    auto dir = open_run_dir(cfg, args);
    MetricsWriter writer((dir / "metrics.jsonl").string(), (dir / "metrics.csv").string(),
                         cfg.timestamps);
    auto res = train_discretizer(cfg, train, test, &writer);
    save_checkpoint((dir / "discretizer.ckpt").string(), discretizer_state(res.model));
    print_record(res.history.back());
    std::cout << "saved " << (dir / "discretizer.ckpt").string() << "\n";
    return 0;
}

int cmd_train_classifier(const CommonArgs& args) {
    auto cfg = build_config(args);
    auto [train, test] = load_datasets(cfg);
    DiscretizerModel<float> disc;
    DiscretizerModel<float>* disc_ptr = nullptr;
    if (cfg.mode == "dat" || cfg.mode == "random_word" || !cfg.discretizer_ckpt.empty()) {
        disc = load_discretizer(cfg.discretizer_ckpt);
        disc_ptr = &disc;
    }
    auto dir = open_run_dir(cfg, args);
    MetricsWriter writer((dir / "metrics.jsonl").string(), (dir / "metrics.csv").string(),
                         cfg.timestamps);
    auto res = train_classifier(cfg, train, test, disc_ptr, &writer);
    save_checkpoint((dir / "classifier.ckpt").string(), classifier_state(res.model));
    print_record(res.history.back());
    std::cout << "saved " << (dir / "classifier.ckpt").string() << "\n";
    return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& cls_path,
                 const std::string& out_path) {
    auto cfg = build_config(args);
    auto [train, test] = load_datasets(cfg);
    (void)train;
    auto model = load_classifier(cls_path);

    DiscretizerModel<float> disc;
    EvalOptions opts;
    opts.seed = cfg.seed;
    opts.corruptions = cfg.corruptions;
    for (double e : cfg.fgsm_eps) opts.fgsm_eps.push_back(float(e));
    if (cfg.with_discretizer) {
        disc = load_discretizer(cfg.discretizer_ckpt);
        opts.with_discretizer = true;
        opts.discretizer = &disc;
    }
    if (!cfg.baseline_metrics.empty()) {
        opts.baseline_errors = load_baseline(cfg.baseline_metrics);
        opts.want_rce = true;
    }
    auto rec = evaluate(model, test, opts);
    rec.run_name = cfg.run_name;
    rec.config_hash = config_hash(cfg);
    print_record(rec);
    if (!out_path.empty()) {
        MetricsWriter writer(out_path, out_path + ".csv", cfg.timestamps);
        writer.write(rec);
    }
    return 0;
}

int cmd_attack(const CommonArgs& args, const std::string& cls_path, double eps, int count) {
    auto cfg = build_config(args);
    auto [train, test] = load_datasets(cfg);
    (void)train;
    auto model = load_classifier(cls_path);
    const int n = std::min(count, test.n);
    std::vector<int> order(size_t(test.n), 0);
    std::iota(order.begin(), order.end(), 0);
    auto x = dataset_batch<float>(test, order, 0, n);
    auto y = batch_labels(test, order, 0, n);
    auto adv = fgsm_attack(model, x, y, float(eps));

    MetricsRecord rec;
    rec.run_name = cfg.run_name;
    rec.config_hash = config_hash(cfg);
    auto acc = [&](const Tensor<float>& in) {
        auto logits = classifier_forward<float>(nullptr, model, in, BnMode::Eval);
        int correct = 0;
        for (int i = 0; i < n; ++i) {
            const float* row = logits->value.data() + size_t(i) * test.num_classes;
            int best = 0;
            for (int k = 1; k < test.num_classes; ++k)
                if (row[k] > row[best]) best = k;
            if (best == y[size_t(i)]) ++correct;
        }
        return double(correct) / n;
    };
    rec.values["clean_acc"] = acc(x);
    rec.values["adv_acc"] = acc(adv);
    const long img = test.image_size();
    double clean_colors = 0, adv_colors = 0;
    for (int i = 0; i < n; ++i) {
        auto one = make_tensor<float>({test.c, test.h, test.w});
        std::copy_n(x->value.data() + size_t(i) * img, img, one->value.data());
        clean_colors += double(color_count(one));
        std::copy_n(adv->value.data() + size_t(i) * img, img, one->value.data());
        adv_colors += double(color_count(one));
    }
    rec.values["clean_color_count"] = clean_colors / n;
    rec.values["adv_color_count"] = adv_colors / n;
    if (!cfg.discretizer_ckpt.empty()) {
        auto disc = load_discretizer(cfg.discretizer_ckpt);
        auto qc = discretize<float>(nullptr, disc, x);
        auto qa = discretize<float>(nullptr, disc, adv);
        long changed = 0;
        for (size_t i = 0; i < qc.indices.size(); ++i)
            if (qc.indices[i] != qa.indices[i]) ++changed;
        rec.values["modified_fraction"] = double(changed) / double(qc.indices.size());
    }
    print_record(rec);
    return 0;
}

int cmd_analyze(const CommonArgs& args, const std::string& cls_path, int count, int bins) {
    auto cfg = build_config(args);
    auto [train, test] = load_datasets(cfg);
    (void)train;
    auto model = load_classifier(cls_path);
    const int n = std::min(count, test.n);
    std::vector<int> order(size_t(test.n), 0);
    std::iota(order.begin(), order.end(), 0);
    auto x = dataset_batch<float>(test, order, 0, n);
    auto y = batch_labels(test, order, 0, n);

    MetricsRecord rec;
    rec.run_name = cfg.run_name;
    rec.config_hash = config_hash(cfg);

    // BN-statistic correlation between clean batches and pixel-space
    // adversarial batches, per-batch PCC histogrammed over `bins`
    std::vector<double> mean_pccs, var_pccs;
    const int chunk = 16;
    for (int start = 0; start + chunk <= n; start += chunk) {
        auto xb = make_tensor<float>({chunk, test.c, test.h, test.w});
        std::copy_n(x->value.data() + size_t(start) * test.image_size(),
                    size_t(chunk) * test.image_size(), xb->value.data());
        std::vector<int> yb(y.begin() + start, y.begin() + start + chunk);
        auto adv = pgd_attack(model, xb, yb, float(cfg.at_eps), cfg.at_steps,
                              float(cfg.at_eps) / std::max(1, cfg.at_steps));
        auto [pm, pv] = bn_statistic_pcc(model, xb, adv);
        mean_pccs.push_back(pm);
        var_pccs.push_back(pv);
    }
    if (!mean_pccs.empty()) {
        double m_sum = 0, v_sum = 0;
        for (size_t i = 0; i < mean_pccs.size(); ++i) {
            m_sum += mean_pccs[i];
            v_sum += var_pccs[i];
        }
        rec.values["bn_mean_pcc"] = m_sum / double(mean_pccs.size());
        rec.values["bn_var_pcc"] = v_sum / double(var_pccs.size());
        auto hist = pcc_histogram(mean_pccs, bins);
        for (size_t b = 0; b < hist.counts.size(); ++b)
            rec.values["bn_mean_pcc_bin" + std::to_string(b)] = hist.counts[b];
    }

    // frequency and color statistics of the first image, clean vs FGSM
    auto one = make_tensor<float>({test.c, test.h, test.w});
    std::copy_n(x->value.data(), test.image_size(), one->value.data());
    rec.values["clean_color_count"] = double(color_count(one));
    auto prof = radial_frequency_profile(one, 8);
    for (size_t b = 0; b < prof.size(); ++b)
        rec.values["radial_band" + std::to_string(b)] = prof[b];

    if (!cfg.discretizer_ckpt.empty()) {
        auto disc = load_discretizer(cfg.discretizer_ckpt);
        // alignment between the one-step DAT gradient and the full-backward one
        PerturbationSpec spec;
        spec.alpha = float(cfg.alpha);
        auto x_hat = discretize<float>(nullptr, disc, x).image;
        auto d_short = compute_perturbation(model, x_hat, y, spec);
        auto d_full = full_backward_perturbation(model, disc, x, y, float(cfg.alpha));
        rec.values["gradient_alignment"] = gradient_alignment(d_short, d_full);
    }
    print_record(rec);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"discrete adversarial training toolkit"};
    app.require_subcommand(1);

    CommonArgs gen_args, disc_args, cls_args, eval_args, attack_args, analyze_args;
    std::string gen_prefix = "data/synthetic";
    std::string eval_cls, eval_out, attack_cls, analyze_cls;
    double attack_eps = 4.0 / 255.0;
    int attack_count = 128, analyze_count = 128, analyze_bins = 20;

    auto* gen = app.add_subcommand("gen-data", "write the synthetic set as IDX files");
    add_common(gen, gen_args);
    gen->add_option("--out-prefix", gen_prefix, "output path prefix");

    auto* td = app.add_subcommand("train-discretizer", "fit the VQ discretizer");
    add_common(td, disc_args);

    auto* tc = app.add_subcommand("train-classifier",
                                  "train a classifier (standard|pixel_at|dat|random_word)");
    add_common(tc, cls_args);

    auto* ev = app.add_subcommand("evaluate", "clean, FGSM, and corruption evaluation");
    add_common(ev, eval_args);
    ev->add_option("--classifier", eval_cls, "classifier checkpoint")->required();
    ev->add_option("--out", eval_out, "append the record to this JSONL file");

    auto* at = app.add_subcommand("attack", "FGSM attack report with color statistics");
    add_common(at, attack_args);
    at->add_option("--classifier", attack_cls, "classifier checkpoint")->required();
    at->add_option("--eps", attack_eps, "l_inf budget");
    at->add_option("--count", attack_count, "number of test images");

    auto* an = app.add_subcommand("analyze", "BN statistics, frequency, and alignment analysis");
    add_common(an, analyze_args);
    an->add_option("--classifier", analyze_cls, "classifier checkpoint")->required();
    an->add_option("--count", analyze_count, "number of test images");
    an->add_option("--bins", analyze_bins, "PCC histogram bins");

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_gen_data(gen_args, gen_prefix);
        if (td->parsed()) return cmd_train_discretizer(disc_args);
        if (tc->parsed()) return cmd_train_classifier(cls_args);
        if (ev->parsed()) return cmd_evaluate(eval_args, eval_cls, eval_out);
        if (at->parsed()) return cmd_attack(attack_args, attack_cls, attack_eps, attack_count);
        if (an->parsed()) return cmd_analyze(analyze_args, analyze_cls, analyze_count, analyze_bins);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
