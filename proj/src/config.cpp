#include "dat/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "dat/rng.hpp"

namespace dat {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
}

std::vector<double> parse_list(const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(std::stod(item));
    }
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

void apply_config_kv(ExperimentConfig& c, const std::string& key, const std::string& value) {
    try {
        if (key == "run_name") c.run_name = value;
        else if (key == "seed") c.seed = std::stoull(value);
        else if (key == "dataset") c.dataset = value;
        else if (key == "idx_images") c.idx_images = value;
        else if (key == "idx_labels") c.idx_labels = value;
        else if (key == "idx_test_images") c.idx_test_images = value;
        else if (key == "idx_test_labels") c.idx_test_labels = value;
        else if (key == "train_size") c.train_size = std::stoi(value);
        else if (key == "test_size") c.test_size = std::stoi(value);
        else if (key == "num_classes") c.num_classes = std::stoi(value);
        else if (key == "disc_f") c.disc_f = std::stoi(value);
        else if (key == "disc_d") c.disc_d = std::stoi(value);
        else if (key == "disc_k") c.disc_k = std::stoi(value);
        else if (key == "disc_width") c.disc_width = std::stoi(value);
        else if (key == "commitment_weight") c.commitment_weight = std::stod(value);
        else if (key == "disc_epochs") c.disc_epochs = std::stoi(value);
        else if (key == "disc_batch") c.disc_batch = std::stoi(value);
        else if (key == "disc_lr") c.disc_lr = std::stod(value);
        else if (key == "mode") c.mode = value;
        else if (key == "cls_width") c.cls_width = std::stoi(value);
        else if (key == "epochs") c.epochs = std::stoi(value);
        else if (key == "batch") c.batch = std::stoi(value);
        else if (key == "lr") c.lr = std::stod(value);
        else if (key == "momentum") c.momentum = std::stod(value);
        else if (key == "weight_decay") c.weight_decay = std::stod(value);
        else if (key == "lr_decay") c.lr_decay = std::stod(value);
        else if (key == "lr_decay_every") c.lr_decay_every = std::stoi(value);
        else if (key == "alpha") c.alpha = std::stod(value);
        else if (key == "sign_grad") c.sign_grad = parse_bool(value, key);
        else if (key == "bound_eps") c.bound_eps = std::stod(value);
        else if (key == "at_eps") c.at_eps = std::stod(value);
        else if (key == "at_steps") c.at_steps = std::stoi(value);
        else if (key == "at_step_size") c.at_step_size = std::stod(value);
        else if (key == "random_fraction") c.random_fraction = std::stod(value);
        else if (key == "discretizer_ckpt") c.discretizer_ckpt = value;
        else if (key == "with_discretizer") c.with_discretizer = parse_bool(value, key);
        else if (key == "fgsm_eps") c.fgsm_eps = parse_list(value);
        else if (key == "corruptions") c.corruptions = parse_bool(value, key);
        else if (key == "baseline_metrics") c.baseline_metrics = value;
        else if (key == "timestamps") c.timestamps = parse_bool(value, key);
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    } catch (const std::exception& e) {
        if (std::string(e.what()).rfind("config:", 0) == 0) throw;
        throw std::invalid_argument("config: bad value for " + key + ": " + value);
    }
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key=value, got '" + line + "'");
        apply_config_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

std::string canonical_config(const ExperimentConfig& c) {
    std::map<std::string, std::string> kv;
    kv["run_name"] = c.run_name;
    kv["seed"] = std::to_string(c.seed);
    kv["dataset"] = c.dataset;
    kv["idx_images"] = c.idx_images;
    kv["idx_labels"] = c.idx_labels;
    kv["idx_test_images"] = c.idx_test_images;
    kv["idx_test_labels"] = c.idx_test_labels;
    kv["train_size"] = std::to_string(c.train_size);
    kv["test_size"] = std::to_string(c.test_size);
    kv["num_classes"] = std::to_string(c.num_classes);
    kv["disc_f"] = std::to_string(c.disc_f);
    kv["disc_d"] = std::to_string(c.disc_d);
    kv["disc_k"] = std::to_string(c.disc_k);
    kv["disc_width"] = std::to_string(c.disc_width);
    kv["commitment_weight"] = fmt(c.commitment_weight);
    kv["disc_epochs"] = std::to_string(c.disc_epochs);
    kv["disc_batch"] = std::to_string(c.disc_batch);
    kv["disc_lr"] = fmt(c.disc_lr);
    kv["mode"] = c.mode;
    kv["cls_width"] = std::to_string(c.cls_width);
    kv["epochs"] = std::to_string(c.epochs);
    kv["batch"] = std::to_string(c.batch);
    kv["lr"] = fmt(c.lr);
    kv["momentum"] = fmt(c.momentum);
    kv["weight_decay"] = fmt(c.weight_decay);
    kv["lr_decay"] = fmt(c.lr_decay);
    kv["lr_decay_every"] = std::to_string(c.lr_decay_every);
    kv["alpha"] = fmt(c.alpha);
    kv["sign_grad"] = c.sign_grad ? "true" : "false";
    kv["bound_eps"] = fmt(c.bound_eps);
    kv["at_eps"] = fmt(c.at_eps);
    kv["at_steps"] = std::to_string(c.at_steps);
    kv["at_step_size"] = fmt(c.at_step_size);
    kv["random_fraction"] = fmt(c.random_fraction);
    kv["discretizer_ckpt"] = c.discretizer_ckpt;
    kv["with_discretizer"] = c.with_discretizer ? "true" : "false";
    std::string eps;
    for (size_t i = 0; i < c.fgsm_eps.size(); ++i) eps += (i ? "," : "") + fmt(c.fgsm_eps[i]);
    kv["fgsm_eps"] = eps;
    kv["corruptions"] = c.corruptions ? "true" : "false";
    kv["baseline_metrics"] = c.baseline_metrics;
    kv["timestamps"] = c.timestamps ? "true" : "false";

    std::string out;
    for (auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string canon = canonical_config(cfg);
    const uint64_t h = fnv1a64(canon.data(), canon.size());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
    return std::string(buf);
}

}  // namespace dat
