#include "dat/metrics.hpp"

#include <chrono>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace dat {

using nlohmann::json;

std::string metrics_to_json(const MetricsRecord& r) {
    json j;
    j["run"] = r.run_name;
    j["config"] = r.config_hash;
    j["epoch"] = r.epoch;
    j["metrics"] = r.values;  // std::map keeps keys sorted
    j["ts_ms"] = r.timestamp_ms;
    return j.dump();
}

MetricsRecord metrics_from_json(const std::string& line) {
    json j = json::parse(line);
    MetricsRecord r;
    r.run_name = j.at("run").get<std::string>();
    r.config_hash = j.at("config").get<std::string>();
    r.epoch = j.at("epoch").get<int>();
    r.values = j.at("metrics").get<std::map<std::string, double>>();
    r.timestamp_ms = j.value("ts_ms", int64_t(0));
    return r;
}

struct MetricsWriter::Impl {
    std::ofstream jsonl, csv;
};

MetricsWriter::MetricsWriter(const std::string& jsonl_path, const std::string& csv_path,
                             bool timestamps)
    : impl_(new Impl), timestamps_(timestamps) {
    impl_->jsonl.open(jsonl_path, std::ios::app);
    impl_->csv.open(csv_path, std::ios::app);
    if (!impl_->jsonl || !impl_->csv)
        throw std::runtime_error("metrics: cannot open " + jsonl_path + " / " + csv_path);
    if (impl_->csv.tellp() == 0) impl_->csv << "epoch,metric,value\n";
}

MetricsWriter::~MetricsWriter() { delete impl_; }

void MetricsWriter::write(const MetricsRecord& r) {
    MetricsRecord stamped = r;
    if (timestamps_)
        stamped.timestamp_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::system_clock::now().time_since_epoch())
                                   .count();
    impl_->jsonl << metrics_to_json(stamped) << "\n";
    impl_->jsonl.flush();
    char buf[64];
    for (auto& [k, v] : stamped.values) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        impl_->csv << stamped.epoch << ',' << k << ',' << buf << "\n";
    }
    impl_->csv.flush();
}

std::vector<MetricsRecord> read_metrics_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("metrics: cannot open " + path);
    std::vector<MetricsRecord> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(metrics_from_json(line));
        } catch (const json::exception&) {
            break;  // tolerate a partial trailing line from a crashed run
        }
    }
    return out;
}

}  // namespace dat
