#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dat {

struct MetricsRecord {
    std::string run_name;
    std::string config_hash;
    int epoch = 0;
    std::map<std::string, double> values;
    int64_t timestamp_ms = 0;  // 0 unless wall-clock stamping is enabled
};

std::string metrics_to_json(const MetricsRecord& r);
MetricsRecord metrics_from_json(const std::string& line);

// Line-buffered JSONL + CSV writer; a run directory owns one of these.
class MetricsWriter {
  public:
    MetricsWriter(const std::string& jsonl_path, const std::string& csv_path,
                  bool timestamps = false);
    ~MetricsWriter();
    void write(const MetricsRecord& r);

  private:
    struct Impl;
    Impl* impl_;
    bool timestamps_;
};

std::vector<MetricsRecord> read_metrics_jsonl(const std::string& path);

}  // namespace dat
