#pragma once

#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace moma::io {

// Append-only delimited metrics log with one header line. Steps must be
// strictly increasing within a run.
class MetricsLog {
public:
    MetricsLog(const std::string& path, std::string run_id,
               std::vector<std::string> metric_names);

    void append(int64_t step, double wall_time_s, double lr, std::span<const double> metrics);

    const std::vector<std::string>& metric_names() const { return metric_names_; }

    struct Row {
        std::string run_id;
        int64_t step;
        double wall_time_s;
        double lr;
        std::vector<double> metrics;
    };

    struct Contents {
        std::vector<std::string> metric_names;
        std::vector<Row> rows;
    };

    static Contents read(const std::string& path);

private:
    std::ofstream out_;
    std::string run_id_;
    std::vector<std::string> metric_names_;
    int64_t last_step_ = -1;
};

}  // namespace moma::io
