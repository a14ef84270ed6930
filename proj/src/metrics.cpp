#include "moma/metrics.hpp"

#include <iomanip>
#include <sstream>

#include "moma/errors.hpp"

namespace moma::io {

MetricsLog::MetricsLog(const std::string& path, std::string run_id,
                       std::vector<std::string> metric_names)
    : run_id_(std::move(run_id)), metric_names_(std::move(metric_names)) {
    out_.open(path, std::ios::trunc);
    if (!out_) throw IoError("cannot open metrics log: " + path);
    out_ << "run_id,step,wall_time_s,lr";
    for (const auto& n : metric_names_) out_ << "," << n;
    out_ << "\n";
    out_.flush();
}

void MetricsLog::append(int64_t step, double wall_time_s, double lr,
                        std::span<const double> metrics) {
    if (metrics.size() != metric_names_.size())
        throw ValueError("metrics row has " + std::to_string(metrics.size()) + " values, log has " +
                         std::to_string(metric_names_.size()) + " columns");
    if (step <= last_step_)
        throw ValueError("metrics step " + std::to_string(step) +
                         " not greater than previous step " + std::to_string(last_step_));
    last_step_ = step;
    out_ << run_id_ << "," << step << "," << std::setprecision(10) << wall_time_s << ","
         << std::setprecision(12) << lr;
    for (double v : metrics) out_ << "," << std::setprecision(12) << v;
    out_ << "\n";
    out_.flush();
}

MetricsLog::Contents MetricsLog::read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics log: " + path);
    Contents contents;
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty metrics log: " + path);

    std::vector<std::string> cols;
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) cols.push_back(cell);
    if (cols.size() < 4 || cols[0] != "run_id" || cols[1] != "step")
        throw IoError("bad metrics header in " + path);
    contents.metric_names.assign(cols.begin() + 4, cols.end());

    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        Row row;
        std::getline(ls, row.run_id, ',');
        std::getline(ls, cell, ',');
        row.step = std::stoll(cell);
        std::getline(ls, cell, ',');
        row.wall_time_s = std::stod(cell);
        std::getline(ls, cell, ',');
        row.lr = std::stod(cell);
        while (std::getline(ls, cell, ',')) row.metrics.push_back(std::stod(cell));
        contents.rows.push_back(std::move(row));
    }
    return contents;
}

}  // namespace moma::io
