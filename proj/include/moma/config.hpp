#pragma once

#include <string>
#include <vector>

#include "moma/objectives.hpp"
#include "moma/trainer.hpp"

namespace moma::config {

// Sectioned key=value text config. Typed getters record defaults for absent
// keys and mark keys consumed; serialize() then yields the fully resolved
// config, and require_all_consumed() rejects unknown keys.
class ConfigMap {
public:
    static ConfigMap parse_file(const std::string& path);
    static ConfigMap parse_string(const std::string& text);

    // "section.key=value"; the section is everything before the last dot.
    void apply_override(const std::string& dotted_assignment);

    std::string get_str(const std::string& section, const std::string& key,
                        const std::string& fallback);
    int64_t get_int(const std::string& section, const std::string& key, int64_t fallback);
    double get_real(const std::string& section, const std::string& key, double fallback);
    bool get_bool(const std::string& section, const std::string& key, bool fallback);
    std::vector<double> get_reals(const std::string& section, const std::string& key,
                                  const std::string& fallback_csv);
    std::vector<std::string> get_strs(const std::string& section, const std::string& key,
                                      const std::string& fallback_csv);

    bool has(const std::string& section, const std::string& key) const;
    void set(const std::string& section, const std::string& key, const std::string& value);

    void require_all_consumed() const;
    std::string serialize() const;

private:
    struct Entry {
        std::string key;
        std::string value;
        bool consumed = false;
    };
    struct Section {
        std::string name;
        std::vector<Entry> entries;
    };
    std::vector<Section> sections_;

    Entry* find(const std::string& section, const std::string& key);
    const Entry* find(const std::string& section, const std::string& key) const;
    std::string& fetch(const std::string& section, const std::string& key,
                       const std::string& fallback);
};

// Assembles a run config from the parsed file; consumes the keys it reads.
train::TrainRunConfig build_run_config(ConfigMap& map, train::RunKind kind);

struct AblateCell {
    objectives::DistillMode mode;
    double mask_ratio;
    std::string student_preset;
};

struct AblateConfig {
    std::vector<AblateCell> cells;
    int64_t distill_epochs = 10;
    int64_t probe_epochs = 20;
    double probe_base_lr = 1e-3;
    int64_t parallel = 1;
    train::TrainRunConfig base;  // shared data/optim/teacher settings
};

AblateConfig build_ablate_config(ConfigMap& map);

}  // namespace moma::config
