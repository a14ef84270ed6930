#include "moma/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace moma::config {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        cell = trim(cell);
        if (!cell.empty()) out.push_back(cell);
    }
    return out;
}

}  // namespace

ConfigMap ConfigMap::parse_string(const std::string& text) {
    ConfigMap map;
    std::stringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto comment = line.find_first_of("#;");
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(lineno) + ": unterminated section");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value, got '" +
                              line + "'");
        if (section.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": key before any [section]");
        map.set(section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return map;
}

ConfigMap ConfigMap::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str());
}

void ConfigMap::apply_override(const std::string& dotted_assignment) {
    const auto eq = dotted_assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must be section.key=value, got '" + dotted_assignment + "'");
    const std::string path = trim(dotted_assignment.substr(0, eq));
    const std::string value = trim(dotted_assignment.substr(eq + 1));
    const auto dot = path.rfind('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == path.size())
        throw ConfigError("override key must be section.key, got '" + path + "'");
    set(path.substr(0, dot), path.substr(dot + 1), value);
}

ConfigMap::Entry* ConfigMap::find(const std::string& section, const std::string& key) {
    for (auto& s : sections_)
        if (s.name == section)
            for (auto& e : s.entries)
                if (e.key == key) return &e;
    return nullptr;
}

const ConfigMap::Entry* ConfigMap::find(const std::string& section, const std::string& key) const {
    for (const auto& s : sections_)
        if (s.name == section)
            for (const auto& e : s.entries)
                if (e.key == key) return &e;
    return nullptr;
}

bool ConfigMap::has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
}

void ConfigMap::set(const std::string& section, const std::string& key, const std::string& value) {
    for (auto& s : sections_)
        if (s.name == section) {
            for (auto& e : s.entries)
                if (e.key == key) {
                    e.value = value;
                    return;
                }
            s.entries.push_back({key, value, false});
            return;
        }
    sections_.push_back({section, {{key, value, false}}});
}

std::string& ConfigMap::fetch(const std::string& section, const std::string& key,
                              const std::string& fallback) {
    Entry* e = find(section, key);
    if (!e) {
        set(section, key, fallback);
        e = find(section, key);
    }
    e->consumed = true;
    return e->value;
}

std::string ConfigMap::get_str(const std::string& section, const std::string& key,
                               const std::string& fallback) {
    return fetch(section, key, fallback);
}

int64_t ConfigMap::get_int(const std::string& section, const std::string& key, int64_t fallback) {
    const std::string& v = fetch(section, key, std::to_string(fallback));
    try {
        size_t pos = 0;
        const int64_t out = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(section + "." + key + ": expected integer, got '" + v + "'");
    }
}

double ConfigMap::get_real(const std::string& section, const std::string& key, double fallback) {
    std::ostringstream def;
    def << fallback;
    const std::string& v = fetch(section, key, def.str());
    try {
        size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(section + "." + key + ": expected number, got '" + v + "'");
    }
}

bool ConfigMap::get_bool(const std::string& section, const std::string& key, bool fallback) {
    const std::string& v = fetch(section, key, fallback ? "true" : "false");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(section + "." + key + ": expected boolean, got '" + v + "'");
}

std::vector<double> ConfigMap::get_reals(const std::string& section, const std::string& key,
                                         const std::string& fallback_csv) {
    const std::string& v = fetch(section, key, fallback_csv);
    std::vector<double> out;
    for (const auto& cell : split_csv(v)) {
        try {
            out.push_back(std::stod(cell));
        } catch (const std::exception&) {
            throw ConfigError(section + "." + key + ": expected numbers, got '" + v + "'");
        }
    }
    return out;
}

std::vector<std::string> ConfigMap::get_strs(const std::string& section, const std::string& key,
                                             const std::string& fallback_csv) {
    return split_csv(fetch(section, key, fallback_csv));
}

void ConfigMap::require_all_consumed() const {
    for (const auto& s : sections_)
        for (const auto& e : s.entries)
            if (!e.consumed)
                throw ConfigError("unknown config key: " + s.name + "." + e.key);
}

std::string ConfigMap::serialize() const {
    std::ostringstream out;
    for (const auto& s : sections_) {
        out << "[" << s.name << "]\n";
        for (const auto& e : s.entries) out << e.key << " = " << e.value << "\n";
        out << "\n";
    }
    return out.str();
}

namespace {

model::ViTConfig model_from(ConfigMap& map, const std::string& section, int64_t default_image) {
    const std::string preset = map.get_str(section, "preset", "micro");
    const int64_t image_size = map.get_int(section, "image_size", default_image);
    const int64_t patch_size = map.get_int(section, "patch_size", 4);
    model::ViTConfig cfg;
    if (preset == "custom") {
        cfg.image_size = image_size;
        cfg.patch_size = patch_size;
        cfg.depth = map.get_int(section, "depth", 4);
        cfg.heads = map.get_int(section, "heads", 4);
        cfg.dim = map.get_int(section, "dim", 64);
        cfg.mlp_ratio = map.get_real(section, "mlp_ratio", 4.0);
        cfg.decoder_depth = map.get_int(section, "decoder_depth", 1);
        cfg.decoder_dim = map.get_int(section, "decoder_dim", 32);
    } else {
        try {
            cfg = model::ViTConfig::preset(preset, image_size, patch_size);
        } catch (const ValueError& e) {
            throw ConfigError(section + ".preset: " + e.what());
        }
    }
    cfg.use_class_token = map.get_bool(section, "use_class_token", false);
    try {
        cfg.validate();
    } catch (const ValueError& e) {
        throw ConfigError(section + ": " + e.what());
    }
    return cfg;
}

data::AugPolicy aug_from(ConfigMap& map, const std::string& section, data::AugPolicy base) {
    const std::string kind = map.get_str(section, "kind", base.kind_name());
    if (kind == "none")
        base.kind = data::AugPolicy::Kind::None;
    else if (kind == "standard")
        base.kind = data::AugPolicy::Kind::Standard;
    else if (kind == "strong")
        base.kind = data::AugPolicy::Kind::Strong;
    else
        throw ConfigError(section + ".kind: unknown policy '" + kind + "'");
    base.crop_scale_min = map.get_real(section, "crop_scale_min", base.crop_scale_min);
    base.crop_scale_max = map.get_real(section, "crop_scale_max", base.crop_scale_max);
    base.flip_prob = map.get_real(section, "flip_prob", base.flip_prob);
    base.jitter_prob = map.get_real(section, "jitter_prob", base.jitter_prob);
    base.jitter_strength = map.get_real(section, "jitter_strength", base.jitter_strength);
    base.grayscale_prob = map.get_real(section, "grayscale_prob", base.grayscale_prob);
    base.blur_prob = map.get_real(section, "blur_prob", base.blur_prob);
    base.blur_sigma_min = map.get_real(section, "blur_sigma_min", base.blur_sigma_min);
    base.blur_sigma_max = map.get_real(section, "blur_sigma_max", base.blur_sigma_max);
    base.solarize_prob = map.get_real(section, "solarize_prob", base.solarize_prob);
    base.solarize_threshold = map.get_real(section, "solarize_threshold", base.solarize_threshold);
    try {
        base.validate();
    } catch (const ValueError& e) {
        throw ConfigError(section + ": " + e.what());
    }
    return base;
}

}  // namespace

train::TrainRunConfig build_run_config(ConfigMap& map, train::RunKind kind) {
    train::TrainRunConfig cfg;
    cfg.kind = kind;

    const std::string kind_in_file = map.get_str("run", "kind", train::run_kind_name(kind));
    if (kind_in_file != train::run_kind_name(kind))
        throw ConfigError("run.kind is '" + kind_in_file + "' but the subcommand is '" +
                          train::run_kind_name(kind) + "'");
    cfg.seed = static_cast<uint64_t>(map.get_int("run", "seed", 0));
    cfg.run_id = map.get_str("run", "name", "");
    cfg.out_dir = map.get_str("run", "out_dir", "");

    cfg.data.dataset = map.get_str("data", "dataset", "synthetic");
    if (cfg.data.dataset != "synthetic" && cfg.data.dataset != "cifar10")
        throw ConfigError("data.dataset must be synthetic or cifar10, got " + cfg.data.dataset);
    cfg.data.path = map.get_str("data", "path", "data/cifar-10-batches-bin");
    cfg.data.train_limit = map.get_int("data", "train_limit", 0);
    cfg.data.eval_limit = map.get_int("data", "eval_limit", 0);
    cfg.data.synthetic.n = map.get_int("data", "synthetic_n", 512);
    cfg.data.synthetic.classes = map.get_int("data", "synthetic_classes", 10);
    cfg.data.synthetic.seed = static_cast<uint64_t>(map.get_int("data", "synthetic_seed", 0));
    cfg.data.synthetic.image_size = map.get_int("data", "synthetic_image_size", 32);
    cfg.data.synthetic.noise_std = map.get_real("data", "synthetic_noise_std", 0.25);
    cfg.data.synthetic.color_scale = map.get_real("data", "synthetic_color_scale", 1.0);
    cfg.data.norm.mean = map.get_reals("data", "norm_mean", "0.4914,0.4822,0.4465");
    cfg.data.norm.std = map.get_reals("data", "norm_std", "0.2470,0.2435,0.2616");
    const int64_t image_size =
        cfg.data.dataset == "cifar10" ? 32 : cfg.data.synthetic.image_size;

    cfg.model = model_from(map, "model", image_size);

    if (kind == train::RunKind::Distill) {
        cfg.distill.mode = objectives::mode_from_name(map.get_str("distill", "mode", "multi"));
        cfg.distill.alpha = map.get_real("distill", "alpha", 0.5);
        cfg.distill.beta = map.get_real("distill", "beta", 0.5);
        cfg.distill.mask_ratio = map.get_real("distill", "mask_ratio", 0.9);
        cfg.distill.student_strong_aug = map.get_bool("distill", "student_strong_aug", true);
        cfg.distill.teacher_mask_ratio = map.get_real("distill", "teacher_mask_ratio", 0.0);
        cfg.distill.smooth_l1_beta = map.get_real("distill", "smooth_l1_beta", 1.0);
        const std::string pooling = map.get_str("distill", "pooling", "mean");
        if (pooling == "mean")
            cfg.distill.pooling = model::Pooling::MeanTokens;
        else if (pooling == "class")
            cfg.distill.pooling = model::Pooling::ClassToken;
        else
            throw ConfigError("distill.pooling must be mean or class, got " + pooling);
        cfg.distill.stop_patch_grad = map.get_bool("distill", "stop_patch_grad", false);
        cfg.distill.split_student_views = map.get_bool("distill", "split_student_views", false);
        cfg.init_checkpoint = map.get_str("distill", "student_init", "");
        cfg.teacher_moco_checkpoint = map.get_str("teacher", "moco_checkpoint", "");
        cfg.teacher_mae_checkpoint = map.get_str("teacher", "mae_checkpoint", "");
        try {
            cfg.distill.validate();
        } catch (const ValueError& e) {
            throw ConfigError(std::string(e.what()));
        }
    }
    if (kind == train::RunKind::Finetune || kind == train::RunKind::Probe ||
        kind == train::RunKind::Eval) {
        cfg.init_checkpoint = map.get_str("checkpoint", "init", "");
        if (kind == train::RunKind::Eval && cfg.init_checkpoint.empty())
            throw ConfigError("eval requires checkpoint.init");
    }

    cfg.optim.epochs = map.get_int("optim", "epochs", 20);
    cfg.optim.batch_size = map.get_int("optim", "batch_size", 128);
    const double default_lr = kind == train::RunKind::Finetune ? 1.5e-3 : 1.5e-4;
    cfg.optim.base_lr = map.get_real("optim", "base_lr", default_lr);
    cfg.optim.lr_reference_batch = map.get_int("optim", "lr_reference_batch", 4096);
    cfg.optim.min_lr = map.get_real("optim", "min_lr", 0.0);
    const int64_t default_warmup = kind == train::RunKind::Finetune ? 5 : 20;
    const int64_t epochs = cfg.optim.epochs;
    cfg.optim.warmup_epochs =
        map.get_int("optim", "warmup_epochs", std::min<int64_t>(default_warmup, epochs / 5));
    cfg.optim.adamw.beta1 = map.get_real("optim", "beta1", 0.9);
    const double default_beta2 = kind == train::RunKind::Finetune ? 0.999 : 0.95;
    cfg.optim.adamw.beta2 = map.get_real("optim", "beta2", default_beta2);
    cfg.optim.adamw.eps = map.get_real("optim", "eps", 1e-8);
    cfg.optim.adamw.weight_decay = map.get_real("optim", "weight_decay", 0.05);
    if (cfg.optim.epochs <= 0 || cfg.optim.batch_size <= 0)
        throw ConfigError("optim.epochs and optim.batch_size must be positive");
    if (cfg.optim.warmup_epochs < 0 || cfg.optim.warmup_epochs >= std::max<int64_t>(epochs, 1))
        cfg.optim.warmup_epochs = std::max<int64_t>(epochs / 5, 0);

    cfg.moco_momentum = map.get_real("moco", "momentum", 0.99);
    cfg.moco_temperature = map.get_real("moco", "temperature", 0.2);
    cfg.mae_mask_ratio = map.get_real("mae", "mask_ratio", 0.75);
    if (cfg.moco_temperature <= 0) throw ConfigError("moco.temperature must be > 0");
    if (cfg.moco_momentum < 0 || cfg.moco_momentum > 1)
        throw ConfigError("moco.momentum must be in [0, 1]");
    if (cfg.mae_mask_ratio < 0 || cfg.mae_mask_ratio >= 1)
        throw ConfigError("mae.mask_ratio must be in [0, 1)");

    cfg.standard_aug = aug_from(map, "aug.standard", data::AugPolicy::standard());
    cfg.strong_aug = aug_from(map, "aug.strong", data::AugPolicy::strong());

    cfg.checkpoint_cadence = map.get_int("checkpoint", "cadence", 0);
    cfg.log_every = map.get_int("log", "every", 10);
    cfg.grad_audit_every = map.get_int("log", "grad_audit_every", 50);

    return cfg;
}

AblateConfig build_ablate_config(ConfigMap& map) {
    AblateConfig cfg;
    cfg.base = build_run_config(map, train::RunKind::Distill);

    std::vector<objectives::DistillMode> modes;
    for (const auto& name : map.get_strs("ablate", "modes", "moco_to_mae"))
        modes.push_back(objectives::mode_from_name(name));
    const std::vector<double> ratios = map.get_reals("ablate", "mask_ratios", "0.5,0.75,0.9");
    const std::vector<std::string> students = map.get_strs("ablate", "students", "micro");
    if (modes.empty() || ratios.empty() || students.empty())
        throw ConfigError("ablate grid has an empty axis");
    for (const auto mode : modes)
        for (const double ratio : ratios)
            for (const auto& student : students)
                cfg.cells.push_back({mode, ratio, student});

    cfg.distill_epochs = map.get_int("ablate", "distill_epochs", 10);
    cfg.probe_epochs = map.get_int("ablate", "probe_epochs", 20);
    cfg.probe_base_lr = map.get_real("ablate", "probe_base_lr", 1e-3);
    cfg.parallel = map.get_int("ablate", "parallel", 1);
    if (cfg.parallel < 1) throw ConfigError("ablate.parallel must be >= 1");
    return cfg;
}

}  // namespace moma::config
