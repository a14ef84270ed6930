// moma: desk-scale self-supervised distillation from MoCo/MAE teachers.
//
// Subcommands: pretrain-moco, pretrain-mae, distill, finetune, probe, eval,
// ablate, grad-check. Every run writes a resolved-config snapshot, a metrics
// log, its checkpoints and a DONE marker into its output directory.
// Exit codes: 0 success, 2 config error, 3 runtime failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "moma/checkpoint.hpp"
#include "moma/config.hpp"
#include "moma/trainer.hpp"
#include "moma/verify.hpp"

namespace fs = std::filesystem;
using namespace moma;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    int64_t seed = -1;
};

std::string resolve_out_dir(const CommonOpts& opts, const train::TrainRunConfig& cfg,
                            const std::string& name) {
    if (!opts.out_dir.empty()) return opts.out_dir;
    if (!cfg.out_dir.empty()) return cfg.out_dir;
    if (const char* root = std::getenv("MOMA_OUTPUT_ROOT"))
        return (fs::path(root) / name).string();
    return (fs::path("runs") / name).string();
}

config::ConfigMap load_config(const CommonOpts& opts) {
    if (opts.config_path.empty()) throw ConfigError("missing --config");
    config::ConfigMap map = config::ConfigMap::parse_file(opts.config_path);
    for (const auto& o : opts.overrides) map.apply_override(o);
    if (opts.seed >= 0) map.set("run", "seed", std::to_string(opts.seed));
    return map;
}

void write_file(const fs::path& path, const std::string& contents) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << contents;
}

int run_training(train::RunKind kind, const CommonOpts& opts) {
    train::TrainRunConfig cfg;
    std::string snapshot;
    try {
        config::ConfigMap map = load_config(opts);
        cfg = config::build_run_config(map, kind);
        if (cfg.run_id.empty())
            cfg.run_id = train::run_kind_name(kind) + "-seed" + std::to_string(cfg.seed);
        cfg.out_dir = resolve_out_dir(opts, cfg, cfg.run_id);
        map.set("run", "out_dir", cfg.out_dir);
        map.set("run", "name", cfg.run_id);
        map.require_all_consumed();
        snapshot = map.serialize();
    } catch (const Error& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    }

    try {
        fs::create_directories(cfg.out_dir);
        write_file(fs::path(cfg.out_dir) / "config.resolved.ini", snapshot);
        train::RunResult result = train::run(cfg);
        std::ostringstream done;
        done << "status=ok\nkind=" << train::run_kind_name(kind) << "\nsteps=" << result.steps
             << "\n";
        if (!result.checkpoint.empty()) done << "checkpoint=" << result.checkpoint << "\n";
        if (result.top1 >= 0.0) done << "top1=" << result.top1 << "\n";
        write_file(fs::path(cfg.out_dir) / "DONE", done.str());

        std::cout << "ok kind=" << train::run_kind_name(kind) << " out=" << cfg.out_dir
                  << " steps=" << result.steps << " final_loss=" << result.final_loss;
        if (result.top1 >= 0.0) std::cout << " top1=" << result.top1;
        std::cout << "\n";
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: runtime: " << e.what() << "\n";
        return 3;
    }
}

int run_ablate(const CommonOpts& opts) {
    config::AblateConfig acfg;
    std::string snapshot;
    std::string out_root;
    try {
        config::ConfigMap map = load_config(opts);
        acfg = config::build_ablate_config(map);
        if (acfg.base.run_id.empty())
            acfg.base.run_id = "ablate-seed" + std::to_string(acfg.base.seed);
        out_root = resolve_out_dir(opts, acfg.base, acfg.base.run_id);
        map.set("run", "out_dir", out_root);
        map.set("run", "name", acfg.base.run_id);
        map.require_all_consumed();
        snapshot = map.serialize();
    } catch (const Error& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    }

    try {
        fs::create_directories(out_root);
        write_file(fs::path(out_root) / "config.resolved.ini", snapshot);

        struct Row {
            config::AblateCell cell;
            double probe_top1 = -1.0;
            int64_t steps = 0;
            double wall_time_s = 0.0;
            std::string status = "ok";
        };
        std::vector<Row> rows(acfg.cells.size());

        auto run_cell = [&](size_t i) {
            Row& row = rows[i];
            row.cell = acfg.cells[i];
            const auto& cell = acfg.cells[i];
            std::ostringstream tag;
            tag << objectives::mode_name(cell.mode) << "_r" << cell.mask_ratio << "_"
                << cell.student_preset;
            const fs::path cell_dir = fs::path(out_root) / tag.str();
            try {
                train::TrainRunConfig dcfg = acfg.base;
                dcfg.kind = train::RunKind::Distill;
                dcfg.distill.mode = cell.mode;
                dcfg.distill.mask_ratio = cell.mask_ratio;
                dcfg.model = model::ViTConfig::preset(cell.student_preset, acfg.base.model.image_size,
                                                      acfg.base.model.patch_size);
                dcfg.model.use_class_token = acfg.base.model.use_class_token;
                dcfg.optim.epochs = acfg.distill_epochs;
                dcfg.out_dir = (cell_dir / "distill").string();
                dcfg.run_id = tag.str() + "-distill";
                const auto distill = train::run_distill(dcfg);
                row.steps = distill.steps;

                train::TrainRunConfig pcfg = acfg.base;
                pcfg.kind = train::RunKind::Probe;
                pcfg.model = dcfg.model;
                pcfg.init_checkpoint = distill.checkpoint;
                pcfg.optim.epochs = acfg.probe_epochs;
                pcfg.optim.base_lr = acfg.probe_base_lr;
                pcfg.optim.lr_reference_batch = pcfg.optim.batch_size;
                pcfg.out_dir = (cell_dir / "probe").string();
                pcfg.run_id = tag.str() + "-probe";
                const auto probe = train::run_linear_probe(pcfg);
                row.probe_top1 = probe.top1;
                row.wall_time_s = distill.wall_time_s + probe.wall_time_s;
            } catch (const std::exception& e) {
                row.status = "failed";
                std::cerr << "cell " << tag.str() << " failed: " << e.what() << "\n";
            }
        };

        if (acfg.parallel <= 1) {
            for (size_t i = 0; i < acfg.cells.size(); ++i) run_cell(i);
        } else {
            std::vector<std::thread> pool;
            std::mutex next_mutex;
            size_t next = 0;
            for (int64_t w = 0; w < std::min<int64_t>(acfg.parallel,
                                                      static_cast<int64_t>(acfg.cells.size()));
                 ++w)
                pool.emplace_back([&] {
                    for (;;) {
                        size_t i;
                        {
                            std::lock_guard<std::mutex> lock(next_mutex);
                            if (next >= acfg.cells.size()) return;
                            i = next++;
                        }
                        run_cell(i);
                    }
                });
            for (auto& t : pool) t.join();
        }

        std::ostringstream summary;
        summary << "mode,mask_ratio,teacher_moco,teacher_mae,student,probe_top1,distill_steps,"
                   "wall_time_s,status\n";
        for (const auto& row : rows) {
            summary << objectives::mode_name(row.cell.mode) << "," << row.cell.mask_ratio << ","
                    << acfg.base.teacher_moco_checkpoint << ","
                    << acfg.base.teacher_mae_checkpoint << "," << row.cell.student_preset << ","
                    << row.probe_top1 << "," << row.steps << "," << row.wall_time_s << ","
                    << row.status << "\n";
        }
        write_file(fs::path(out_root) / "summary.csv", summary.str());
        write_file(fs::path(out_root) / "DONE", "status=ok\nkind=ablate\n");
        std::cout << "ok kind=ablate out=" << out_root << " cells=" << rows.size() << "\n";
        std::cout << summary.str();
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: runtime: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"moma: self-supervised distillation from MoCo and MAE teachers"};
    app.require_subcommand(1);

    std::map<std::string, train::RunKind> kinds{
        {"pretrain-moco", train::RunKind::PretrainMoco},
        {"pretrain-mae", train::RunKind::PretrainMae},
        {"distill", train::RunKind::Distill},
        {"finetune", train::RunKind::Finetune},
        {"probe", train::RunKind::Probe},
        {"eval", train::RunKind::Eval},
    };
    std::map<std::string, std::string> blurbs{
        {"pretrain-moco", "contrastive pre-training of a MoCo teacher"},
        {"pretrain-mae", "masked-reconstruction pre-training of an MAE teacher"},
        {"distill", "align a masked student with frozen teacher(s)"},
        {"finetune", "supervised end-to-end fine-tuning from a checkpoint"},
        {"probe", "linear probe on a frozen encoder"},
        {"eval", "top-1 evaluation of a classifier checkpoint"},
    };

    std::map<std::string, CommonOpts> opts;
    auto add_common = [&](CLI::App* sub, CommonOpts& o) {
        sub->add_option("-c,--config", o.config_path, "run config file")->required();
        sub->add_option("-s,--set", o.overrides, "override, section.key=value (repeatable)");
        sub->add_option("-o,--out", o.out_dir, "output directory");
        sub->add_option("--seed", o.seed, "seed override");
    };

    for (const auto& [name, kind] : kinds) add_common(app.add_subcommand(name, blurbs[name]), opts[name]);

    CommonOpts ablate_opts;
    add_common(app.add_subcommand("ablate", "distill+probe grid over modes, ratios, sizes"),
               ablate_opts);

    int grad_seeds = 20;
    auto* grad_cmd = app.add_subcommand("grad-check", "finite-difference gradient verification");
    grad_cmd->add_option("--seeds", grad_seeds, "random seeds per check");

    CLI11_PARSE(app, argc, argv);

    try {
        for (const auto& [name, kind] : kinds)
            if (app.got_subcommand(name)) return run_training(kind, opts[name]);
        if (app.got_subcommand("ablate")) return run_ablate(ablate_opts);
        if (app.got_subcommand("grad-check")) {
            auto suite = verify::run_gradient_suite(grad_seeds, &std::cout);
            std::cout << (suite.pass ? "ok" : "FAILED") << " checks=" << suite.checks.size()
                      << " seeds=" << grad_seeds << " seconds=" << suite.seconds << "\n";
            return suite.pass ? 0 : 3;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: runtime: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
