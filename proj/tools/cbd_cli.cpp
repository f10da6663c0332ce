// Experiment driver: dataset synthesis, single runs, ablation sweeps,
// multi-seed suites, and report aggregation.
//
// Exit codes: 0 success, 1 numerical abort during training, 2 usage or
// config error. Human-readable logging goes to stderr; machine-readable
// output goes to files and stdout only.

#include "cbd/dataset.hpp"
#include "cbd/errors.hpp"
#include "cbd/eval.hpp"
#include "cbd/model.hpp"
#include "cbd/run_config.hpp"
#include "cbd/train.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace cbd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNumericAbort = 1;
constexpr int kExitUsage = 2;

// Outputs are staged under a .partial suffix and renamed on completion, so
// a killed run never leaves a file that looks finished.
void atomic_write(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    const fs::path partial = path.string() + ".partial";
    {
        std::ofstream out(partial, std::ios::binary);
        if (!out) throw io_error("cannot open '" + partial.string() + "' for writing");
        out << content;
        if (!out) throw io_error("write failed for '" + partial.string() + "'");
    }
    fs::rename(partial, path);
}

std::string format_acc(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9f", v);
    return buf;
}

std::vector<std::string> split_csv_list(const std::string& raw) {
    std::vector<std::string> out;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::erase_if(item, [](unsigned char ch) { return std::isspace(ch); });
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

EvalReport make_report(const RunResult& result, const RunConfig& cfg, const ShotSplit& split) {
    EvalReport r;
    r.method = result.method;
    r.seed = cfg.seed;
    r.overall_acc = result.accuracy.overall;
    r.many_acc = result.accuracy.many;
    r.mid_acc = result.accuracy.mid;
    r.few_acc = result.accuracy.few;
    r.ncm_overall_acc = result.ncm;
    r.config_echo = cfg.canonical_json();
    r.thresholds = split;
    r.timestamp = current_timestamp_utc();
    return r;
}

RunResult execute(const RunConfig& cfg, const SynthesizedData& data, const ShotSplit& split,
                  bool parallel_teachers) {
    StagePlan plan = cfg.to_plan();
    plan.extractor_widths.front() = data.train.feature_dim;
    plan.parallel_teachers = parallel_teachers;
    return run_plan(plan, data.train, data.test, split);
}

void log_report(const EvalReport& r) {
    std::cerr << "[" << r.method << " seed=" << r.seed << "] overall=" << format_acc(r.overall_acc)
              << " many=" << format_acc(r.many_acc) << " mid=" << format_acc(r.mid_acc)
              << " few=" << format_acc(r.few_acc);
    if (r.ncm_overall_acc) std::cerr << " ncm=" << format_acc(*r.ncm_overall_acc);
    std::cerr << "\n";
}

void write_report_files(const EvalReport& r, const fs::path& json_path, const fs::path& csv_path) {
    atomic_write(json_path, report_json(r) + "\n");
    atomic_write(csv_path, report_csv_header() + "\n" + report_csv_row(r) + "\n");
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    LongTailProfile profile;
    std::string decay = "exponential";
    std::string out;
};

int cmd_synth(SynthArgs& args) {
    args.profile.decay = args.decay == "zipf" ? DecayKind::zipf : DecayKind::exponential;
    if (args.decay != "zipf" && args.decay != "exponential") {
        throw config_error("synth: --decay must be exponential or zipf");
    }
    args.profile.validate();
    SynthesizedData data = synthesize(args.profile);

    fs::create_directories(args.out);
    {
        const fs::path train_path = fs::path(args.out) / "train.csv";
        save_dataset(data.train, train_path.string() + ".partial");
        fs::rename(train_path.string() + ".partial", train_path);
        const fs::path test_path = fs::path(args.out) / "test.csv";
        save_dataset(data.test, test_path.string() + ".partial");
        fs::rename(test_path.string() + ".partial", test_path);
    }

    std::cerr << "wrote " << args.out << "/train.csv (" << data.train.num_instances()
              << " rows) and test.csv (" << data.test.num_instances() << " rows)\n";
    std::cerr << "class counts:";
    for (std::size_t n : data.train.class_counts) std::cerr << " " << n;
    std::cerr << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& out_dir) {
    RunConfig cfg = parse_run_config_file(config_path);
    for (const auto& expr : overrides) apply_override(cfg, expr);
    cfg.validate();

    const SynthesizedData data = resolve_dataset(cfg);
    const ShotSplit split = cfg.resolved_split();

    RunResult result = execute(cfg, data, split, /*parallel_teachers=*/true);
    EvalReport report = make_report(result, cfg, split);
    log_report(report);

    const fs::path out(out_dir);
    fs::create_directories(out);
    write_report_files(report, out / "report.json", out / "report.csv");

    const std::string hash = config_hash_hex(cfg.canonical_json());
    const fs::path model_path = out / "model.ckpt";
    save_model(result.model, model_path.string() + ".partial", hash);
    fs::rename(model_path.string() + ".partial", model_path);
    for (std::size_t k = 0; k < result.teachers.size(); ++k) {
        const fs::path teacher_path = out / ("teacher_" + std::to_string(k) + ".ckpt");
        save_model(result.teachers[k], teacher_path.string() + ".partial", hash);
        fs::rename(teacher_path.string() + ".partial", teacher_path);
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

std::string sweep_csv_header() {
    return "axis,value,mode," + report_csv_header();
}

std::string composition_label(const std::vector<TeacherType>& types) {
    std::string label;
    for (std::size_t i = 0; i < types.size(); ++i) {
        if (i) label += "+";
        label += teacher_type_name(types[i]);
    }
    return label;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& overrides,
               const std::string& axis, const std::string& grid_arg, const std::string& modes_arg,
               const std::string& out_dir) {
    RunConfig base = parse_run_config_file(config_path);
    for (const auto& expr : overrides) apply_override(base, expr);

    const SynthesizedData data = resolve_dataset(base);
    const ShotSplit split = base.resolved_split();

    struct SweepPoint {
        std::string value;
        std::string mode;
        RunConfig cfg;
        std::optional<DistillMode> mode_override;
    };
    std::vector<SweepPoint> points;

    if (axis == "alpha") {
        std::vector<double> grid{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
        if (!grid_arg.empty()) {
            grid.clear();
            for (const auto& tok : split_csv_list(grid_arg)) grid.push_back(std::stod(tok));
        }
        std::vector<std::string> modes = modes_arg.empty()
                                             ? std::vector<std::string>{"feature"}
                                             : split_csv_list(modes_arg);
        for (const auto& mode_name : modes) {
            const DistillMode mode = distill_mode_from_name(mode_name);
            if (mode == DistillMode::none || mode == DistillMode::ensemble) {
                throw config_error("ablate: --modes accepts feature, classifier, hybrid");
            }
            for (double a : grid) {
                RunConfig cfg = base;
                cfg.method = Method::cbd;
                cfg.alpha = a;
                points.push_back({format_acc(a), mode_name, std::move(cfg),
                                  mode == DistillMode::feature
                                      ? std::nullopt
                                      : std::optional<DistillMode>(mode)});
            }
        }
    } else if (axis == "beta") {
        std::vector<double> grid{1.0, 10.0, 100.0, 1000.0};
        if (!grid_arg.empty()) {
            grid.clear();
            for (const auto& tok : split_csv_list(grid_arg)) grid.push_back(std::stod(tok));
        }
        for (double b : grid) {
            RunConfig cfg = base;
            cfg.method = Method::cbd;
            cfg.beta = b;
            points.push_back({format_acc(b), "feature", std::move(cfg), std::nullopt});
        }
    } else if (axis == "K") {
        std::vector<std::size_t> grid{1, 2, 3, 4};
        if (!grid_arg.empty()) {
            grid.clear();
            for (const auto& tok : split_csv_list(grid_arg)) {
                grid.push_back(static_cast<std::size_t>(std::stoul(tok)));
            }
        }
        for (std::size_t k : grid) {
            RunConfig cfg = base;
            cfg.method = Method::cbd_k;
            cfg.teacher_count = k;
            cfg.teacher_types.reset();
            points.push_back({std::to_string(k), "ensemble", std::move(cfg), std::nullopt});
        }
    } else if (axis == "ensemble_composition") {
        // the teacher-mix grid for K = 1..4
        const std::vector<std::vector<TeacherType>> compositions{
            {TeacherType::standard},
            {TeacherType::data_aug},
            {TeacherType::standard, TeacherType::standard},
            {TeacherType::data_aug, TeacherType::data_aug},
            {TeacherType::standard, TeacherType::data_aug},
            {TeacherType::standard, TeacherType::data_aug, TeacherType::data_aug},
            {TeacherType::standard, TeacherType::standard, TeacherType::data_aug,
             TeacherType::data_aug},
        };
        for (const auto& types : compositions) {
            RunConfig cfg = base;
            cfg.method = Method::cbd_k;
            cfg.teacher_types = types;
            cfg.teacher_count = types.size();
            points.push_back({composition_label(types), "ensemble", std::move(cfg), std::nullopt});
        }
    } else {
        throw config_error(
            "ablate: --axis must be one of alpha, beta, K, ensemble_composition (one axis per "
            "sweep)");
    }

    std::ostringstream sweep;
    sweep << sweep_csv_header() << "\n";
    for (auto& point : points) {
        point.cfg.validate();
        StagePlan plan = point.cfg.to_plan();
        plan.extractor_widths.front() = data.train.feature_dim;
        plan.distill_mode_override = point.mode_override;
        RunResult result = run_plan(plan, data.train, data.test, split);
        EvalReport report = make_report(result, point.cfg, split);
        report.method = result.method;
        std::cerr << "[ablate " << axis << "=" << point.value << " mode=" << point.mode << "] ";
        log_report(report);
        sweep << axis << "," << point.value << "," << point.mode << ","
              << report_csv_row(report) << "\n";
    }

    const fs::path out(out_dir);
    atomic_write(out / ("sweep_" + axis + ".csv"), sweep.str());
    std::cerr << "wrote " << (out / ("sweep_" + axis + ".csv")).string() << " (" << points.size()
              << " rows)\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// suite
// ---------------------------------------------------------------------------

struct SuiteStats {
    std::vector<double> overall, many, mid, few, ncm;
};

std::pair<double, double> mean_std(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    if (xs.size() < 2) return {mean, 0.0};
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size() - 1);
    return {mean, std::sqrt(var)};
}

int cmd_suite(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& seeds_arg, const std::string& methods_arg, unsigned jobs,
              const std::string& out_dir) {
    RunConfig base = parse_run_config_file(config_path);
    for (const auto& expr : overrides) apply_override(base, expr);

    std::vector<std::uint64_t> seeds;
    for (const auto& tok : split_csv_list(seeds_arg)) {
        seeds.push_back(std::stoull(tok));
    }
    if (seeds.empty()) throw config_error("suite: at least one seed required");

    std::vector<Method> methods;
    const std::string methods_csv = methods_arg.empty()
                                        ? "instance,class_balanced,crt,finetune,cbd,cbd_k"
                                        : methods_arg;
    for (const auto& tok : split_csv_list(methods_csv)) methods.push_back(method_from_name(tok));
    if (methods.empty()) throw config_error("suite: at least one method required");

    const SynthesizedData data = resolve_dataset(base);
    const ShotSplit split = base.resolved_split();
    const fs::path out(out_dir);
    fs::create_directories(out);

    struct Job {
        Method method;
        std::uint64_t seed;
    };
    std::vector<Job> queue;
    for (Method m : methods) {
        for (std::uint64_t s : seeds) queue.push_back({m, s});
    }

    std::vector<EvalReport> reports(queue.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    const unsigned workers = std::max(1u, std::min<unsigned>(jobs, queue.size()));

    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= queue.size()) break;
            RunConfig cfg = base;
            cfg.method = queue[i].method;
            cfg.seed = queue[i].seed;
            cfg.teacher_types.reset(); // recompose per method default
            if (cfg.teacher_count && queue[i].method != Method::cbd_k &&
                queue[i].method != Method::teacher_ensemble) {
                cfg.teacher_count.reset();
            }
            cfg.validate();
            RunResult result = execute(cfg, data, split, /*parallel_teachers=*/workers == 1);
            EvalReport report = make_report(result, cfg, split);
            {
                std::lock_guard<std::mutex> lock(log_mutex);
                log_report(report);
            }
            const std::string stem = report.method + "_seed" + std::to_string(report.seed);
            write_report_files(report, out / (stem + ".report.json"), out / (stem + ".report.csv"));
            reports[i] = std::move(report);
        }
    };

    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // aggregate: mean and sample std per method, in requested order
    std::ostringstream agg;
    agg << "method,n_seeds,overall_mean,overall_std,many_mean,many_std,mid_mean,mid_std,few_mean,"
           "few_std,ncm_mean,ncm_std\n";
    for (Method m : methods) {
        SuiteStats stats;
        for (const auto& r : reports) {
            if (r.method != method_name(m)) continue;
            stats.overall.push_back(r.overall_acc);
            stats.many.push_back(r.many_acc);
            stats.mid.push_back(r.mid_acc);
            stats.few.push_back(r.few_acc);
            if (r.ncm_overall_acc) stats.ncm.push_back(*r.ncm_overall_acc);
        }
        const auto [om, os] = mean_std(stats.overall);
        const auto [mm, ms] = mean_std(stats.many);
        const auto [im, is] = mean_std(stats.mid);
        const auto [fm, fsd] = mean_std(stats.few);
        agg << method_name(m) << "," << stats.overall.size() << "," << format_acc(om) << ","
            << format_acc(os) << "," << format_acc(mm) << "," << format_acc(ms) << ","
            << format_acc(im) << "," << format_acc(is) << "," << format_acc(fm) << ","
            << format_acc(fsd) << ",";
        if (!stats.ncm.empty()) {
            const auto [nm, ns] = mean_std(stats.ncm);
            agg << format_acc(nm) << "," << format_acc(ns);
        } else {
            agg << ",";
        }
        agg << "\n";
    }
    atomic_write(out / "aggregate.csv", agg.str());
    std::cerr << "wrote " << (out / "aggregate.csv").string() << " (" << queue.size()
              << " runs)\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

int cmd_report(const std::string& dir) {
    std::map<std::string, SuiteStats> by_method;
    std::vector<std::string> order;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
        EvalReport r = parse_report_json(path);
        if (!by_method.count(r.method)) order.push_back(r.method);
        auto& stats = by_method[r.method];
        stats.overall.push_back(r.overall_acc);
        stats.many.push_back(r.many_acc);
        stats.mid.push_back(r.mid_acc);
        stats.few.push_back(r.few_acc);
        if (r.ncm_overall_acc) stats.ncm.push_back(*r.ncm_overall_acc);
    }
    if (by_method.empty()) throw config_error("report: no .json reports found in '" + dir + "'");

    std::cout << "method,n_seeds,overall_mean,overall_std,many_mean,many_std,mid_mean,mid_std,"
                 "few_mean,few_std,ncm_mean,ncm_std\n";
    for (const auto& method : order) {
        const auto& stats = by_method[method];
        const auto [om, os] = mean_std(stats.overall);
        const auto [mm, ms] = mean_std(stats.many);
        const auto [im, is] = mean_std(stats.mid);
        const auto [fm, fsd] = mean_std(stats.few);
        std::cout << method << "," << stats.overall.size() << "," << format_acc(om) << ","
                  << format_acc(os) << "," << format_acc(mm) << "," << format_acc(ms) << ","
                  << format_acc(im) << "," << format_acc(is) << "," << format_acc(fm) << ","
                  << format_acc(fsd) << ",";
        if (!stats.ncm.empty()) {
            const auto [nm, ns] = mean_std(stats.ncm);
            std::cout << format_acc(nm) << "," << format_acc(ns);
        } else {
            std::cout << ",";
        }
        std::cout << "\n";
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"class-balanced distillation experiments on long-tailed data"};
    app.require_subcommand(1);

    // synth
    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "generate a synthetic long-tailed dataset");
    synth->add_option("--classes", synth_args.profile.num_classes, "number of classes");
    synth->add_option("--head", synth_args.profile.head_count, "largest per-class train count");
    synth->add_option("--tail", synth_args.profile.tail_count, "smallest per-class train count");
    synth->add_option("--decay", synth_args.decay, "count decay: exponential or zipf");
    synth->add_option("--zipf-s", synth_args.profile.zipf_s, "zipf exponent (0 = derived)");
    synth->add_option("--dim", synth_args.profile.feature_dim, "feature dimension");
    synth->add_option("--separation", synth_args.profile.class_separation,
                      "class mean separation scale");
    synth->add_option("--noise", synth_args.profile.noise_sigma, "within-class noise sigma");
    synth->add_option("--test-per-class", synth_args.profile.test_per_class,
                      "balanced test count per class");
    synth->add_option("--seed", synth_args.profile.seed, "generation seed");
    synth->add_option("--out", synth_args.out, "output directory")->required();

    // train
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    auto* train = app.add_subcommand("train", "run one method end to end");
    train->add_option("--config", config_path, "run config file")->required();
    train->add_option("--set", overrides, "override config key=value (repeatable)");
    train->add_option("--out", out_dir, "output directory")->required();

    // ablate
    std::string axis, grid_arg, modes_arg;
    auto* ablate = app.add_subcommand("ablate", "sweep one hyperparameter axis");
    ablate->add_option("--config", config_path, "run config file")->required();
    ablate->add_option("--set", overrides, "override config key=value (repeatable)");
    ablate->add_option("--axis", axis, "alpha, beta, K, or ensemble_composition")
        ->required()
        ->multi_option_policy(CLI::MultiOptionPolicy::Throw); // one axis per sweep
    ablate->add_option("--grid", grid_arg, "comma-separated sweep values (axis default if empty)");
    ablate->add_option("--modes", modes_arg,
                       "alpha axis only: feature,classifier,hybrid (default feature)");
    ablate->add_option("--out", out_dir, "output directory")->required();

    // suite
    std::string seeds_arg, methods_arg;
    unsigned jobs = 1;
    auto* suite = app.add_subcommand("suite", "run (method, seed) grid with aggregation");
    suite->add_option("--config", config_path, "run config file")->required();
    suite->add_option("--set", overrides, "override config key=value (repeatable)");
    suite->add_option("--seeds", seeds_arg, "comma-separated seeds")->required();
    suite->add_option("--methods", methods_arg,
                      "comma-separated methods (default: instance,class_balanced,crt,finetune,"
                      "cbd,cbd_k)");
    suite->add_option("--jobs", jobs, "parallel runs (each run stays single-threaded)");
    suite->add_option("--out", out_dir, "output directory")->required();

    // report
    std::string report_dir;
    auto* report = app.add_subcommand("report", "aggregate run reports to stdout CSV");
    report->add_option("--dir", report_dir, "directory of .report.json files")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_args);
        if (train->parsed()) return cmd_train(config_path, overrides, out_dir);
        if (ablate->parsed()) return cmd_ablate(config_path, overrides, axis, grid_arg, modes_arg, out_dir);
        if (suite->parsed()) return cmd_suite(config_path, overrides, seeds_arg, methods_arg, jobs, out_dir);
        if (report->parsed()) return cmd_report(report_dir);
        std::cerr << "error: no subcommand\n";
        return kExitUsage;
    } catch (const numeric_abort& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumericAbort;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}
