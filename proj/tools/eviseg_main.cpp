// eviseg: desk-scale evidential segmentation harness.
//
// Subcommands: gen, train, eval, filter, report. Exit codes: 0 success,
// 2 config error, 3 data error, 4 numerical failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "eviseg/config.hpp"
#include "eviseg/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace eviseg;

namespace {

constexpr int kSchemaVersion = 1;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int workers = 1;
};

RunConfig load_config(const CommonArgs& args) {
    RunConfig cfg = RunConfig::parse_file(args.config_path);
    if (args.seed_set) cfg.seed = args.seed;
    return cfg;
}

std::string resolve_out(const CommonArgs& args, const char* subdir) {
    std::string root = args.out_dir;
    if (root.empty()) {
        if (const char* env = std::getenv("EVISEG_OUT")) root = env;
    }
    if (root.empty()) root = ".";
    const std::string dir = root + "/" + subdir;
    fs::create_directories(dir);
    return dir;
}

json provenance(const RunConfig& cfg) {
    return {{"schema_version", kSchemaVersion},
            {"config_hash", cfg.config_hash()},
            {"seed", cfg.seed}};
}

void write_json(const json& j, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path);
    os << j.dump(2) << "\n";
}

json eval_report_to_json(const RunConfig& cfg, const EvalReport& report,
                         const std::string& level) {
    json images = json::array();
    for (const auto& img : report.images) {
        json row = {{"id", img.id},
                    {"dice", img.dice},
                    {"ece", img.ece},
                    {"ueo", img.ueo},
                    {"ueo_tau", img.ueo_tau},
                    {"accuracy", img.accuracy},
                    {"mean_uncertainty", img.mean_uncertainty}};
        if (img.assd) row["assd"] = *img.assd;
        else row["assd"] = nullptr;
        images.push_back(row);
    }
    json out = provenance(cfg);
    out["degradation"] = level;
    out["mean"] = {{"dice", report.mean_dice},
                   {"ece", report.mean_ece},
                   {"ueo", report.mean_ueo},
                   {"mean_uncertainty", report.mean_uncertainty}};
    if (report.mean_assd) out["mean"]["assd"] = *report.mean_assd;
    else out["mean"]["assd"] = nullptr;
    out["images"] = images;
    return out;
}

Dataset load_dataset_or_die(const std::string& dir) {
    try {
        return load_dataset(dir);
    } catch (const std::exception& e) {
        throw DataError(std::string(e.what()));
    }
}

// ---- gen ----

int cmd_gen(const CommonArgs& args) {
    RunConfig cfg = load_config(args);
    const std::string root = resolve_out(args, "dataset");

    struct Split {
        const char* name;
        std::size_t count;
        bool ood;
    };
    const Split splits[] = {{"train", cfg.train_count, false},
                            {"val", cfg.val_count, false},
                            {"test", cfg.test_count, false},
                            {"ood", cfg.ood_count, true}};
    json summary = provenance(cfg);
    for (std::size_t s = 0; s < 4; ++s) {
        if (splits[s].count == 0) continue;
        SyntheticSpec spec =
            splits[s].ood ? cfg.ood_spec(s) : cfg.synthetic_spec(s);
        Dataset data = generate(spec, splits[s].count);
        if (splits[s].ood) {
            for (auto& sample : data) {
                sample.image = add_gaussian_blur(sample.image, cfg.ood_blur_sigma,
                                                 cfg.ood_blur_kernel);
            }
        }
        save_dataset(data, spec, root + "/" + splits[s].name);
        summary[splits[s].name] = splits[s].count;
    }
    write_json(summary, root + "/gen_summary.json");
    std::cout << "dataset written to " << root << "\n";
    return 0;
}

// ---- train ----

int cmd_train(const CommonArgs& args, const std::string& data_dir) {
    RunConfig cfg = load_config(args);
    Dataset data = load_dataset_or_die(data_dir);
    const std::string out = resolve_out(args, "run");

    ModelState state = init_backbone(cfg.backbone_config());
    TrainConfig tcfg;
    tcfg.epochs = cfg.epochs;
    tcfg.batch_size = cfg.batch;
    tcfg.lr = cfg.lr;
    tcfg.seed = cfg.seed;

    std::ofstream log(out + "/loss_log.jsonl");
    if (!log) throw DataError("cannot write " + out + "/loss_log.jsonl");
    const std::string hash = cfg.config_hash();

    const std::uint64_t rng_state = train_model(
        data, state, tcfg, make_evidential_loss(cfg.loss, cfg.classes),
        [&](const LossReport& r, const StepInfo& info) {
            json row = {{"schema_version", kSchemaVersion},
                        {"config_hash", hash},
                        {"step", info.step},
                        {"epoch", info.epoch},
                        {"lr", info.lr},
                        {"beta_t", r.beta_t},
                        {"ice", r.ice},
                        {"kl", r.kl},
                        {"dice", r.dice},
                        {"cup", r.cup},
                        {"total", r.total},
                        {"n_ac", r.n_ac},
                        {"n_au", r.n_au},
                        {"n_ic", r.n_ic},
                        {"n_iu", r.n_iu}};
            log << row.dump() << "\n";
        });
    save_checkpoint(state, rng_state, out + "/checkpoint");
    write_json(provenance(cfg), out + "/train_summary.json");
    std::cout << "checkpoint written to " << out << "/checkpoint\n";
    return 0;
}

// ---- eval ----

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_dir,
             const std::string& data_dir, const std::string& degradations) {
    RunConfig cfg = load_config(args);
    ModelState state = [&] {
        try {
            return load_checkpoint(checkpoint_dir);
        } catch (const std::exception& e) {
            throw DataError(std::string(e.what()));
        }
    }();
    Dataset data = load_dataset_or_die(data_dir);
    const std::string out = resolve_out(args, "eval");

    EvalOptions opts;
    opts.ece_bins = cfg.ece_bins;
    opts.workers = args.workers;

    std::ostringstream csv;
    csv << "degradation,dice,assd,ece,ueo,mean_uncertainty\n";
    std::stringstream levels(degradations.empty() ? std::string("none") : degradations);
    std::string level;
    int index = 0;
    while (std::getline(levels, level, ',')) {
        DegradationSpec deg = DegradationSpec::parse(level, mix_seed(cfg.seed, 0xde9 + index));
        EvalReport report = evaluate_evidential(state, data, deg, opts);
        std::string name = deg.label();
        for (auto& ch : name)
            if (ch == ':') ch = '_';
        write_json(eval_report_to_json(cfg, report, deg.label()),
                   out + "/eval_" + name + ".json");
        csv << deg.label() << "," << report.mean_dice << ","
            << (report.mean_assd ? std::to_string(*report.mean_assd) : "") << ","
            << report.mean_ece << "," << report.mean_ueo << ","
            << report.mean_uncertainty << "\n";
        ++index;
    }
    std::ofstream csv_file(out + "/eval_summary.csv");
    csv_file << csv.str();
    std::cout << "eval reports written to " << out << "\n";
    return 0;
}

// ---- filter ----

int cmd_filter(const CommonArgs& args, const std::string& checkpoint_dir,
               const std::string& val_dir, const std::string& test_dir) {
    RunConfig cfg = load_config(args);
    ModelState state = [&] {
        try {
            return load_checkpoint(checkpoint_dir);
        } catch (const std::exception& e) {
            throw DataError(std::string(e.what()));
        }
    }();
    Dataset val = load_dataset_or_die(val_dir);
    Dataset test = load_dataset_or_die(test_dir);
    const std::string out = resolve_out(args, "filter");

    EvalOptions opts;
    opts.ece_bins = cfg.ece_bins;
    opts.workers = args.workers;
    FilterOutcome outcome = run_filter(state, val, test, opts);

    std::ofstream manifest(out + "/decisions.jsonl");
    if (!manifest) throw DataError("cannot write " + out + "/decisions.jsonl");
    for (const auto& d : outcome.decisions) {
        json row = {{"schema_version", kSchemaVersion},
                    {"id", d.image_id},
                    {"mean_uncertainty", d.mean_uncertainty},
                    {"u_star", d.threshold},
                    {"verdict", d.verdict},
                    {"uncertainty_source", to_string(d.uncertainty_source)}};
        manifest << row.dump() << "\n";
    }

    json summary = provenance(cfg);
    summary["u_star"] = outcome.u_star;
    summary["unfiltered_mean_dice"] = outcome.unfiltered_mean_dice;
    summary["retained_mean_dice"] = outcome.retained_mean_dice;
    summary["retained_count"] = outcome.retained_count;
    summary["test_count"] = outcome.decisions.size();
    write_json(summary, out + "/filter_summary.json");
    std::cout << "filter manifest written to " << out << "\n";
    return 0;
}

// ---- report ----

int cmd_report(const CommonArgs& args, const std::vector<std::string>& inputs) {
    const std::string out = resolve_out(args, "report");
    json table = json::array();
    std::ostringstream csv;
    csv << "source,degradation,dice,assd,ece,ueo\n";
    for (const auto& input : inputs) {
        std::vector<std::string> files;
        if (fs::is_directory(input)) {
            for (const auto& entry : fs::directory_iterator(input)) {
                if (entry.path().extension() == ".json" &&
                    entry.path().filename().string().rfind("eval_", 0) == 0) {
                    files.push_back(entry.path().string());
                }
            }
            std::sort(files.begin(), files.end());
        } else {
            files.push_back(input);
        }
        if (files.empty()) throw DataError("no eval_*.json files under " + input);
        for (const auto& file : files) {
            std::ifstream is(file);
            if (!is) throw DataError("cannot open " + file);
            json report = json::parse(is, nullptr, false);
            if (report.is_discarded() || !report.contains("images")) {
                throw DataError("malformed eval report: " + file);
            }
            // aggregate from the per-image rows rather than trusting the
            // stored means
            double dice = 0.0, ece_v = 0.0, ueo_v = 0.0, assd_sum = 0.0;
            std::size_t n = 0, assd_n = 0;
            for (const auto& img : report["images"]) {
                dice += img.at("dice").get<double>();
                ece_v += img.at("ece").get<double>();
                ueo_v += img.at("ueo").get<double>();
                if (!img.at("assd").is_null()) {
                    assd_sum += img["assd"].get<double>();
                    ++assd_n;
                }
                ++n;
            }
            if (n == 0) throw DataError("eval report has no images: " + file);
            json row = {{"source", file},
                        {"degradation", report.value("degradation", "unknown")},
                        {"dice", dice / double(n)},
                        {"ece", ece_v / double(n)},
                        {"ueo", ueo_v / double(n)}};
            if (assd_n) row["assd"] = assd_sum / double(assd_n);
            else row["assd"] = nullptr;
            table.push_back(row);
            csv << file << "," << report.value("degradation", "unknown") << ","
                << dice / double(n) << ","
                << (assd_n ? std::to_string(assd_sum / double(assd_n)) : "") << ","
                << ece_v / double(n) << "," << ueo_v / double(n) << "\n";
        }
    }
    json summary = {{"schema_version", kSchemaVersion}, {"rows", table}};
    write_json(summary, out + "/report.json");
    std::ofstream csv_file(out + "/report.csv");
    csv_file << csv.str();
    std::cout << "report written to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Evidential segmentation harness (desk-scale)"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string data_dir, checkpoint_dir, val_dir, test_dir;
    std::string degradations = "none";
    std::vector<std::string> report_inputs;

    auto add_common = [&common](CLI::App* sub, bool config_required = true) {
        auto* opt = sub->add_option("--config", common.config_path, "run config file");
        if (config_required) opt->required();
        sub->add_option("--out", common.out_dir,
                        "output root (default: $EVISEG_OUT or cwd)");
        sub->add_option("--seed", common.seed, "override the config seed")
            ->each([&common](const std::string&) { common.seed_set = true; });
        sub->add_option("--workers", common.workers, "parallel evaluation workers");
    };

    CLI::App* gen = app.add_subcommand("gen", "generate synthetic datasets");
    add_common(gen);

    CLI::App* train = app.add_subcommand("train", "train the evidential model");
    add_common(train);
    train->add_option("--data", data_dir, "training dataset directory")->required();

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd);
    eval_cmd->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();
    eval_cmd->add_option("--data", data_dir, "test dataset directory")->required();
    eval_cmd->add_option("--degradations", degradations,
                         "comma-separated list, e.g. none,noise:0.2,blur:1.5:7,mask:0.25");

    CLI::App* filter = app.add_subcommand("filter", "uncertainty-aware filtering");
    add_common(filter);
    filter->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();
    filter->add_option("--val", val_dir, "validation dataset (with labels)")->required();
    filter->add_option("--test", test_dir, "test dataset to filter")->required();

    CLI::App* report = app.add_subcommand("report", "aggregate eval reports");
    report->add_option("--inputs", report_inputs, "eval output dirs or files")->required();
    report->add_option("--out", common.out_dir, "output root");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(common);
        if (train->parsed()) return cmd_train(common, data_dir);
        if (eval_cmd->parsed()) return cmd_eval(common, checkpoint_dir, data_dir, degradations);
        if (filter->parsed()) return cmd_filter(common, checkpoint_dir, val_dir, test_dir);
        if (report->parsed()) return cmd_report(common, report_inputs);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::runtime_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
