// Command-line front end: synth, features, backtest, report.
#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "statarb/backtest.hpp"

namespace {

namespace bt = statarb::backtest;
namespace fs = std::filesystem;

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string mode, tc_bps, ws, long_z, short_z, hedge, blend;
};

bt::Overrides overrides_from(const CommonFlags& f) {
    bt::Overrides o;
    if (f.seed) o["seed"] = std::to_string(*f.seed);
    if (!f.out.empty()) o["output.dir"] = f.out;
    const std::pair<const std::string*, const char*> mapped[] = {
        {&f.mode, "model.modes"},     {&f.tc_bps, "portfolio.tc_bps"}, {&f.ws, "strategy.ws"},
        {&f.long_z, "strategy.long_z"}, {&f.short_z, "strategy.short_z"}, {&f.hedge, "portfolio.hedge"},
        {&f.blend, "portfolio.blend"},
    };
    for (const auto& [value, key] : mapped) {
        if (!value->empty()) o[key] = *value;
    }
    return o;
}

bt::RunConfig resolve(const CommonFlags& f) {
    const auto o = overrides_from(f);
    return f.config.empty() ? bt::load_config_text("", o) : bt::load_config_file(f.config, o);
}

int report_error(const std::string& type, const std::vector<std::string>& messages, int code) {
    nlohmann::json err{{"error", {{"type", type}, {"messages", messages}}}};
    std::cerr << err.dump() << '\n';
    return code;
}

int cmd_synth(const CommonFlags& f) {
    auto cfg = resolve(f);
    const auto synth = statarb::market::synth_generate(cfg.synth);
    fs::create_directories(cfg.out_dir);
    const auto assets = (fs::path(cfg.out_dir) / "assets.csv").string();
    const auto index = (fs::path(cfg.out_dir) / "index.csv").string();
    statarb::market::write_panel(synth.panel, assets, index);
    std::cout << "wrote " << assets << " and " << index << '\n';
    return 0;
}

int cmd_features(const CommonFlags& f) {
    auto cfg = resolve(f);
    const auto panel = cfg.source == bt::Source::Csv ? statarb::market::load_panel(cfg.assets_path, cfg.index_path)
                                                      : statarb::market::synth_generate(cfg.synth).panel;
    const auto set = statarb::market::compute_exposures(panel, cfg.features);
    const auto universe = statarb::market::universe_mask(panel, cfg.features.universe_size);
    fs::create_directories(cfg.out_dir);
    const auto path = fs::path(cfg.out_dir) / "features.csv";
    std::ofstream os(path);
    if (!os) throw statarb::InvalidInput("cannot write '" + path.string() + "'");
    statarb::market::write_features_csv(os, panel, set, universe);
    std::cout << "wrote " << path.string() << '\n';
    return 0;
}

int cmd_backtest(const CommonFlags& f) {
    auto cfg = resolve(f);
    const auto start = std::chrono::steady_clock::now();
    const auto data = bt::prepare_data(cfg);
    const auto report = bt::run_backtest(cfg, data);
    bt::write_outputs(cfg, report);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << "ran " << report.runs.size() << " grid points over " << report.days << " days x " << report.assets
              << " assets in " << seconds << " s; summary at " << (fs::path(cfg.out_dir) / "summary.json").string()
              << '\n';
    return 0;
}

int cmd_report(const CommonFlags& f) {
    const std::string dir = f.out.empty() ? "out" : f.out;
    const auto path = fs::path(dir) / "summary.json";
    std::ifstream in(path);
    if (!in) throw statarb::InvalidInput("no summary at '" + path.string() + "'");
    nlohmann::json summary;
    try {
        in >> summary;
    } catch (const nlohmann::json::exception& e) {
        throw statarb::ParseError(path.string() + ": " + e.what(), 0);
    }
    if (summary.value("schema_version", 0) != bt::kSummarySchemaVersion) {
        throw statarb::InvalidInput("unsupported summary schema version");
    }
    bt::render_report(summary, std::cout);
    return 0;
}

void add_common(CLI::App* cmd, CommonFlags& f, bool grid_flags) {
    cmd->add_option("--config", f.config, "INI configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", f.seed, "master seed");
    cmd->add_option("--out", f.out, "output directory");
    if (!grid_flags) return;
    cmd->add_option("--mode", f.mode, "comma list of KF, UKF, OLS, BENCH");
    cmd->add_option("--tc-bps", f.tc_bps, "comma list of transaction costs in bps");
    cmd->add_option("--ws", f.ws, "comma list of spread windows");
    cmd->add_option("--long-z", f.long_z, "comma list of long entry thresholds");
    cmd->add_option("--short-z", f.short_z, "comma list of short entry thresholds");
    cmd->add_option("--hedge", f.hedge, "beta hedge on the index (true/false)");
    cmd->add_option("--blend", f.blend, "blend with the long-only index (true/false)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"State-space statistical arbitrage backtester"};
    app.require_subcommand(1);
    CommonFlags synth, features, backtest, report;
    auto* c_synth = app.add_subcommand("synth", "generate a synthetic panel as CSV");
    add_common(c_synth, synth, false);
    auto* c_features = app.add_subcommand("features", "compute factor exposures");
    add_common(c_features, features, false);
    auto* c_backtest = app.add_subcommand("backtest", "run the experiment grid");
    add_common(c_backtest, backtest, true);
    auto* c_report = app.add_subcommand("report", "print a summary written by backtest");
    c_report->add_option("--out", report.out, "directory holding summary.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error("usage", {e.what()}, 2);
    }

    try {
        if (*c_synth) return cmd_synth(synth);
        if (*c_features) return cmd_features(features);
        if (*c_backtest) return cmd_backtest(backtest);
        return cmd_report(report);
    } catch (const bt::ConfigError& e) {
        return report_error("config", e.problems(), 2);
    } catch (const statarb::ParseError& e) {
        return report_error("parse", {e.what()}, 3);
    } catch (const statarb::SingularDesign& e) {
        return report_error("singular_design", {e.what()}, 4);
    } catch (const std::exception& e) {
        return report_error("runtime", {e.what()}, 1);
    }
}
