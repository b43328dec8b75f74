// End-to-end experiment runner: configuration, data preparation, the
// (mode x WS x thresholds x TC) grid, and every emitted file.
#pragma once

#include <Eigen/Dense>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "statarb/analytics.hpp"
#include "statarb/errors.hpp"
#include "statarb/factor_engine.hpp"
#include "statarb/market_data.hpp"
#include "statarb/portfolio.hpp"
#include "statarb/random.hpp"
#include "statarb/strategy.hpp"

namespace statarb::backtest {

using filters::Index;
using filters::Matrix;
using filters::Vector;
using market::BoolMatrix;
using Json = nlohmann::json;

inline constexpr int kSummarySchemaVersion = 1;

enum class RunMode { KF, UKF, OLS, BENCH };

inline std::string to_string(RunMode m) {
    switch (m) {
        case RunMode::KF: return "KF";
        case RunMode::UKF: return "UKF";
        case RunMode::OLS: return "OLS";
        case RunMode::BENCH: return "BENCH";
    }
    return "?";
}

inline RunMode parse_run_mode(std::string text) {
    for (auto& c : text) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (text == "KF") return RunMode::KF;
    if (text == "UKF") return RunMode::UKF;
    if (text == "OLS") return RunMode::OLS;
    if (text == "BENCH") return RunMode::BENCH;
    throw InvalidInput("unknown mode '" + text + "' (expected KF, UKF, OLS or BENCH)");
}

enum class Source { Synthetic, Csv };

/// Configuration validation failure carrying every problem found.
class ConfigError : public InvalidInput {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : InvalidInput(join(problems)), problems_(std::move(problems)) {}
    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    static std::string join(const std::vector<std::string>& p) {
        std::string out = "invalid configuration:";
        for (const auto& s : p) out += "\n  " + s;
        return out;
    }
    std::vector<std::string> problems_;
};

struct RunConfig {
    std::uint64_t seed = 1;

    // [data]
    Source source = Source::Synthetic;
    std::string assets_path;
    std::string index_path;
    std::vector<std::string> factors{"beta", "volatility", "momentum", "size"};
    market::FeatureConfig features;
    /// Cross-sectional robust z-scoring of exposures; unset means on for CSV
    /// data and off for synthetic panels (whose exposures are already unit scale).
    std::optional<bool> standardize;

    // [synthetic]
    market::SynthConfig synth{.assets = 100, .factors = 4, .days = 2520};

    // [model]
    std::vector<RunMode> modes{RunMode::KF, RunMode::UKF, RunMode::OLS, RunMode::BENCH};
    engine::EngineConfig engine;

    // [strategy]
    std::vector<Index> ws{5, 10};
    std::vector<double> long_z{0.5, 1.0, 1.5};
    std::vector<double> short_z{2.0};
    Index z_window = 60;
    double exit_level = 0.0;
    Index benchmark_window = 10;

    // [portfolio]
    std::vector<double> tc_bps{5.0};
    bool hedge = true;
    bool hedge_financing = true;
    bool blend = true;

    // [output]
    std::string out_dir = "out";
    bool write_signals = false;
    bool write_diagnostics = true;
    Index drawdown_window = 252;
    /// Worker threads; 0 picks the hardware concurrency.
    Index threads = 0;

    bool standardize_exposures() const { return standardize.value_or(source == Source::Csv); }

    /// Every problem at once, empty when the configuration is usable.
    std::vector<std::string> problems() const {
        std::vector<std::string> out;
        auto check = [&out](auto&& fn) {
            try {
                fn();
            } catch (const std::exception& e) {
                out.emplace_back(e.what());
            }
        };
        if (modes.empty()) out.emplace_back("model.modes: at least one mode is required");
        if (ws.empty()) out.emplace_back("strategy.ws: at least one window is required");
        if (long_z.empty() || short_z.empty()) out.emplace_back("strategy: long_z and short_z need at least one value");
        if (tc_bps.empty()) out.emplace_back("portfolio.tc_bps: at least one cost level is required");
        for (Index w : ws) {
            if (w < 1) out.emplace_back("strategy.ws: windows must be >= 1");
        }
        for (double z : long_z) {
            if (!(z > 0.0) || !std::isfinite(z)) out.emplace_back("strategy.long_z: thresholds must be finite and > 0");
        }
        for (double z : short_z) {
            if (!(z > 0.0) || !std::isfinite(z)) out.emplace_back("strategy.short_z: thresholds must be finite and > 0");
        }
        for (double tc : tc_bps) {
            if (!(tc >= 0.0) || !std::isfinite(tc)) out.emplace_back("portfolio.tc_bps: costs must be finite and >= 0");
        }
        if (z_window < 5) out.emplace_back("strategy.z_window: must be >= 5");
        if (benchmark_window < 1) out.emplace_back("strategy.benchmark_window: must be >= 1");
        if (drawdown_window < 1) out.emplace_back("output.drawdown_window: must be >= 1");
        if (threads < 0) out.emplace_back("output.threads: must be >= 0");
        if (out_dir.empty()) out.emplace_back("output.dir: must not be empty");
        if (features.universe_size < 1) out.emplace_back("data.universe_size: must be >= 1");
        if (features.beta_window < 3) out.emplace_back("data.beta_window: must be >= 3");
        if (features.momentum_skip < 0 || features.momentum_lookback <= features.momentum_skip) {
            out.emplace_back("data.momentum_lookback must exceed data.momentum_skip >= 0");
        }
        check([&] { engine.validate(); });
        if (source == Source::Synthetic) {
            check([&] { synth.validate(); });
        } else {
            if (assets_path.empty()) out.emplace_back("data.assets: path required for csv source");
            else if (!std::filesystem::exists(assets_path)) out.emplace_back("data.assets: no such file '" + assets_path + "'");
            if (index_path.empty()) out.emplace_back("data.index: path required for csv source");
            else if (!std::filesystem::exists(index_path)) out.emplace_back("data.index: no such file '" + index_path + "'");
            if (factors.empty()) out.emplace_back("data.factors: at least one factor is required");
            for (const auto& f : factors) {
                static const std::set<std::string> known{"beta", "volatility", "momentum", "size", "value"};
                if (!known.count(f)) out.emplace_back("data.factors: unknown factor '" + f + "'");
            }
        }
        return out;
    }

    void validate() const {
        auto p = problems();
        if (!p.empty()) throw ConfigError(std::move(p));
    }
};

// ---------------------------------------------------------------- config I/O

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
    const std::string t = trim(text);
    const auto* end = t.data() + t.size();
    auto [ptr, ec] = std::from_chars(t.data(), end, out);
    return ec == std::errc() && ptr == end && !t.empty();
}

inline bool parse_bool(const std::string& text, bool& out) {
    std::string t = trim(text);
    for (auto& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (t == "true" || t == "1" || t == "yes" || t == "on") return out = true, true;
    if (t == "false" || t == "0" || t == "no" || t == "off") return out = false, true;
    return false;
}

/// Reads typed values out of a property tree, remembering what was consumed
/// and collecting problems instead of stopping at the first.
class Reader {
public:
    Reader(const boost::property_tree::ptree& tree, std::vector<std::string>& problems)
        : tree_(tree), problems_(problems) {}

    bool has(const std::string& path) const { return tree_.get_optional<std::string>(path).has_value(); }

    std::optional<std::string> raw(const std::string& path) {
        used_.insert(path);
        auto v = tree_.get_optional<std::string>(path);
        if (!v) return std::nullopt;
        return trim(*v);
    }

    template <typename T>
    void number(const std::string& path, T& target) {
        if (auto v = raw(path)) {
            T parsed{};
            if (parse_number(*v, parsed)) target = parsed;
            else problems_.push_back(path + ": '" + *v + "' is not a valid number");
        }
    }

    void flag(const std::string& path, bool& target) {
        if (auto v = raw(path)) {
            if (!parse_bool(*v, target)) problems_.push_back(path + ": '" + *v + "' is not a boolean");
        }
    }

    void text(const std::string& path, std::string& target) {
        if (auto v = raw(path)) target = *v;
    }

    template <typename T>
    void list(const std::string& path, std::vector<T>& target) {
        if (auto v = raw(path)) {
            std::vector<T> parsed;
            for (const auto& item : split_list(*v)) {
                T x{};
                if (parse_number(item, x)) parsed.push_back(x);
                else problems_.push_back(path + ": '" + item + "' is not a valid number");
            }
            target = std::move(parsed);
        }
    }

    void strings(const std::string& path, std::vector<std::string>& target) {
        if (auto v = raw(path)) target = split_list(*v);
    }

    void unknown_keys() {
        for (const auto& [section, node] : tree_) {
            if (node.empty()) {
                if (!used_.count(section)) problems_.push_back("unknown key '" + section + "'");
                continue;
            }
            for (const auto& [key, leaf] : node) {
                const std::string path = section + "." + key;
                if (!used_.count(path)) problems_.push_back("unknown key '" + path + "'");
            }
        }
    }

    std::vector<std::string>& problems() { return problems_; }

private:
    const boost::property_tree::ptree& tree_;
    std::vector<std::string>& problems_;
    std::set<std::string> used_;
};

}  // namespace detail

/// Key/value overrides layered on top of a config file, addressed as
/// "section.key" (or "seed").
using Overrides = std::map<std::string, std::string>;

/// Builds a RunConfig from an INI tree plus overrides. Throws ConfigError
/// listing every problem (parse and semantic) before any work starts.
inline RunConfig load_config(boost::property_tree::ptree tree, const Overrides& overrides = {}) {
    for (const auto& [path, value] : overrides) tree.put(path, value);
    std::vector<std::string> problems;
    detail::Reader r(tree, problems);
    RunConfig c;

    r.number("seed", c.seed);

    if (auto src = r.raw("data.source")) {
        if (*src == "synthetic") c.source = Source::Synthetic;
        else if (*src == "csv") c.source = Source::Csv;
        else problems.push_back("data.source: expected 'synthetic' or 'csv', got '" + *src + "'");
    }
    r.text("data.assets", c.assets_path);
    r.text("data.index", c.index_path);
    r.strings("data.factors", c.factors);
    r.number("data.universe_size", c.features.universe_size);
    r.number("data.beta_window", c.features.beta_window);
    r.number("data.momentum_lookback", c.features.momentum_lookback);
    r.number("data.momentum_skip", c.features.momentum_skip);
    if (auto v = r.raw("data.standardize")) {
        bool b = false;
        if (*v == "auto") c.standardize.reset();
        else if (detail::parse_bool(*v, b)) c.standardize = b;
        else problems.push_back("data.standardize: expected auto, true or false");
    }

    auto& s = c.synth;
    r.number("synthetic.assets", s.assets);
    r.number("synthetic.factors", s.factors);
    r.number("synthetic.days", s.days);
    if (auto v = r.raw("synthetic.process")) {
        if (*v == "rw" || *v == "random_walk") s.process = market::FactorProcess::RandomWalk;
        else if (*v == "ar1") s.process = market::FactorProcess::AR1;
        else problems.push_back("synthetic.process: expected rw or ar1");
    }
    r.number("synthetic.phi", s.phi);
    r.number("synthetic.sigma_f", s.sigma_f);
    r.number("synthetic.sigma_r", s.sigma_r);
    r.number("synthetic.persistence", s.persistence);
    r.number("synthetic.market_sd", s.market_sd);
    r.number("synthetic.beta_low", s.beta_low);
    r.number("synthetic.beta_high", s.beta_high);
    r.number("synthetic.mispricing_half_life", s.mispricing_half_life);
    r.number("synthetic.mispricing_sd", s.mispricing_sd);
    r.number("synthetic.rf_annual", s.rf_annual);
    r.flag("synthetic.unit_exposures", s.unit_exposures);
    r.text("synthetic.start_date", s.start_date);

    if (auto v = r.raw("model.modes")) {
        c.modes.clear();
        for (const auto& m : detail::split_list(*v)) {
            try {
                c.modes.push_back(parse_run_mode(m));
            } catch (const InvalidInput& e) {
                problems.push_back(std::string("model.modes: ") + e.what());
            }
        }
        std::vector<RunMode> unique;
        for (auto m : c.modes) {
            if (std::find(unique.begin(), unique.end(), m) == unique.end()) unique.push_back(m);
        }
        c.modes = unique;
    }
    auto& e = c.engine;
    if (auto v = r.raw("model.transition")) {
        if (*v == "neural") e.transition = engine::TransitionKind::NeuralAR;
        else if (*v == "identity") e.transition = engine::TransitionKind::Identity;
        else problems.push_back("model.transition: expected neural or identity");
    }
    r.number("model.psi_window", e.psi_window);
    r.number("model.obs_window", e.obs_window);
    r.number("model.cold_start", e.cold_start);
    r.number("model.prior_mean", e.prior_mean);
    r.number("model.prior_var", e.prior_var);
    r.number("model.obs_noise_scale", e.obs_noise_scale);
    r.number("model.min_cross_section", e.min_cross_section);
    r.flag("model.intercept", e.intercept);
    r.number("model.neural_lags", e.neural.lags);
    r.number("model.neural_hidden", e.neural.hidden);
    r.number("model.neural_dropout", e.neural.dropout);
    r.number("model.neural_l2", e.neural.l2);
    r.number("model.neural_epochs", e.neural.epochs);
    r.number("model.neural_lr", e.neural.learning_rate);
    r.number("model.neural_min_history", e.neural_min_history);
    r.number("model.refit_interval", e.refit_interval);

    r.list("strategy.ws", c.ws);
    r.list("strategy.long_z", c.long_z);
    r.list("strategy.short_z", c.short_z);
    r.number("strategy.z_window", c.z_window);
    r.number("strategy.exit_level", c.exit_level);
    r.number("strategy.benchmark_window", c.benchmark_window);

    r.list("portfolio.tc_bps", c.tc_bps);
    r.flag("portfolio.hedge", c.hedge);
    r.flag("portfolio.hedge_financing", c.hedge_financing);
    r.flag("portfolio.blend", c.blend);

    r.text("output.dir", c.out_dir);
    r.flag("output.signals", c.write_signals);
    r.flag("output.diagnostics", c.write_diagnostics);
    r.number("output.drawdown_window", c.drawdown_window);
    r.number("output.threads", c.threads);

    r.unknown_keys();
    for (auto& p : c.problems()) problems.push_back(std::move(p));
    if (!problems.empty()) throw ConfigError(std::move(problems));
    c.synth.seed = c.seed;
    c.engine.seed = c.seed;
    return c;
}

inline RunConfig load_config_text(const std::string& ini, const Overrides& overrides = {}) {
    boost::property_tree::ptree tree;
    std::istringstream in(ini);
    try {
        boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError({std::string("config: ") + e.message() + " (line " + std::to_string(e.line()) + ")"});
    }
    return load_config(tree, overrides);
}

inline RunConfig load_config_file(const std::string& path, const Overrides& overrides = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"config: cannot open '" + path + "'"});
    std::stringstream buf;
    buf << in.rdbuf();
    return load_config_text(buf.str(), overrides);
}

// ---------------------------------------------------------- data preparation

struct PreparedData {
    market::RawPanel panel;
    std::vector<Matrix> exposures;  ///< X_k fed to the engine
    Matrix excess;                  ///< T x n, NaN where absent
    Matrix total;                   ///< T x n, NaN where absent
    Matrix betas;                   ///< T x n hedge betas, NaN unknown
    BoolMatrix universe;
    BoolMatrix delists;
    std::vector<bool> last_day;
    Index factor_count = 0;
};

inline void fill_returns(PreparedData& d) {
    const auto& p = d.panel;
    const Index T = p.days(), n = p.width();
    d.excess = d.total = Matrix::Constant(T, n, market::kNaN);
    for (Index k = 0; k < T; ++k) {
        for (Index i = 0; i < n; ++i) {
            if (!p.present(k, i)) continue;
            d.total(k, i) = p.total_return(k, i);
            d.excess(k, i) = p.excess(k, i);
        }
    }
}

inline void mask_and_standardize(PreparedData& d, bool standardize) {
    for (std::size_t k = 0; k < d.exposures.size(); ++k) {
        Matrix& X = d.exposures[k];
        for (Index i = 0; i < X.rows(); ++i) {
            if (!d.universe(static_cast<Index>(k), i)) X.row(i).setConstant(market::kNaN);
        }
        if (standardize) X = engine::standardize_exposures(X);
    }
}

inline PreparedData prepare_synthetic(const RunConfig& cfg) {
    auto synth = market::synth_generate(cfg.synth);
    PreparedData d;
    d.panel = std::move(synth.panel);
    d.exposures = std::move(synth.exposures);
    d.betas = std::move(synth.beta);
    d.factor_count = cfg.synth.factors;
    fill_returns(d);
    d.universe = market::universe_mask(d.panel, cfg.features.universe_size);
    d.delists = market::delists_next(d.panel);
    d.last_day = market::last_day_of_year(d.panel.dates);
    mask_and_standardize(d, cfg.standardize_exposures());
    return d;
}

inline PreparedData prepare_csv(const RunConfig& cfg) {
    PreparedData d;
    d.panel = market::load_panel(cfg.assets_path, cfg.index_path);
    if (d.panel.days() < 2 || d.panel.width() < 1) throw InvalidInput("data: panel needs at least two dates and one asset");
    std::vector<std::string> factors = cfg.factors;
    if (!d.panel.has_eps()) factors.erase(std::remove(factors.begin(), factors.end(), "value"), factors.end());
    const auto set = market::compute_exposures(d.panel, cfg.features);
    d.universe = market::universe_mask(d.panel, cfg.features.universe_size);
    d.exposures = market::exposure_matrices(set, factors, d.universe);
    d.betas = set.beta;
    d.factor_count = static_cast<Index>(factors.size());
    fill_returns(d);
    d.delists = market::delists_next(d.panel);
    d.last_day = market::last_day_of_year(d.panel.dates);
    mask_and_standardize(d, cfg.standardize_exposures());
    return d;
}

inline PreparedData prepare_data(const RunConfig& cfg) {
    return cfg.source == Source::Synthetic ? prepare_synthetic(cfg) : prepare_csv(cfg);
}

// -------------------------------------------------------------------- grid

struct GridPoint {
    RunMode mode = RunMode::KF;
    Index ws = 5;
    double long_z = 1.0;
    double short_z = 1.0;
    double tc_bps = 5.0;
};

inline std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

inline std::string run_id(const GridPoint& g) {
    return to_string(g.mode) + "_ws" + std::to_string(g.ws) + "_L" + fmt_g(g.long_z) + "_S" + fmt_g(g.short_z) + "_tc" +
           fmt_g(g.tc_bps);
}

/// Grid in a canonical order: mode (config order), WS, L, S, TC.
inline std::vector<GridPoint> expand_grid(const RunConfig& cfg) {
    std::vector<GridPoint> out;
    for (auto mode : cfg.modes)
        for (Index ws : cfg.ws)
            for (double l : cfg.long_z)
                for (double s : cfg.short_z)
                    for (double tc : cfg.tc_bps) out.push_back({mode, ws, l, s, tc});
    return out;
}

struct RunResult {
    GridPoint point;
    std::string id;
    std::vector<portfolio::LedgerEntry> ledger;
    analytics::PerfSummary summary;
    std::optional<portfolio::BlendRun> blend;
    analytics::PerfSummary blend_summary;
};

struct BacktestReport {
    std::vector<RunResult> runs;
    std::map<RunMode, engine::EngineRun> engines;
    analytics::PerfSummary market;  ///< long-only index excess over the same days
    Index assets = 0;
    Index days = 0;
    std::vector<std::string> dates;
};

/// Runs fn(0..count-1) on up to `threads` workers; rethrows the first failure.
template <typename Fn>
void parallel_for(std::size_t count, Index threads, Fn&& fn) {
    std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads) : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next = count;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

inline engine::EngineConfig engine_config_for(const RunConfig& cfg, RunMode mode) {
    engine::EngineConfig e = cfg.engine;
    e.mode = mode == RunMode::KF ? engine::Mode::KF : mode == RunMode::UKF ? engine::Mode::UKF : engine::Mode::OLS;
    e.seed = derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(mode));
    return e;
}

inline portfolio::LedgerInputs ledger_inputs(const PreparedData& d, const strategy::PositionMatrix& positions,
                                             const Matrix& ledger_returns) {
    portfolio::LedgerInputs in;
    in.dates = d.panel.dates;
    in.positions = &positions;
    in.total_returns = &ledger_returns;
    in.betas = &d.betas;
    in.index_return = d.panel.index_return;
    in.rf_annual = d.panel.rf_annual;
    in.universe = &d.universe;
    return in;
}

inline std::vector<int> years_of(const std::vector<std::string>& dates) {
    std::vector<int> out;
    out.reserve(dates.size());
    for (const auto& d : dates) out.push_back(market::year_of(d));
    return out;
}

/// Long-only stream: the index return in excess of the risk-free accrual.
inline std::vector<portfolio::LedgerEntry> market_ledger(const PreparedData& d) {
    std::vector<portfolio::LedgerEntry> out(static_cast<std::size_t>(d.panel.days()));
    for (Index k = 0; k < d.panel.days(); ++k) {
        auto& e = out[static_cast<std::size_t>(k)];
        e.date = d.panel.dates[static_cast<std::size_t>(k)];
        e.index_excess = e.net_excess = d.panel.index_excess(k);
    }
    return out;
}

inline std::vector<portfolio::LedgerEntry> with_net(std::vector<portfolio::LedgerEntry> ledger, const Vector& net) {
    for (std::size_t t = 0; t < ledger.size(); ++t) ledger[t].net_excess = net(static_cast<Index>(t));
    return ledger;
}

/// The whole experiment in memory. Only signal files (when enabled) are
/// written here, since keeping every position panel would not fit.
inline BacktestReport run_backtest(const RunConfig& cfg, const PreparedData& data) {
    cfg.validate();
    BacktestReport report;
    report.assets = data.panel.width();
    report.days = data.panel.days();
    report.dates = data.panel.dates;

    std::vector<RunMode> model_modes;
    for (auto m : cfg.modes) {
        if (m != RunMode::BENCH) model_modes.push_back(m);
    }
    std::vector<engine::EngineRun> engines(model_modes.size());
    parallel_for(model_modes.size(), cfg.threads, [&](std::size_t i) {
        engines[i] = engine::run_engine(data.exposures, data.excess, engine_config_for(cfg, model_modes[i]),
                                        cfg.write_diagnostics);
    });
    for (std::size_t i = 0; i < model_modes.size(); ++i) report.engines[model_modes[i]] = std::move(engines[i]);

    // Held assets always have a return on the next day unless the data has a
    // hole; a hole books as zero rather than aborting the run.
    Matrix ledger_returns = data.total.unaryExpr([](double v) { return std::isfinite(v) ? v : 0.0; });

    struct SignalKey {
        RunMode mode;
        Index ws;
        double l, s;
    };
    std::vector<SignalKey> keys;
    for (auto mode : cfg.modes)
        for (Index ws : cfg.ws)
            for (double l : cfg.long_z)
                for (double s : cfg.short_z) keys.push_back({mode, ws, l, s});

    const auto years = years_of(data.panel.dates);
    const auto market = market_ledger(data);
    const Vector market_net = analytics::net_series(market);
    report.market = analytics::summarize(market, cfg.drawdown_window);

    std::vector<std::vector<RunResult>> per_key(keys.size());
    parallel_for(keys.size(), cfg.threads, [&](std::size_t idx) {
        const auto& key = keys[idx];
        strategy::StrategyParams params;
        params.ws = key.ws;
        params.long_z = key.l;
        params.short_z = key.s;
        params.z_window = cfg.z_window;
        params.exit_level = cfg.exit_level;

        strategy::SignalInputs in;
        in.last_day_of_year = data.last_day;
        in.delists_next = &data.delists;
        in.can_enter = &data.universe;
        in.benchmark_window = cfg.benchmark_window;
        strategy::SignalRun signals;
        if (key.mode == RunMode::BENCH) {
            in.returns = &data.total;
            signals = strategy::run_signals(in, params, strategy::SignalMode::Benchmark);
        } else {
            in.returns = &data.excess;
            in.filtered = &report.engines.at(key.mode).r_filt;
            signals = strategy::run_signals(in, params, strategy::SignalMode::Model);
        }

        for (double tc : cfg.tc_bps) {
            RunResult run;
            run.point = {key.mode, key.ws, key.l, key.s, tc};
            run.id = run_id(run.point);
            portfolio::CostModel model;
            model.tc_bps = tc;
            model.hedge = cfg.hedge;
            model.hedge_financing = cfg.hedge_financing;
            run.ledger = portfolio::build_ledger(ledger_inputs(data, signals.positions, ledger_returns), model);
            run.summary = analytics::summarize(run.ledger, cfg.drawdown_window);
            if (cfg.blend) {
                run.blend = portfolio::blend_series(market_net, analytics::net_series(run.ledger), years);
                run.blend_summary = analytics::summarize(with_net(run.ledger, run.blend->returns), cfg.drawdown_window);
            }
            per_key[idx].push_back(std::move(run));
        }
        if (cfg.write_signals) {
            std::filesystem::create_directories(std::filesystem::path(cfg.out_dir) / "signals");
            const std::string name = to_string(key.mode) + "_ws" + std::to_string(key.ws) + "_L" + fmt_g(key.l) + "_S" +
                                     fmt_g(key.s) + ".csv";
            std::ofstream os(std::filesystem::path(cfg.out_dir) / "signals" / name);
            strategy::write_signals_csv(os, data.panel.dates, data.panel.assets, signals, &data.panel.present);
        }
    });
    for (auto& runs : per_key) {
        for (auto& r : runs) report.runs.push_back(std::move(r));
    }
    return report;
}

// ------------------------------------------------------------------ output

inline Json sharpe_json(const analytics::SharpeResult& s) {
    return Json{{"value", s.value}, {"observations", s.observations}, {"flagged", s.flagged}};
}

inline Json summary_json(const analytics::PerfSummary& s) {
    Json annual = Json::array();
    for (const auto& y : s.years) {
        annual.push_back({{"year", y.year},
                          {"sharpe", sharpe_json(y.sharpe)},
                          {"max_drawdown", y.max_drawdown},
                          {"trades", y.trades},
                          {"turnover", y.turnover},
                          {"invested", y.invested}});
    }
    return Json{{"mean_annual_sharpe", s.mean_annual_sharpe},
                {"pooled_sharpe", s.pooled_sharpe},
                {"max_drawdown", s.max_drawdown},
                {"trades", s.trades},
                {"turnover", s.turnover},
                {"invested", s.invested},
                {"days", s.days},
                {"annual", annual}};
}

inline analytics::SharpeGroups sharpe_groups(const std::vector<RunResult>& runs, RunMode mode) {
    analytics::SharpeGroups groups;
    for (const auto& r : runs) {
        if (r.point.mode != mode) continue;
        auto& g = groups[{r.point.tc_bps, r.point.ws}];
        for (const auto& y : r.summary.years) g.push_back(y.sharpe.value);
    }
    return groups;
}

inline Json config_json(const RunConfig& c) {
    Json modes = Json::array();
    for (auto m : c.modes) modes.push_back(to_string(m));
    const auto& s = c.synth;
    const auto& e = c.engine;
    Json data{{"source", c.source == Source::Csv ? "csv" : "synthetic"},
              {"standardize", c.standardize_exposures()},
              {"universe_size", c.features.universe_size},
              {"beta_window", c.features.beta_window},
              {"momentum_lookback", c.features.momentum_lookback},
              {"momentum_skip", c.features.momentum_skip}};
    if (c.source == Source::Csv) {
        data["assets"] = c.assets_path;
        data["index"] = c.index_path;
        data["factors"] = c.factors;
    } else {
        data["synthetic"] = {{"assets", s.assets},
                             {"factors", s.factors},
                             {"days", s.days},
                             {"process", s.process == market::FactorProcess::AR1 ? "ar1" : "rw"},
                             {"phi", s.phi},
                             {"sigma_f", s.sigma_f},
                             {"sigma_r", s.sigma_r},
                             {"persistence", s.persistence},
                             {"market_sd", s.market_sd},
                             {"beta_low", s.beta_low},
                             {"beta_high", s.beta_high},
                             {"mispricing_half_life", s.mispricing_half_life},
                             {"mispricing_sd", s.mispricing_sd},
                             {"rf_annual", s.rf_annual},
                             {"unit_exposures", s.unit_exposures},
                             {"start_date", s.start_date}};
    }
    return Json{{"seed", c.seed},
                {"data", data},
                {"model",
                 {{"modes", modes},
                  {"transition", e.transition == engine::TransitionKind::NeuralAR ? "neural" : "identity"},
                  {"psi_window", e.psi_window},
                  {"obs_window", e.obs_window},
                  {"cold_start", e.cold_start},
                  {"prior_mean", e.prior_mean},
                  {"prior_var", e.prior_var},
                  {"obs_noise_scale", e.obs_noise_scale},
                  {"min_cross_section", e.min_cross_section},
                  {"intercept", e.intercept},
                  {"neural_lags", e.neural.lags},
                  {"neural_hidden", e.neural.hidden},
                  {"neural_dropout", e.neural.dropout},
                  {"neural_l2", e.neural.l2},
                  {"neural_epochs", e.neural.epochs},
                  {"neural_lr", e.neural.learning_rate},
                  {"neural_min_history", e.neural_min_history},
                  {"refit_interval", e.refit_interval}}},
                {"strategy",
                 {{"ws", c.ws},
                  {"long_z", c.long_z},
                  {"short_z", c.short_z},
                  {"z_window", c.z_window},
                  {"exit_level", c.exit_level},
                  {"benchmark_window", c.benchmark_window}}},
                {"portfolio",
                 {{"tc_bps", c.tc_bps}, {"hedge", c.hedge}, {"hedge_financing", c.hedge_financing}, {"blend", c.blend}}},
                {"output", {{"drawdown_window", c.drawdown_window}, {"signals", c.write_signals}, {"diagnostics", c.write_diagnostics}}}};
}

inline std::string ledger_file(const RunResult& r) { return "ledgers/" + r.id + ".csv"; }

/// Writes every output file into cfg.out_dir and returns the summary. All
/// paths inside the summary are relative to the output directory.
inline Json write_outputs(const RunConfig& cfg, const BacktestReport& report) {
    namespace fs = std::filesystem;
    const fs::path out(cfg.out_dir);
    fs::create_directories(out / "ledgers");
    std::vector<std::string> files;
    auto open = [&](const std::string& rel) {
        files.push_back(rel);
        std::ofstream os(out / rel);
        if (!os) throw InvalidInput("cannot write '" + (out / rel).string() + "'");
        return os;
    };

    Json runs = Json::array();
    for (const auto& r : report.runs) {
        {
            auto os = open(ledger_file(r));
            portfolio::write_ledger_csv(os, r.ledger);
        }
        Json run{{"id", r.id},
                 {"mode", to_string(r.point.mode)},
                 {"ws", r.point.ws},
                 {"long_z", r.point.long_z},
                 {"short_z", r.point.short_z},
                 {"tc_bps", r.point.tc_bps},
                 {"ledger", ledger_file(r)},
                 {"performance", summary_json(r.summary)}};
        if (r.blend) {
            Json weights = Json::array();
            for (const auto& y : r.blend->years) {
                weights.push_back({{"year", y.year}, {"w_long", y.w_long}, {"w_long_short", y.w_long_short}});
            }
            run["blend"] = {{"weights", weights}, {"performance", summary_json(r.blend_summary)}};
        }
        runs.push_back(std::move(run));
    }

    Json percentiles = Json::object();
    for (auto mode : cfg.modes) {
        const auto rows = analytics::percentile_table(sharpe_groups(report.runs, mode));
        const std::string stem = "percentiles_" + to_string(mode);
        {
            auto os = open(stem + ".csv");
            analytics::write_percentile_csv(os, rows);
        }
        {
            auto os = open(stem + ".txt");
            analytics::write_percentile_text(os, rows);
        }
        Json table = Json::array();
        for (const auto& row : rows) {
            table.push_back({{"tc_bps", row.tc_bps}, {"ws", row.ws}, {"p25", row.p25}, {"p50", row.p50},
                             {"p75", row.p75}, {"count", row.count}});
        }
        percentiles[to_string(mode)] = table;
    }

    char buf[32];
    auto num = [&buf](double v) -> const char* {
        if (!std::isfinite(v)) return "";
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return buf;
    };
    {
        auto dd = open("drawdown.csv");
        auto inv = open("invested.csv");
        dd << "date,MARKET";
        inv << "date";
        for (const auto& r : report.runs) {
            dd << ',' << r.id;
            inv << ',' << r.id;
        }
        dd << '\n';
        inv << '\n';
        for (Index k = 0; k < report.days; ++k) {
            const auto& date = report.dates[static_cast<std::size_t>(k)];
            dd << date << ',' << num(report.market.drawdown(k));
            inv << date;
            for (const auto& r : report.runs) {
                dd << ',' << num(r.summary.drawdown(k));
                inv << ',' << num(r.summary.invested_series(k));
            }
            dd << '\n';
            inv << '\n';
        }
    }
    {
        auto os = open("annual_sharpe.csv");
        os << "id,mode,ws,long_z,short_z,tc_bps,year,sharpe,observations,flagged\n";
        auto rows = [&](const std::string& id, const std::string& mode, const std::string& grid,
                        const analytics::PerfSummary& s) {
            for (const auto& y : s.years) {
                os << id << ',' << mode << ',' << grid << ',' << y.year << ',' << num(y.sharpe.value) << ','
                   << y.sharpe.observations << ',' << (y.sharpe.flagged ? 1 : 0) << '\n';
            }
        };
        rows("MARKET", "MARKET", ",,,", report.market);
        for (const auto& r : report.runs) {
            rows(r.id, to_string(r.point.mode),
                 std::to_string(r.point.ws) + ',' + fmt_g(r.point.long_z) + ',' + fmt_g(r.point.short_z) + ',' +
                     fmt_g(r.point.tc_bps),
                 r.summary);
        }
    }
    if (cfg.blend) {
        auto os = open("blend.csv");
        os << "id,year,w_long,w_long_short,sharpe\n";
        for (const auto& r : report.runs) {
            for (std::size_t y = 0; y < r.blend->years.size(); ++y) {
                const auto& w = r.blend->years[y];
                os << r.id << ',' << w.year << ',' << num(w.w_long) << ',';
                os << num(w.w_long_short) << ',' << num(r.blend_summary.years[y].sharpe.value) << '\n';
            }
        }
    }
    if (cfg.write_diagnostics) {
        for (const auto& [mode, run] : report.engines) {
            auto os = open("diagnostics_" + to_string(mode) + ".csv");
            engine::write_diagnostics_csv(os, report.dates, run.steps);
        }
    }
    if (cfg.write_signals) {
        for (const auto& entry : fs::directory_iterator(out / "signals")) {
            files.push_back("signals/" + entry.path().filename().string());
        }
    }
    std::sort(files.begin(), files.end());
    files.push_back("summary.json");

    Json summary{{"schema", "statarb.backtest.summary"},
                 {"schema_version", kSummarySchemaVersion},
                 {"config", config_json(cfg)},
                 {"data",
                  {{"assets", report.assets},
                   {"days", report.days},
                   {"first_date", report.dates.empty() ? "" : report.dates.front()},
                   {"last_date", report.dates.empty() ? "" : report.dates.back()}}},
                 {"market", summary_json(report.market)},
                 {"runs", runs},
                 {"percentiles", percentiles},
                 {"files", files}};
    std::ofstream os(out / "summary.json");
    if (!os) throw InvalidInput("cannot write summary.json");
    os << summary.dump(2) << '\n';
    return summary;
}

// -------------------------------------------------------------- reading back

/// Parses a ledger CSV written by write_ledger_csv.
inline std::vector<portfolio::LedgerEntry> read_ledger_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != portfolio::ledger_header()) throw ParseError("ledger: unexpected header", 1);
    std::vector<portfolio::LedgerEntry> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 14) throw ParseError("ledger: expected 14 fields", line_no);
        portfolio::LedgerEntry e;
        e.date = f[0];
        auto d = [&](std::size_t i) {
            double v = 0.0;
            if (!detail::parse_number(f[i], v)) throw ParseError("ledger: bad number '" + f[i] + "'", line_no);
            return v;
        };
        auto n = [&](std::size_t i) {
            Index v = 0;
            if (!detail::parse_number(f[i], v)) throw ParseError("ledger: bad integer '" + f[i] + "'", line_no);
            return v;
        };
        e.l = n(1);
        e.s = n(2);
        e.pi = d(3);
        e.gross = d(4);
        e.cost = d(5);
        e.hedge_pnl = d(6);
        e.net_excess = d(7);
        e.beta_port = d(8);
        e.P = d(9);
        e.entries = n(10);
        e.abs_change = d(11);
        e.universe = n(12);
        e.index_excess = d(13);
        out.push_back(std::move(e));
    }
    return out;
}

inline std::vector<portfolio::LedgerEntry> read_ledger_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open ledger '" + path + "'");
    return read_ledger_csv(in);
}

/// Human-readable report rendered from a summary JSON.
inline void render_report(const Json& summary, std::ostream& os) {
    auto num = [](const Json& v, int digits) {
        if (v.is_null()) return std::string("NA");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.*f", digits, v.get<double>());
        return std::string(buf);
    };
    const auto& data = summary.at("data");
    os << "Backtest over " << data.at("days").get<Index>() << " days x " << data.at("assets").get<Index>()
       << " assets (" << data.at("first_date").get<std::string>() << " .. " << data.at("last_date").get<std::string>()
       << ")\n\n";
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-32s %8s %8s %8s %8s %9s %8s\n", "run", "Sharpe", "pooled", "maxDD", "trades",
                  "turnover", "invested");
    os << buf;
    auto line = [&](const std::string& id, const Json& p) {
        std::snprintf(buf, sizeof buf, "%-32s %8s %8s %8s %8lld %9s %8s\n", id.c_str(),
                      num(p.at("mean_annual_sharpe"), 2).c_str(), num(p.at("pooled_sharpe"), 2).c_str(),
                      num(p.at("max_drawdown"), 3).c_str(), static_cast<long long>(p.at("trades").get<Index>()),
                      num(p.at("turnover"), 2).c_str(), num(p.at("invested"), 3).c_str());
        os << buf;
    };
    line("MARKET", summary.at("market"));
    for (const auto& run : summary.at("runs")) {
        line(run.at("id").get<std::string>(), run.at("performance"));
        if (run.contains("blend")) line("  blended", run.at("blend").at("performance"));
    }
    for (const auto& [mode, table] : summary.at("percentiles").items()) {
        os << "\nAnnual Sharpe percentiles, " << mode << "\n";
        std::vector<analytics::PercentileRow> rows;
        for (const auto& r : table) {
            analytics::PercentileRow row;
            row.tc_bps = r.at("tc_bps").get<double>();
            row.ws = r.at("ws").get<Index>();
            auto get = [](const Json& v) { return v.is_null() ? analytics::kNaN : v.get<double>(); };
            row.p25 = get(r.at("p25"));
            row.p50 = get(r.at("p50"));
            row.p75 = get(r.at("p75"));
            row.count = r.at("count").get<Index>();
            rows.push_back(row);
        }
        analytics::write_percentile_text(os, rows);
    }
}

}  // namespace statarb::backtest
