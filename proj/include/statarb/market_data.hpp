// Daily panel ingestion, exposure construction, universe selection and a
// synthetic market generator whose true premia path is known.
//
// CSV schema v1
//   assets: date,asset_id,close,shares,total_return,eps,listed
//   index:  date,index_total_return,risk_free_annual
// Dates are ISO yyyy-mm-dd. Empty numeric fields mean missing. `listed` is
// 1/0 (true/false also accepted). Extra columns are ignored.
#pragma once

#include <Eigen/Dense>
#include <boost/tokenizer.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "statarb/errors.hpp"
#include "statarb/filters.hpp"
#include "statarb/random.hpp"

namespace statarb::market {

using filters::Index;
using filters::Matrix;
using filters::Vector;
using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kDayFraction = 1.0 / 252.0;
inline constexpr int kSchemaVersion = 1;

/// Aligned T x n panel. `present(k, i)` marks rows that exist in the file.
struct RawPanel {
    std::vector<std::string> dates;
    std::vector<std::string> assets;
    Matrix close;
    Matrix shares;
    Matrix total_return;
    Matrix eps;
    BoolMatrix listed;
    BoolMatrix present;
    Vector index_return;
    Vector rf_annual;

    Index days() const { return static_cast<Index>(dates.size()); }
    Index width() const { return static_cast<Index>(assets.size()); }
    Index rows() const { return present.count(); }
    bool has_eps() const { return eps.array().isFinite().any(); }

    /// Return in excess of the per-day risk-free accrual.
    double excess(Index k, Index i) const { return total_return(k, i) - rf_annual(k) * kDayFraction; }
    double index_excess(Index k) const { return index_return(k) - rf_annual(k) * kDayFraction; }

    void resize(Index T, Index n) {
        close = shares = total_return = eps = Matrix::Constant(T, n, kNaN);
        listed = present = BoolMatrix::Constant(T, n, false);
        index_return = rf_annual = Vector::Constant(T, kNaN);
    }
};

/// First `days` dates of a panel.
inline RawPanel head(const RawPanel& panel, Index days) {
    days = std::min(days, panel.days());
    RawPanel out;
    out.dates.assign(panel.dates.begin(), panel.dates.begin() + days);
    out.assets = panel.assets;
    out.close = panel.close.topRows(days);
    out.shares = panel.shares.topRows(days);
    out.total_return = panel.total_return.topRows(days);
    out.eps = panel.eps.topRows(days);
    out.listed = panel.listed.topRows(days);
    out.present = panel.present.topRows(days);
    out.index_return = panel.index_return.head(days);
    out.rf_annual = panel.rf_annual.head(days);
    return out;
}

inline int year_of(const std::string& date) {
    if (date.size() < 4) throw InvalidInput("bad date '" + date + "'");
    return std::stoi(date.substr(0, 4));
}

/// True on the last panel date of each calendar year (and the final date).
inline std::vector<bool> last_day_of_year(const std::vector<std::string>& dates) {
    std::vector<bool> out(dates.size(), false);
    for (std::size_t k = 0; k < dates.size(); ++k) {
        out[k] = k + 1 == dates.size() || year_of(dates[k + 1]) != year_of(dates[k]);
    }
    return out;
}

/// True where an asset trades at k but has no listed close at k + 1.
inline BoolMatrix delists_next(const RawPanel& panel) {
    const Index T = panel.days(), n = panel.width();
    BoolMatrix out = BoolMatrix::Constant(T, n, false);
    for (Index k = 0; k + 1 < T; ++k) {
        for (Index i = 0; i < n; ++i) {
            const bool now = panel.present(k, i) && panel.listed(k, i);
            const bool next = panel.present(k + 1, i) && panel.listed(k + 1, i) && std::isfinite(panel.close(k + 1, i));
            out(k, i) = now && !next;
        }
    }
    return out;
}

// ---------------------------------------------------------------- CSV I/O

namespace detail {

using Tokens = boost::tokenizer<boost::escaped_list_separator<char>>;

inline std::vector<std::string> split(const std::string& line) {
    std::string trimmed = line;
    if (!trimmed.empty() && trimmed.back() == '\r') trimmed.pop_back();
    Tokens tokens(trimmed);
    return {tokens.begin(), tokens.end()};
}

inline double parse_number(const std::string& field, const char* column, std::size_t line, bool allow_empty) {
    if (field.empty()) {
        if (allow_empty) return kNaN;
        throw ParseError(std::string("empty ") + column, line);
    }
    double value = 0.0;
    const char* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(field.data(), end, value);
    if (ec != std::errc{} || ptr != end || !std::isfinite(value)) {
        throw ParseError(std::string("bad ") + column + " '" + field + "'", line);
    }
    return value;
}

inline bool parse_flag(const std::string& field, std::size_t line) {
    if (field == "1" || field == "true" || field == "TRUE") return true;
    if (field == "0" || field == "false" || field == "FALSE") return false;
    throw ParseError("bad listed flag '" + field + "'", line);
}

inline void check_date(const std::string& date, std::size_t line) {
    using namespace std::chrono;
    int y = 0;
    unsigned mo = 0, d = 0;
    char tail = 0;
    if (date.size() != 10 || std::sscanf(date.c_str(), "%4d-%2u-%2u%c", &y, &mo, &d, &tail) != 3 ||
        !year_month_day{year{y}, month{mo}, day{d}}.ok()) {
        throw ParseError("bad date '" + date + "'", line);
    }
}

/// Header name -> column index, checking required names.
inline std::map<std::string, std::size_t> header_index(const std::string& line, const std::vector<std::string>& required,
                                                       const std::string& file) {
    const auto names = split(line);
    std::map<std::string, std::size_t> index;
    for (std::size_t c = 0; c < names.size(); ++c) index[names[c]] = c;
    for (const auto& name : required) {
        if (!index.count(name)) throw ParseError(file + ": missing required column '" + name + "'", 1);
    }
    return index;
}

inline std::ifstream open(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open '" + path + "'");
    return in;
}

inline std::string fmt12(double v) {
    if (!std::isfinite(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

}  // namespace detail

/// Loads the assets and index files. The index file defines the calendar;
/// every asset date must appear in it.
inline RawPanel load_panel(const std::string& assets_path, const std::string& index_path,
                           int schema_version = kSchemaVersion) {
    if (schema_version != kSchemaVersion) {
        throw InvalidInput("unsupported panel schema version " + std::to_string(schema_version));
    }
    RawPanel panel;
    std::vector<double> idx_ret, idx_rf;
    {
        auto in = detail::open(index_path);
        std::string line;
        if (!std::getline(in, line)) throw ParseError(index_path + ": empty file", 1);
        const auto col = detail::header_index(line, {"date", "index_total_return", "risk_free_annual"}, index_path);
        std::size_t line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty() || line == "\r") continue;
            const auto f = detail::split(line);
            if (f.size() <= std::max({col.at("date"), col.at("index_total_return"), col.at("risk_free_annual")})) {
                throw ParseError(index_path + ": too few fields", line_no);
            }
            const std::string& date = f[col.at("date")];
            detail::check_date(date, line_no);
            if (!panel.dates.empty() && date <= panel.dates.back()) {
                throw ParseError(index_path + ": dates not strictly increasing at " + date, line_no);
            }
            panel.dates.push_back(date);
            idx_ret.push_back(detail::parse_number(f[col.at("index_total_return")], "index_total_return", line_no, false));
            idx_rf.push_back(detail::parse_number(f[col.at("risk_free_annual")], "risk_free_annual", line_no, false));
        }
    }
    std::unordered_map<std::string, Index> date_pos;
    for (std::size_t k = 0; k < panel.dates.size(); ++k) date_pos[panel.dates[k]] = static_cast<Index>(k);

    struct Row {
        Index k;
        std::string id;
        double close, shares, ret, eps;
        bool listed;
        std::size_t line;
    };
    std::vector<Row> rows;
    {
        auto in = detail::open(assets_path);
        std::string line;
        if (!std::getline(in, line)) throw ParseError(assets_path + ": empty file", 1);
        const std::vector<std::string> required{"date", "asset_id", "close", "shares", "total_return", "eps", "listed"};
        const auto col = detail::header_index(line, required, assets_path);
        std::size_t widest = 0;
        for (const auto& name : required) widest = std::max(widest, col.at(name));
        std::size_t line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty() || line == "\r") continue;
            const auto f = detail::split(line);
            if (f.size() <= widest) throw ParseError(assets_path + ": too few fields", line_no);
            const std::string& date = f[col.at("date")];
            detail::check_date(date, line_no);
            const auto it = date_pos.find(date);
            if (it == date_pos.end()) throw ParseError(assets_path + ": date " + date + " not in index file", line_no);
            Row row{it->second, f[col.at("asset_id")], detail::parse_number(f[col.at("close")], "close", line_no, true),
                    detail::parse_number(f[col.at("shares")], "shares", line_no, true),
                    detail::parse_number(f[col.at("total_return")], "total_return", line_no, true),
                    detail::parse_number(f[col.at("eps")], "eps", line_no, true),
                    detail::parse_flag(f[col.at("listed")], line_no), line_no};
            if (row.id.empty()) throw ParseError(assets_path + ": empty asset_id", line_no);
            if (std::isfinite(row.close) && row.close <= 0.0) throw ParseError(assets_path + ": close must be > 0", line_no);
            rows.push_back(std::move(row));
        }
    }

    for (const auto& row : rows) panel.assets.push_back(row.id);
    std::sort(panel.assets.begin(), panel.assets.end());
    panel.assets.erase(std::unique(panel.assets.begin(), panel.assets.end()), panel.assets.end());
    std::unordered_map<std::string, Index> asset_pos;
    for (std::size_t i = 0; i < panel.assets.size(); ++i) asset_pos[panel.assets[i]] = static_cast<Index>(i);

    panel.resize(panel.days(), panel.width());
    for (Index k = 0; k < panel.days(); ++k) {
        panel.index_return(k) = idx_ret[static_cast<std::size_t>(k)];
        panel.rf_annual(k) = idx_rf[static_cast<std::size_t>(k)];
    }
    for (const auto& row : rows) {
        const Index i = asset_pos.at(row.id);
        if (panel.present(row.k, i)) {
            throw ParseError("duplicate row for (" + row.id + ", " + panel.dates[static_cast<std::size_t>(row.k)] + ")", row.line);
        }
        panel.present(row.k, i) = true;
        panel.close(row.k, i) = row.close;
        panel.shares(row.k, i) = row.shares;
        panel.total_return(row.k, i) = row.ret;
        panel.eps(row.k, i) = row.eps;
        panel.listed(row.k, i) = row.listed;
    }
    return panel;
}

/// Writes both schema-v1 files; numbers carry 12 significant digits.
inline void write_panel(const RawPanel& panel, std::ostream& assets, std::ostream& index) {
    assets << "date,asset_id,close,shares,total_return,eps,listed\n";
    index << "date,index_total_return,risk_free_annual\n";
    for (Index k = 0; k < panel.days(); ++k) {
        const auto& date = panel.dates[static_cast<std::size_t>(k)];
        index << date << ',' << detail::fmt12(panel.index_return(k)) << ',' << detail::fmt12(panel.rf_annual(k)) << '\n';
        for (Index i = 0; i < panel.width(); ++i) {
            if (!panel.present(k, i)) continue;
            assets << date << ',' << panel.assets[static_cast<std::size_t>(i)] << ',' << detail::fmt12(panel.close(k, i))
                   << ',' << detail::fmt12(panel.shares(k, i)) << ',' << detail::fmt12(panel.total_return(k, i)) << ','
                   << detail::fmt12(panel.eps(k, i)) << ',' << (panel.listed(k, i) ? 1 : 0) << '\n';
        }
    }
}

inline void write_panel(const RawPanel& panel, const std::string& assets_path, const std::string& index_path) {
    std::ofstream assets(assets_path), index(index_path);
    if (!assets || !index) throw InvalidInput("cannot write panel files");
    write_panel(panel, assets, index);
}

// -------------------------------------------------------------- exposures

struct BetaVol {
    double beta = kNaN;
    double volatility = kNaN;
};

/// Regression of asset on index excess returns over the last `window`
/// pairs: slope and mean squared residual. Missing when the window is not
/// full or holds a missing value.
inline BetaVol compute_beta_vol(std::span<const double> asset, std::span<const double> index, Index window = 504) {
    if (asset.size() != index.size()) throw InvalidInput("compute_beta_vol: series lengths differ");
    const auto w = static_cast<std::size_t>(window);
    if (window < 2 || asset.size() < w) return {};
    const std::size_t first = asset.size() - w;
    double mx = 0.0, my = 0.0;
    for (std::size_t t = first; t < asset.size(); ++t) {
        if (!std::isfinite(asset[t]) || !std::isfinite(index[t])) return {};
        mx += index[t];
        my += asset[t];
    }
    mx /= static_cast<double>(w);
    my /= static_cast<double>(w);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t t = first; t < asset.size(); ++t) {
        sxx += (index[t] - mx) * (index[t] - mx);
        sxy += (index[t] - mx) * (asset[t] - my);
    }
    if (!(sxx > 0.0)) return {};
    BetaVol out;
    out.beta = sxy / sxx;
    const double alpha = my - out.beta * mx;
    double sse = 0.0;
    for (std::size_t t = first; t < asset.size(); ++t) {
        const double e = asset[t] - alpha - out.beta * index[t];
        sse += e * e;
    }
    out.volatility = sse / static_cast<double>(w);
    return out;
}

/// Compounded return over days [k - lookback, k - skip); missing without
/// `lookback` prior returns or with a gap.
inline double compute_momentum(std::span<const double> returns, Index k, Index lookback = 252, Index skip = 21) {
    if (skip < 0 || skip >= lookback || k < lookback || k - skip > static_cast<Index>(returns.size())) return kNaN;
    double growth = 1.0;
    for (Index t = k - lookback; t < k - skip; ++t) {
        const double r = returns[static_cast<std::size_t>(t)];
        if (!std::isfinite(r)) return kNaN;
        growth *= 1.0 + r;
    }
    return growth - 1.0;
}

inline double compute_size(double price, double shares) { return price * shares; }

struct FeatureConfig {
    Index beta_window = 504;
    Index momentum_lookback = 252;
    Index momentum_skip = 21;
    Index universe_size = 2000;
};

/// T x n raw (pre-standardization) exposures.
struct ExposureSet {
    Matrix beta;
    Matrix volatility;
    Matrix momentum;
    Matrix size;
    Matrix value;

    const Matrix& column(const std::string& name) const {
        if (name == "beta") return beta;
        if (name == "volatility") return volatility;
        if (name == "momentum") return momentum;
        if (name == "size") return size;
        if (name == "value") return value;
        throw InvalidInput("unknown exposure '" + name + "'");
    }
};

/// Exposures at each date from data dated at or before it.
inline ExposureSet compute_exposures(const RawPanel& panel, const FeatureConfig& cfg = {}) {
    const Index T = panel.days(), n = panel.width();
    ExposureSet out;
    out.beta = out.volatility = out.momentum = out.size = out.value = Matrix::Constant(T, n, kNaN);

    std::vector<double> index_excess(static_cast<std::size_t>(T));
    for (Index k = 0; k < T; ++k) index_excess[static_cast<std::size_t>(k)] = panel.index_excess(k);

    std::vector<double> excess(static_cast<std::size_t>(T)), total(static_cast<std::size_t>(T));
    for (Index i = 0; i < n; ++i) {
        for (Index k = 0; k < T; ++k) {
            excess[static_cast<std::size_t>(k)] = panel.present(k, i) ? panel.excess(k, i) : kNaN;
            total[static_cast<std::size_t>(k)] = panel.present(k, i) ? panel.total_return(k, i) : kNaN;
        }
        for (Index k = 0; k < T; ++k) {
            if (!panel.present(k, i)) continue;
            const auto len = static_cast<std::size_t>(k + 1);
            const auto bv = compute_beta_vol(std::span<const double>(excess.data(), len),
                                             std::span<const double>(index_excess.data(), len), cfg.beta_window);
            out.beta(k, i) = bv.beta;
            out.volatility(k, i) = bv.volatility;
            out.momentum(k, i) = compute_momentum(std::span<const double>(total.data(), len), k,
                                                  cfg.momentum_lookback, cfg.momentum_skip);
            out.size(k, i) = compute_size(panel.close(k, i), panel.shares(k, i));
            const double eps = panel.eps(k, i), price = panel.close(k, i);
            out.value(k, i) = std::isfinite(eps) && price > 0.0 ? eps / price : kNaN;
        }
    }
    return out;
}

/// Top-N listed assets by size at date k, ties to the smaller id. Returns
/// asset positions in rank order.
inline std::vector<Index> select_universe(const RawPanel& panel, Index N, Index k) {
    std::vector<std::pair<double, Index>> ranked;
    for (Index i = 0; i < panel.width(); ++i) {
        if (!panel.present(k, i) || !panel.listed(k, i)) continue;
        const double size = compute_size(panel.close(k, i), panel.shares(k, i));
        if (std::isfinite(size)) ranked.emplace_back(size, i);
    }
    // Assets are stored sorted by id, so a smaller position is a smaller id.
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    if (static_cast<Index>(ranked.size()) > N) ranked.resize(static_cast<std::size_t>(N));
    std::vector<Index> out;
    for (const auto& r : ranked) out.push_back(r.second);
    return out;
}

inline BoolMatrix universe_mask(const RawPanel& panel, Index N) {
    BoolMatrix mask = BoolMatrix::Constant(panel.days(), panel.width(), false);
    for (Index k = 0; k < panel.days(); ++k) {
        for (Index i : select_universe(panel, N, k)) mask(k, i) = true;
    }
    return mask;
}

/// Per-date n x m exposure matrices over the named columns; size enters in
/// log. Assets outside the universe get NaN rows.
inline std::vector<Matrix> exposure_matrices(const ExposureSet& set, const std::vector<std::string>& factors,
                                             const BoolMatrix& universe) {
    const Index T = set.size.rows(), n = set.size.cols(), m = static_cast<Index>(factors.size());
    std::vector<Matrix> out(static_cast<std::size_t>(T), Matrix::Constant(n, m, kNaN));
    for (Index c = 0; c < m; ++c) {
        const auto& name = factors[static_cast<std::size_t>(c)];
        const Matrix& src = set.column(name);
        const bool log = name == "size";
        for (Index k = 0; k < T; ++k) {
            for (Index i = 0; i < n; ++i) {
                if (!universe(k, i)) continue;
                const double v = src(k, i);
                out[static_cast<std::size_t>(k)](i, c) = log ? (v > 0.0 ? std::log(v) : kNaN) : v;
            }
        }
    }
    return out;
}

/// features CSV: date,asset_id,beta,volatility,momentum,size,value,in_universe
inline void write_features_csv(std::ostream& os, const RawPanel& panel, const ExposureSet& set,
                               const BoolMatrix& universe) {
    os << "date,asset_id,beta,volatility,momentum,size,value,in_universe\n";
    auto put = [&os](double v) {
        char buf[32];
        if (std::isfinite(v)) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            os << ',' << buf;
        } else {
            os << ',';
        }
    };
    for (Index k = 0; k < panel.days(); ++k) {
        for (Index i = 0; i < panel.width(); ++i) {
            if (!panel.present(k, i)) continue;
            os << panel.dates[static_cast<std::size_t>(k)] << ',' << panel.assets[static_cast<std::size_t>(i)];
            for (const Matrix* m : {&set.beta, &set.volatility, &set.momentum, &set.size, &set.value}) put((*m)(k, i));
            os << ',' << (universe(k, i) ? 1 : 0) << '\n';
        }
    }
}

// -------------------------------------------------------------- synthetic

enum class FactorProcess { RandomWalk, AR1 };

struct SynthConfig {
    Index assets = 100;
    Index factors = 4;
    Index days = 1000;
    FactorProcess process = FactorProcess::RandomWalk;
    double phi = 0.0;
    double sigma_f = 0.001;
    double sigma_r = 0.02;
    /// Day-to-day autocorrelation of each exposure.
    double persistence = 0.99;
    /// Market component beta_i * m_k with beta_i ~ U[beta_low, beta_high]; off when market_sd = 0.
    double market_sd = 0.0;
    double beta_low = 1.0;
    double beta_high = 1.0;
    /// OU mispricing in price space; off when half_life = 0.
    double mispricing_half_life = 0.0;
    double mispricing_sd = 0.0;
    double rf_annual = 0.0;
    /// Exposures identically one (with factors = 1) when set.
    bool unit_exposures = false;
    std::string start_date = "2000-01-03";
    std::uint64_t seed = 1;

    void validate() const {
        if (assets < 1 || factors < 1 || days < 2) throw InvalidInput("synth: assets, factors >= 1 and days >= 2");
        if (!(sigma_f > 0.0)) throw InvalidInput("synth: sigma_f must be > 0");
        if (!(sigma_r >= 0.0)) throw InvalidInput("synth: sigma_r must be >= 0");
        if (process == FactorProcess::AR1 && !(phi >= 0.0 && phi < 1.0)) throw InvalidInput("synth: phi must be in [0, 1)");
        if (!(persistence >= 0.0 && persistence < 1.0)) throw InvalidInput("synth: persistence must be in [0, 1)");
        if (!(market_sd >= 0.0) || beta_low > beta_high) throw InvalidInput("synth: bad market parameters");
        if (mispricing_half_life < 0.0 || mispricing_sd < 0.0) throw InvalidInput("synth: bad mispricing parameters");
    }
};

struct SynthPanel {
    RawPanel panel;
    std::vector<Matrix> exposures;  ///< X_k, n x m
    Matrix true_f;                  ///< T x m, row k is f_k
    Vector true_beta;               ///< n
    Matrix beta;                    ///< T x n beta relative to the index
};

/// Weekdays starting at `start`.
inline std::vector<std::string> weekday_calendar(const std::string& start, Index count) {
    using namespace std::chrono;
    int y = 0;
    unsigned mo = 0, d = 0;
    if (std::sscanf(start.c_str(), "%d-%u-%u", &y, &mo, &d) != 3) throw InvalidInput("bad start date '" + start + "'");
    sys_days day = year{y} / month{mo} / std::chrono::day{d};
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(count));
    while (static_cast<Index>(out.size()) < count) {
        const weekday wd{day};
        if (wd != Saturday && wd != Sunday) {
            const year_month_day ymd{day};
            char buf[16];
            std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day()));
            out.emplace_back(buf);
        }
        day += days{1};
    }
    return out;
}

/// Draws exposures, premia and returns with r_{k+1} = X_k f_k + beta_i m_{k+1}
/// + du_{k+1} + e. Row 0 of the returns carries only the noise terms.
inline SynthPanel synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    const Index T = cfg.days, n = cfg.assets, m = cfg.factors;
    Rng rx(derive_seed(cfg.seed, 11)), rf(derive_seed(cfg.seed, 12)), re(derive_seed(cfg.seed, 13)),
        rm(derive_seed(cfg.seed, 14)), ru(derive_seed(cfg.seed, 15)), rs(derive_seed(cfg.seed, 16));

    SynthPanel out;
    RawPanel& p = out.panel;
    p.dates = weekday_calendar(cfg.start_date, T);
    for (Index i = 0; i < n; ++i) {
        char buf[24];
        std::snprintf(buf, sizeof buf, "A%05lld", static_cast<long long>(i));
        p.assets.emplace_back(buf);
    }
    p.resize(T, n);

    out.true_beta.resize(n);
    for (Index i = 0; i < n; ++i) out.true_beta(i) = rm.uniform(cfg.beta_low, cfg.beta_high);
    const double mean_beta = out.true_beta.mean();
    out.beta = Matrix::Constant(T, n, 1.0);
    if (cfg.market_sd > 0.0) out.beta.rowwise() = (out.true_beta / mean_beta).transpose();

    Vector shares(n), price(n);
    for (Index i = 0; i < n; ++i) {
        shares(i) = std::round(std::exp(rs.normal(std::log(1e7), 1.0)));
        price(i) = rs.uniform(10.0, 100.0);
    }

    const double innovation = std::sqrt(1.0 - cfg.persistence * cfg.persistence);
    const bool ou = cfg.mispricing_half_life > 0.0 && cfg.mispricing_sd > 0.0;
    const double ou_a = ou ? std::exp2(-1.0 / cfg.mispricing_half_life) : 0.0;
    const double ou_s = cfg.mispricing_sd * std::sqrt(1.0 - ou_a * ou_a);
    const double phi = cfg.process == FactorProcess::RandomWalk ? 1.0 : cfg.phi;
    const double rf_day = cfg.rf_annual * kDayFraction;

    Matrix X(n, m);
    for (Index i = 0; i < X.size(); ++i) X.data()[i] = cfg.unit_exposures ? 1.0 : rx.normal();
    Vector f(m);
    for (Index j = 0; j < m; ++j) f(j) = cfg.process == FactorProcess::AR1 ? rf.normal(0.0, cfg.sigma_f / std::sqrt(1.0 - phi * phi)) : 0.0;
    Vector u(n);
    for (Index i = 0; i < n; ++i) u(i) = ou ? ru.normal(0.0, cfg.mispricing_sd) : 0.0;

    out.exposures.reserve(static_cast<std::size_t>(T));
    out.true_f.resize(T, m);
    Vector prev_signal = Vector::Zero(n);  // X_{k-1} f_{k-1}
    for (Index k = 0; k < T; ++k) {
        const double market = cfg.market_sd > 0.0 ? rm.normal(0.0, cfg.market_sd) : 0.0;
        double index_sum = 0.0;
        for (Index i = 0; i < n; ++i) {
            double du = 0.0;
            if (ou) {
                const double next = ou_a * u(i) + ou_s * ru.normal();
                du = next - u(i);
                u(i) = next;
            }
            const double excess = prev_signal(i) + out.true_beta(i) * market + du + cfg.sigma_r * re.normal();
            const double ret = excess + rf_day;
            price(i) *= 1.0 + ret;
            p.total_return(k, i) = ret;
            p.close(k, i) = price(i);
            p.shares(k, i) = shares(i);
            p.listed(k, i) = p.present(k, i) = true;
            index_sum += ret;
        }
        p.index_return(k) = index_sum / static_cast<double>(n);
        p.rf_annual(k) = cfg.rf_annual;

        out.exposures.push_back(X);
        out.true_f.row(k) = f.transpose();
        prev_signal = X * f;

        if (!cfg.unit_exposures) {
            for (Index i = 0; i < X.size(); ++i) X.data()[i] = cfg.persistence * X.data()[i] + innovation * rx.normal();
        }
        for (Index j = 0; j < m; ++j) f(j) = phi * f(j) + cfg.sigma_f * rf.normal();
    }
    return out;
}

}  // namespace statarb::market
