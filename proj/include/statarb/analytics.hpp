// Performance statistics over a finished ledger. Every number here is a
// function of ledger columns only, so summaries can be recomputed from the
// emitted CSVs.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "statarb/errors.hpp"
#include "statarb/filters.hpp"
#include "statarb/market_data.hpp"
#include "statarb/portfolio.hpp"

namespace statarb::analytics {

using filters::Index;
using filters::Vector;

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kSharpeStdFloor = 1e-12;
inline constexpr Index kMinYearObservations = 60;
inline constexpr double kAnnualization = 252.0;

struct SharpeResult {
    double value = kNaN;  ///< NaN reports as NA
    Index observations = 0;
    bool flagged = false;  ///< fewer than 60 observations
};

/// mean / std * sqrt(252), sample std. When the std is below the floor the
/// ratio is reported as NA unless the mean is exactly zero.
inline SharpeResult sharpe_annual(std::span<const double> daily) {
    SharpeResult out;
    out.observations = static_cast<Index>(daily.size());
    out.flagged = out.observations < kMinYearObservations;
    if (daily.size() < 2) return out;
    double mean = 0.0;
    for (double v : daily) mean += v;
    mean /= static_cast<double>(daily.size());
    double ss = 0.0;
    for (double v : daily) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(daily.size() - 1));
    if (sd < kSharpeStdFloor) {
        out.value = mean == 0.0 ? 0.0 : kNaN;
        return out;
    }
    out.value = mean / sd * std::sqrt(kAnnualization);
    return out;
}

inline SharpeResult sharpe_annual(const Vector& daily) {
    return sharpe_annual(std::span<const double>(daily.data(), static_cast<std::size_t>(daily.size())));
}

struct DrawdownResult {
    Vector drawdown;
    double max_drawdown = 0.0;
};

/// Equity e_0 = 1, e_k = e_{k-1} (1 + r_k) for k = 1..T. The drawdown on
/// day k is e_k / max(e_j : max(0, k-window+1) <= j <= k) - 1, so the first
/// days measure against the starting equity. max_drawdown is the most
/// negative value (0 when the curve never falls).
inline DrawdownResult rolling_drawdown(std::span<const double> daily, Index window = 252) {
    if (window < 1) throw InvalidInput("rolling_drawdown: window must be >= 1");
    const Index T = static_cast<Index>(daily.size());
    std::vector<double> equity(static_cast<std::size_t>(T) + 1, 1.0);
    for (Index k = 1; k <= T; ++k) {
        equity[static_cast<std::size_t>(k)] = equity[static_cast<std::size_t>(k - 1)] * (1.0 + daily[static_cast<std::size_t>(k - 1)]);
    }
    DrawdownResult out;
    out.drawdown.resize(T);
    // Monotone deque of indices with decreasing equity gives the trailing max.
    std::vector<Index> deque(static_cast<std::size_t>(T) + 1);
    std::size_t head = 0, tail = 0;
    deque[tail++] = 0;
    for (Index k = 1; k <= T; ++k) {
        const double e = equity[static_cast<std::size_t>(k)];
        while (tail > head && equity[static_cast<std::size_t>(deque[tail - 1])] <= e) --tail;
        deque[tail++] = k;
        while (deque[head] < k - window + 1) ++head;
        const double peak = equity[static_cast<std::size_t>(deque[head])];
        out.drawdown(k - 1) = e / peak - 1.0;
        out.max_drawdown = std::min(out.max_drawdown, out.drawdown(k - 1));
    }
    return out;
}

inline DrawdownResult rolling_drawdown(const Vector& daily, Index window = 252) {
    return rolling_drawdown(std::span<const double>(daily.data(), static_cast<std::size_t>(daily.size())), window);
}

/// Linear-interpolation percentile (position p (n - 1) in sorted order).
inline double percentile(std::vector<double> values, double p) {
    values.erase(std::remove_if(values.begin(), values.end(), [](double v) { return std::isnan(v); }), values.end());
    if (values.empty()) return kNaN;
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("percentile: p must be in [0, 1]");
    std::sort(values.begin(), values.end());
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

struct PercentileRow {
    double tc_bps = 0.0;
    Index ws = 0;
    double p25 = kNaN, p50 = kNaN, p75 = kNaN;
    Index count = 0;
};

/// Groups keyed by (TC, WS), ordered by TC then WS.
using SharpeGroups = std::map<std::pair<double, Index>, std::vector<double>>;

inline std::vector<PercentileRow> percentile_table(const SharpeGroups& groups) {
    std::vector<PercentileRow> rows;
    for (const auto& [key, values] : groups) {
        PercentileRow row;
        row.tc_bps = key.first;
        row.ws = key.second;
        row.p25 = percentile(values, 0.25);
        row.p50 = percentile(values, 0.50);
        row.p75 = percentile(values, 0.75);
        row.count = static_cast<Index>(std::count_if(values.begin(), values.end(), [](double v) { return !std::isnan(v); }));
        rows.push_back(row);
    }
    return rows;
}

namespace detail {
inline std::string fixed(double v, int digits) {
    if (std::isnan(v)) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}
inline std::string exact(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
}  // namespace detail

inline void write_percentile_csv(std::ostream& os, const std::vector<PercentileRow>& rows) {
    os << "tc_bps,ws,p25,p50,p75,count\n";
    for (const auto& r : rows) {
        os << detail::exact(r.tc_bps) << ',' << r.ws << ',' << detail::exact(r.p25) << ',' << detail::exact(r.p50) << ','
           << detail::exact(r.p75) << ',' << r.count << '\n';
    }
}

/// Aligned text table, two decimals.
inline void write_percentile_text(std::ostream& os, const std::vector<PercentileRow>& rows) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%8s %4s %8s %8s %8s %6s\n", "TC(bps)", "WS", "p25", "p50", "p75", "n");
    os << buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%8s %4lld %8s %8s %8s %6lld\n", detail::fixed(r.tc_bps, 1).c_str(),
                      static_cast<long long>(r.ws), detail::fixed(r.p25, 2).c_str(), detail::fixed(r.p50, 2).c_str(),
                      detail::fixed(r.p75, 2).c_str(), static_cast<long long>(r.count));
        os << buf;
    }
}

// ---------------------------------------------------------------- summary

struct YearSummary {
    int year = 0;
    SharpeResult sharpe;
    double max_drawdown = 0.0;
    Index trades = 0;
    double turnover = 0.0;
    double invested = 0.0;
};

struct PerfSummary {
    std::vector<YearSummary> years;
    double mean_annual_sharpe = kNaN;
    double pooled_sharpe = kNaN;
    double max_drawdown = 0.0;
    Index trades = 0;
    /// Average daily sum |position change|.
    double turnover = 0.0;
    /// Average daily (l + s) / universe size.
    double invested = 0.0;
    Index days = 0;
    Vector drawdown;
    Vector invested_series;
};

inline Vector net_series(const std::vector<portfolio::LedgerEntry>& ledger) {
    Vector v(static_cast<Index>(ledger.size()));
    for (std::size_t t = 0; t < ledger.size(); ++t) v(static_cast<Index>(t)) = ledger[t].net_excess;
    return v;
}

inline PerfSummary summarize(const std::vector<portfolio::LedgerEntry>& ledger, Index drawdown_window = 252) {
    PerfSummary out;
    out.days = static_cast<Index>(ledger.size());
    if (ledger.empty()) return out;
    const Vector net = net_series(ledger);
    const auto dd = rolling_drawdown(net, drawdown_window);
    out.drawdown = dd.drawdown;
    out.max_drawdown = dd.max_drawdown;
    out.pooled_sharpe = sharpe_annual(net).value;
    out.invested_series.resize(out.days);

    double sharpe_sum = 0.0;
    Index sharpe_count = 0;
    std::size_t start = 0;
    for (std::size_t t = 0; t <= ledger.size(); ++t) {
        const bool boundary = t == ledger.size() ||
                              (t > start && market::year_of(ledger[t].date) != market::year_of(ledger[start].date));
        if (!boundary) continue;
        YearSummary y;
        y.year = market::year_of(ledger[start].date);
        const auto count = static_cast<Index>(t - start);
        y.sharpe = sharpe_annual(std::span<const double>(net.data() + start, t - start));
        y.max_drawdown = dd.drawdown.segment(static_cast<Index>(start), count).minCoeff();
        double invested = 0.0;
        for (std::size_t j = start; j < t; ++j) {
            y.trades += ledger[j].entries;
            y.turnover += ledger[j].abs_change;
            const double frac = ledger[j].universe > 0 ? static_cast<double>(ledger[j].l + ledger[j].s) /
                                                             static_cast<double>(ledger[j].universe)
                                                       : 0.0;
            out.invested_series(static_cast<Index>(j)) = frac;
            invested += frac;
        }
        out.trades += y.trades;
        out.turnover += y.turnover;
        out.invested += invested;
        y.turnover /= static_cast<double>(count);
        y.invested = invested / static_cast<double>(count);
        if (!std::isnan(y.sharpe.value)) {
            sharpe_sum += y.sharpe.value;
            ++sharpe_count;
        }
        out.years.push_back(y);
        start = t;
    }
    out.turnover /= static_cast<double>(out.days);
    out.invested /= static_cast<double>(out.days);
    if (sharpe_count > 0) out.mean_annual_sharpe = sharpe_sum / static_cast<double>(sharpe_count);
    return out;
}

}  // namespace statarb::analytics
