// Daily accounting for the equal-notional long/short book: the excess-return
// formula with per-trade costs, the beta hedge on the index, and the
// long-only / long-short blend.
//
// Ledger convention: row t books the holdings chosen at the close of t-1
// against returns realized over t, then charges the trades made at the
// close of t.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "statarb/errors.hpp"
#include "statarb/filters.hpp"

namespace statarb::portfolio {

using filters::Index;
using filters::Matrix;
using filters::Vector;
using PositionMatrix = Eigen::MatrixXi;
using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kDayFraction = 1.0 / 252.0;

struct CostModel {
    double tc_bps = 5.0;
    bool hedge = true;
    /// Charge the risk-free rate on the hedge notional so the hedge adds an
    /// excess return.
    bool hedge_financing = true;
    double dt = kDayFraction;
};

/// Accounting for one day.
struct LedgerEntry {
    std::string date;
    Index l = 0;
    Index s = 0;
    double pi = 0.0;
    double gross = 0.0;
    double cost = 0.0;
    double hedge_pnl = 0.0;
    double net_excess = 0.0;
    double beta_port = 0.0;
    double P = 0.0;
    Index entries = 0;
    double abs_change = 0.0;
    Index universe = 0;
    double index_excess = 0.0;
};

struct PeriodInputs {
    const int* held = nullptr;    ///< positions earning today's returns
    const int* traded = nullptr;  ///< positions after today's close
    const double* returns = nullptr;
    const double* betas = nullptr;  ///< betas of the held book; may be null without a hedge
    Index n = 0;
    double rf_annual = 0.0;
    double index_return = 0.0;
};

/// Long and short notional in position units (counts for a +-1 book).
inline std::pair<Index, Index> leg_counts(const int* positions, Index n) {
    Index l = 0, s = 0;
    for (Index i = 0; i < n; ++i) {
        l += std::max(positions[i], 0);
        s += std::max(-positions[i], 0);
    }
    return {l, s};
}

/// beta_port = (betas . positions) / Pi; zero for an empty book.
inline double portfolio_beta(const int* positions, const double* betas, Index n, double pi) {
    if (!(pi > 0.0)) return 0.0;
    double sum = 0.0;
    for (Index i = 0; i < n; ++i) {
        if (positions[i] != 0) sum += betas[i] * positions[i];
    }
    return sum / pi;
}

inline double portfolio_beta(const Eigen::VectorXi& positions, const Vector& betas, double pi) {
    if (positions.size() != betas.size()) throw InvalidInput("portfolio_beta: length mismatch");
    return portfolio_beta(positions.data(), betas.data(), positions.size(), pi);
}

/// P = -beta_port * Pi.
inline double hedge_notional(double beta_port, double pi) { return -beta_port * pi; }

/// Net excess return of one day:
///   gross = [sum_long (R - rf dt) + sum_short (-R - rf dt) + rf dt s] / Pi
///   cost  = TC * sum |dD| / max(Pi_held, Pi_traded)
///   hedge = P (index - rf dt) / Pi
/// A day with no holdings and no trades is exactly zero.
inline LedgerEntry period_return(const PeriodInputs& in, const CostModel& model) {
    if (in.held == nullptr || in.traded == nullptr || in.returns == nullptr) {
        throw InvalidInput("period_return: missing inputs");
    }
    if (!std::isfinite(in.rf_annual) || !(model.tc_bps >= 0.0) || !(model.dt > 0.0)) {
        throw InvalidInput("period_return: non-finite rate or cost");
    }
    LedgerEntry e;
    std::tie(e.l, e.s) = leg_counts(in.held, in.n);
    e.pi = static_cast<double>(std::max(e.l, e.s));
    const auto [l_new, s_new] = leg_counts(in.traded, in.n);
    const double pi_new = static_cast<double>(std::max(l_new, s_new));
    const double rf_dt = in.rf_annual * model.dt;
    e.index_excess = in.index_return - rf_dt;

    for (Index i = 0; i < in.n; ++i) {
        const int change = in.traded[i] - in.held[i];
        e.abs_change += std::abs(change);
        e.entries += in.held[i] == 0 && in.traded[i] != 0;
    }

    if (e.pi > 0.0) {
        double legs = 0.0;
        for (Index i = 0; i < in.n; ++i) {
            const int size = in.held[i];
            if (size == 0) continue;
            const double r = in.returns[i];
            if (!std::isfinite(r)) throw InvalidInput("period_return: non-finite return on a held asset");
            legs += size > 0 ? size * (r - rf_dt) : -size * (-r - rf_dt);
        }
        e.gross = (legs + rf_dt * static_cast<double>(e.s)) / e.pi;
        if (model.hedge) {
            if (in.betas == nullptr) throw InvalidInput("period_return: hedge needs betas");
            if (!std::isfinite(in.index_return)) throw InvalidInput("period_return: non-finite index return");
            e.beta_port = portfolio_beta(in.held, in.betas, in.n, e.pi);
            e.P = hedge_notional(e.beta_port, e.pi);
            const double index_leg = model.hedge_financing ? e.index_excess : in.index_return;
            e.hedge_pnl = e.P * index_leg / e.pi;
        }
    }
    const double base = std::max(e.pi, pi_new);
    e.cost = base > 0.0 ? model.tc_bps * 1e-4 * e.abs_change / base : 0.0;
    e.net_excess = e.gross - e.cost + e.hedge_pnl;
    return e;
}

struct LedgerInputs {
    std::vector<std::string> dates;
    const PositionMatrix* positions = nullptr;  ///< T x n, held from the close of k
    const Matrix* total_returns = nullptr;      ///< T x n
    const Matrix* betas = nullptr;              ///< T x n; NaN falls back to 1
    Vector index_return;
    Vector rf_annual;
    const BoolMatrix* universe = nullptr;  ///< per-day universe, for the invested fraction
};

/// Sequential fold over days. Row t books positions(t-1) against returns(t)
/// and charges the move to positions(t); row 0 starts from a flat book.
inline std::vector<LedgerEntry> build_ledger(const LedgerInputs& in, const CostModel& model) {
    if (in.positions == nullptr || in.total_returns == nullptr) throw InvalidInput("build_ledger: missing inputs");
    const Index T = in.positions->rows(), n = in.positions->cols();
    if (in.total_returns->rows() != T || in.total_returns->cols() != n || in.index_return.size() != T ||
        in.rf_annual.size() != T || static_cast<Index>(in.dates.size()) != T) {
        throw InvalidInput("build_ledger: input shapes disagree");
    }
    if (in.betas && (in.betas->rows() != T || in.betas->cols() != n)) throw InvalidInput("build_ledger: beta shape");

    std::vector<LedgerEntry> ledger;
    ledger.reserve(static_cast<std::size_t>(T));
    Eigen::VectorXi held = Eigen::VectorXi::Zero(n), traded(n);
    Vector returns(n), betas = Vector::Ones(n);
    for (Index t = 0; t < T; ++t) {
        traded = in.positions->row(t).transpose();
        returns = in.total_returns->row(t).transpose();
        if (in.betas && t > 0) {
            for (Index i = 0; i < n; ++i) {
                const double b = (*in.betas)(t - 1, i);
                betas(i) = std::isfinite(b) ? b : 1.0;
            }
        }
        PeriodInputs p{held.data(), traded.data(), returns.data(), betas.data(), n, in.rf_annual(t), in.index_return(t)};
        LedgerEntry e = period_return(p, model);
        e.date = in.dates[static_cast<std::size_t>(t)];
        e.universe = in.universe ? in.universe->row(t).count() : n;
        ledger.push_back(std::move(e));
        held = traded;
    }
    return ledger;
}

inline const char* ledger_header() {
    return "date,l,s,pi,gross,cost,hedge_pnl,net_excess,beta_port,P,entries,abs_change,universe,index_excess";
}

inline void write_ledger_csv(std::ostream& os, const std::vector<LedgerEntry>& ledger) {
    os << ledger_header() << '\n';
    char buf[512];
    for (const auto& e : ledger) {
        std::snprintf(buf, sizeof buf, "%s,%lld,%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%lld,%.17g,%lld,%.17g\n",
                      e.date.c_str(), static_cast<long long>(e.l), static_cast<long long>(e.s), e.pi, e.gross, e.cost,
                      e.hedge_pnl, e.net_excess, e.beta_port, e.P, static_cast<long long>(e.entries), e.abs_change,
                      static_cast<long long>(e.universe), e.index_excess);
        os << buf;
    }
}

// ------------------------------------------------------------------ blend

/// w_i = S_i / (S_L + S_LS) with S_i = mu_i / sigma2_i; equal weights when
/// the scores cancel.
inline std::pair<double, double> blended_weights(double mu_l, double var_l, double mu_ls, double var_ls) {
    if (!(var_l > 0.0) || !(var_ls > 0.0)) throw InvalidInput("blended_weights: variances must be > 0");
    const double s_l = mu_l / var_l, s_ls = mu_ls / var_ls;
    const double total = s_l + s_ls;
    if (total == 0.0 || !std::isfinite(total)) return {0.5, 0.5};
    return {s_l / total, s_ls / total};
}

struct BlendYear {
    int year = 0;
    double w_long = 0.5;
    double w_long_short = 0.5;
};

struct BlendRun {
    Vector returns;
    std::vector<BlendYear> years;
};

/// Daily blend of a long-only stream and the long/short stream. Weights are
/// set at the start of each calendar year from annualized moments of the
/// previous (up to) `max_years` years; the first year is equal weighted.
inline BlendRun blend_series(const Vector& long_only, const Vector& long_short, const std::vector<int>& years,
                             int max_years = 10) {
    const Index T = long_only.size();
    if (long_short.size() != T || static_cast<Index>(years.size()) != T) throw InvalidInput("blend_series: length mismatch");
    BlendRun run;
    run.returns.resize(T);
    Index year_start = 0;
    std::vector<Index> starts;  // first day of each year seen so far
    for (Index k = 0; k < T; ++k) {
        const int y = years[static_cast<std::size_t>(k)];
        if (k == 0 || y != years[static_cast<std::size_t>(k - 1)]) {
            starts.push_back(k);
            year_start = k;
            BlendYear by;
            by.year = y;
            if (starts.size() > 1) {
                const std::size_t first = starts.size() > static_cast<std::size_t>(max_years) + 1
                                              ? starts.size() - 1 - static_cast<std::size_t>(max_years)
                                              : 0;
                const Index from = starts[first], count = year_start - from;
                auto moments = [&](const Vector& v) {
                    const auto seg = v.segment(from, count);
                    const double mean = seg.mean();
                    const double var = count > 1 ? (seg.array() - mean).square().sum() / static_cast<double>(count - 1) : 0.0;
                    return std::pair<double, double>{mean * 252.0, var * 252.0};
                };
                const auto [mu_l, var_l] = moments(long_only);
                const auto [mu_ls, var_ls] = moments(long_short);
                if (var_l > 0.0 && var_ls > 0.0) std::tie(by.w_long, by.w_long_short) = blended_weights(mu_l, var_l, mu_ls, var_ls);
            }
            run.years.push_back(by);
        }
        const auto& w = run.years.back();
        run.returns(k) = w.w_long * long_only(k) + w.w_long_short * long_short(k);
    }
    return run;
}

}  // namespace statarb::portfolio
