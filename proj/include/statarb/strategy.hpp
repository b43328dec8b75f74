// Mean-reversion signals: rolling spread of realized over filtered returns,
// its trailing z-score, and the per-asset position state machine.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "statarb/errors.hpp"
#include "statarb/filters.hpp"

namespace statarb::strategy {

using filters::Index;
using filters::Matrix;
using filters::Vector;
using PositionMatrix = Eigen::MatrixXi;
using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kStdFloor = 1e-8;

struct StrategyParams {
    Index ws = 5;
    double long_z = 1.0;
    double short_z = 1.0;
    /// Trailing window for the z-score mean and std. Not pinned down by the
    /// method; 60 days is a default, not a finding.
    Index z_window = 60;
    double exit_level = 0.0;

    void validate() const {
        if (ws < 1) throw InvalidInput("strategy: WS must be >= 1");
        if (!(long_z > 0.0) || !(short_z > 0.0)) throw InvalidInput("strategy: entry thresholds must be > 0");
        if (z_window < 5) throw InvalidInput("strategy: z_window must be >= 5");
    }
};

struct PositionState {
    int side = 0;
    Index entry_date = -1;
    double entry_z = kNaN;
};

/// s_k = sum over the last WS days of (r - r_filt); NaN until WS defined
/// terms are available or when one of them is missing.
inline Matrix spread(const Matrix& returns, const Matrix& filtered, Index ws) {
    if (returns.rows() != filtered.rows() || returns.cols() != filtered.cols()) {
        throw InvalidInput("spread: returns and filtered returns differ in shape");
    }
    if (ws < 1) throw InvalidInput("spread: WS must be >= 1");
    const Index T = returns.rows(), n = returns.cols();
    Matrix out = Matrix::Constant(T, n, kNaN);
    for (Index i = 0; i < n; ++i) {
        for (Index k = ws - 1; k < T; ++k) {
            double sum = 0.0;
            for (Index j = k - ws + 1; j <= k; ++j) sum += returns(j, i) - filtered(j, i);
            out(k, i) = sum;  // NaN propagates
        }
    }
    return out;
}

/// z_k = (s_k - mean) / max(std, 1e-8) over the trailing z_window spreads
/// ending at k (sample std); NaN unless all of them are defined.
inline Matrix zscore(const Matrix& spreads, Index z_window) {
    if (z_window < 2) throw InvalidInput("zscore: window must be >= 2");
    const Index T = spreads.rows(), n = spreads.cols();
    Matrix out = Matrix::Constant(T, n, kNaN);
    for (Index i = 0; i < n; ++i) {
        for (Index k = z_window - 1; k < T; ++k) {
            const auto window = spreads.col(i).segment(k - z_window + 1, z_window);
            if (!window.allFinite()) continue;
            // Centred on s_k so a flat window gives exactly zero.
            const Eigen::ArrayXd dev = window.array() - spreads(k, i);
            const double offset = dev.mean();
            const double sd = std::sqrt((dev - offset).square().sum() / static_cast<double>(z_window - 1));
            out(k, i) = -offset / std::max(sd, kStdFloor);
        }
    }
    return out;
}

/// One close-of-day decision. Priority: delisting, year-end closeout, entry
/// from flat, exit on reversion through `exit_level`. A close is never
/// followed by a same-day entry. Closeouts apply even when z is undefined;
/// otherwise an undefined z holds the state. `can_enter` gates new entries
/// (universe membership).
inline PositionState step_position(const PositionState& state, double z, bool last_day_of_year, bool delists_next,
                                   const StrategyParams& params, Index date = -1, bool can_enter = true) {
    if (delists_next || last_day_of_year) return {};
    if (std::isnan(z)) return state;
    if (state.side == 0) {
        if (!can_enter) return state;
        if (z <= -params.long_z) return {+1, date, z};
        if (z >= params.short_z) return {-1, date, z};
        return state;
    }
    if (state.side > 0 && z >= params.exit_level) return {};
    if (state.side < 0 && z <= params.exit_level) return {};
    return state;
}

/// b_{i,k} = sum of the last `window` returns of asset i minus the mean of
/// that sum over assets with a full window.
inline Matrix benchmark_spread(const Matrix& total_returns, Index window = 10) {
    if (window < 1) throw InvalidInput("benchmark_spread: window must be >= 1");
    const Index T = total_returns.rows(), n = total_returns.cols();
    Matrix out = Matrix::Constant(T, n, kNaN);
    for (Index k = window - 1; k < T; ++k) {
        double total = 0.0;
        Index valid = 0;
        for (Index i = 0; i < n; ++i) {
            const double sum = total_returns.col(i).segment(k - window + 1, window).sum();
            if (std::isfinite(sum)) {
                out(k, i) = sum;
                total += sum;
                ++valid;
            }
        }
        if (valid == 0) continue;
        const double mean = total / static_cast<double>(valid);
        for (Index i = 0; i < n; ++i) {
            if (std::isfinite(out(k, i))) out(k, i) -= mean;
        }
    }
    return out;
}

enum class SignalMode { Model, Benchmark };

struct SignalInputs {
    /// Realized returns: excess returns for the model spread, total returns
    /// for the benchmark.
    const Matrix* returns = nullptr;
    /// Filtered returns (model mode only).
    const Matrix* filtered = nullptr;
    std::vector<bool> last_day_of_year;
    const BoolMatrix* delists_next = nullptr;
    /// Entry permission per asset-day; all allowed when null.
    const BoolMatrix* can_enter = nullptr;
    Index benchmark_window = 10;
};

struct SignalRun {
    Matrix spread;
    Matrix z;
    PositionMatrix positions;  ///< T x n in {-1, 0, +1}, held from the close of k
};

/// Full-panel sweep: spreads, z-scores, then the state machine day by day.
inline SignalRun run_signals(const SignalInputs& in, const StrategyParams& params, SignalMode mode) {
    params.validate();
    if (in.returns == nullptr) throw InvalidInput("run_signals: returns missing");
    const Index T = in.returns->rows(), n = in.returns->cols();
    if (static_cast<Index>(in.last_day_of_year.size()) != T) throw InvalidInput("run_signals: calendar length mismatch");
    if (in.delists_next && (in.delists_next->rows() != T || in.delists_next->cols() != n)) {
        throw InvalidInput("run_signals: delisting mask shape mismatch");
    }
    if (in.can_enter && (in.can_enter->rows() != T || in.can_enter->cols() != n)) {
        throw InvalidInput("run_signals: entry mask shape mismatch");
    }

    SignalRun run;
    if (mode == SignalMode::Model) {
        if (in.filtered == nullptr) throw InvalidInput("run_signals: model mode needs filtered returns");
        run.spread = spread(*in.returns, *in.filtered, params.ws);
    } else {
        run.spread = benchmark_spread(*in.returns, in.benchmark_window);
    }
    run.z = zscore(run.spread, params.z_window);
    run.positions = PositionMatrix::Zero(T, n);
    for (Index i = 0; i < n; ++i) {
        PositionState state;
        for (Index k = 0; k < T; ++k) {
            const bool delist = in.delists_next && (*in.delists_next)(k, i);
            const bool enter = !in.can_enter || (*in.can_enter)(k, i);
            state = step_position(state, run.z(k, i), in.last_day_of_year[static_cast<std::size_t>(k)], delist, params,
                                  k, enter);
            run.positions(k, i) = state.side;
        }
    }
    return run;
}

/// signals CSV: date,asset_id,spread,z,position for rows where `present`
/// holds (every row when null).
inline void write_signals_csv(std::ostream& os, const std::vector<std::string>& dates,
                              const std::vector<std::string>& assets, const SignalRun& run,
                              const BoolMatrix* present = nullptr) {
    os << "date,asset_id,spread,z,position\n";
    char buf[64];
    auto num = [&buf](double v) -> const char* {
        if (!std::isfinite(v)) return "";
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return buf;
    };
    for (Index k = 0; k < run.positions.rows(); ++k) {
        for (Index i = 0; i < run.positions.cols(); ++i) {
            if (present && !(*present)(k, i)) continue;
            os << dates[static_cast<std::size_t>(k)] << ',' << assets[static_cast<std::size_t>(i)] << ',';
            os << num(run.spread(k, i)) << ',';
            os << num(run.z(k, i)) << ',' << run.positions(k, i) << '\n';
        }
    }
}

}  // namespace statarb::strategy
