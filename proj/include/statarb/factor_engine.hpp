// Conditional factor model r_{k+1} = X_k f_k + e: daily cross-sectional OLS,
// residual-based measurement noise, and the online filter that turns
// realized returns into filtered ("fair value") returns.
//
// Timing per step k (no lookahead):
//   1. OLS of r_k on X_{k-1} gives f_hat_{k-1} and residuals.
//   2. The filter updates its belief about f_{k-1} against y = r_k, B = X_{k-1}.
//   3. r_filt_k = X_k f_filt_{k-1}.
//   4. The belief is pushed forward to f_k.
//   5. Residual and premium buffers absorb today's OLS output.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "statarb/errors.hpp"
#include "statarb/filters.hpp"
#include "statarb/random.hpp"
#include "statarb/transition.hpp"

namespace statarb::engine {

using filters::GaussianBelief;
using filters::Index;
using filters::Matrix;
using filters::Vector;

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kMinGramReciprocalCondition = 1e-10;
inline constexpr double kObsVarianceFloor = 1e-10;
/// Observation variance used when no asset has two residuals yet.
inline constexpr double kColdObsVariance = 1.0;

enum class Mode { OLS, KF, UKF };
enum class TransitionKind { Identity, NeuralAR };
enum class EstimateSource { OLS, KFFilter, UKFFilter, KFPredict, UKFPredict };

inline std::string to_string(Mode mode) {
    switch (mode) {
        case Mode::OLS: return "OLS";
        case Mode::KF: return "KF";
        case Mode::UKF: return "UKF";
    }
    return "?";
}

inline Mode parse_mode(const std::string& text) {
    std::string upper = text;
    std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
    if (upper == "OLS") return Mode::OLS;
    if (upper == "KF") return Mode::KF;
    if (upper == "UKF") return Mode::UKF;
    throw InvalidInput("unknown engine mode '" + text + "'");
}

struct FactorEstimate {
    Vector f_hat;      ///< m premia
    Vector residuals;  ///< n entries, NaN on masked rows
    EstimateSource source = EstimateSource::OLS;
};

inline bool row_finite(const Matrix& X, Index i) { return X.row(i).array().isFinite().all(); }

/// Rows usable for a regression of r on X: finite exposures and finite return.
inline std::vector<Index> valid_rows(const Matrix& X, const Vector& r) {
    std::vector<Index> rows;
    rows.reserve(static_cast<std::size_t>(X.rows()));
    for (Index i = 0; i < X.rows(); ++i) {
        if (std::isfinite(r(i)) && row_finite(X, i)) rows.push_back(i);
    }
    return rows;
}

inline Matrix take_rows(const Matrix& X, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), X.cols());
    for (std::size_t j = 0; j < rows.size(); ++j) out.row(static_cast<Index>(j)) = X.row(rows[j]);
    return out;
}

inline Vector take(const Vector& v, const std::vector<Index>& rows) {
    Vector out(static_cast<Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j) out(static_cast<Index>(j)) = v(rows[j]);
    return out;
}

/// Least-squares premia of r on the columns of X. Rows with a missing
/// exposure or return are dropped. `min_rows` defaults to m + 1.
inline FactorEstimate cross_sectional_ols(const Matrix& X, const Vector& r, Index min_rows = -1) {
    if (X.rows() != r.size()) throw InvalidInput("cross_sectional_ols: X rows != r length");
    const Index m = X.cols();
    if (m == 0) throw InvalidInput("cross_sectional_ols: no exposure columns");
    const auto rows = valid_rows(X, r);
    const Index n_valid = static_cast<Index>(rows.size());
    if (n_valid < (min_rows < 0 ? m + 1 : min_rows)) {
        throw InsufficientHistory("cross_sectional_ols: " + std::to_string(n_valid) + " valid rows for " +
                                  std::to_string(m) + " factors");
    }
    const Matrix Xv = take_rows(X, rows);
    const Vector rv = take(r, rows);

    const Matrix gram = Xv.transpose() * Xv;
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
    const double top = eig.eigenvalues().maxCoeff();
    const double rcond = top > 0.0 ? eig.eigenvalues().minCoeff() / top : 0.0;
    if (!(rcond >= kMinGramReciprocalCondition)) {
        // Column-pivoted QR orders columns by independence; whatever falls past
        // the numerical rank is a combination of the columns before it.
        Eigen::ColPivHouseholderQR<Matrix> qr(Xv);
        qr.setThreshold(std::sqrt(kMinGramReciprocalCondition));
        std::vector<std::size_t> dependent;
        for (Index j = qr.rank(); j < m; ++j) {
            dependent.push_back(static_cast<std::size_t>(qr.colsPermutation().indices()(j)));
        }
        std::sort(dependent.begin(), dependent.end());
        std::string names;
        for (auto c : dependent) names += (names.empty() ? "" : ",") + std::to_string(c);
        throw SingularDesign("cross_sectional_ols: collinear exposure columns {" + names + "}", dependent);
    }

    FactorEstimate est;
    est.f_hat = Xv.householderQr().solve(rv);
    est.residuals = Vector::Constant(X.rows(), kNaN);
    const Vector fitted = Xv * est.f_hat;
    for (std::size_t j = 0; j < rows.size(); ++j) {
        est.residuals(rows[j]) = rv(static_cast<Index>(j)) - fitted(static_cast<Index>(j));
    }
    return est;
}

/// Diagonal of the observation-noise covariance: per-asset sample variance
/// of the last min(window, available) residuals, floored. Assets with fewer
/// than two residuals take the median of the others.
template <typename Buffer>
Vector estimate_obs_cov(const std::vector<Buffer>& residual_history, Index window) {
    if (window < 2) throw InvalidInput("estimate_obs_cov: window must be >= 2");
    const Index n = static_cast<Index>(residual_history.size());
    Vector var = Vector::Constant(n, kNaN);
    std::vector<double> known;
    for (Index i = 0; i < n; ++i) {
        const auto& buf = residual_history[static_cast<std::size_t>(i)];
        const Index count = std::min<Index>(window, static_cast<Index>(buf.size()));
        if (count < 2) continue;
        auto first = buf.end() - count;
        double mean = 0.0;
        for (auto it = first; it != buf.end(); ++it) mean += *it;
        mean /= static_cast<double>(count);
        double ss = 0.0;
        for (auto it = first; it != buf.end(); ++it) ss += (*it - mean) * (*it - mean);
        var(i) = std::max(ss / static_cast<double>(count - 1), kObsVarianceFloor);
        known.push_back(var(i));
    }
    double fallback = kColdObsVariance;
    if (!known.empty()) {
        std::sort(known.begin(), known.end());
        const std::size_t mid = known.size() / 2;
        fallback = known.size() % 2 ? known[mid] : 0.5 * (known[mid - 1] + known[mid]);
    }
    for (Index i = 0; i < n; ++i) {
        if (std::isnan(var(i))) var(i) = fallback;
    }
    return var;
}

inline double median_of(std::vector<double> values) {
    if (values.empty()) return kNaN;
    std::sort(values.begin(), values.end());
    const std::size_t mid = values.size() / 2;
    return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

/// Per-column cross-sectional standardization over finite entries: clip at
/// median +- 3 robust sigmas (1.4826 MAD), then z-score with the sample std.
/// Rows with any missing exposure stay NaN.
inline Matrix standardize_exposures(const Matrix& X, double mad_clip = 3.0) {
    Matrix out = Matrix::Constant(X.rows(), X.cols(), kNaN);
    std::vector<Index> rows;
    for (Index i = 0; i < X.rows(); ++i) {
        if (row_finite(X, i)) rows.push_back(i);
    }
    if (rows.empty()) return out;
    for (Index c = 0; c < X.cols(); ++c) {
        std::vector<double> col;
        col.reserve(rows.size());
        for (Index i : rows) col.push_back(X(i, c));
        const double med = median_of(col);
        std::vector<double> dev;
        dev.reserve(col.size());
        for (double v : col) dev.push_back(std::abs(v - med));
        const double robust_sd = 1.4826 * median_of(dev);
        if (robust_sd > 0.0) {
            const double lo = med - mad_clip * robust_sd, hi = med + mad_clip * robust_sd;
            for (double& v : col) v = std::clamp(v, lo, hi);
        }
        double mean = 0.0;
        for (double v : col) mean += v;
        mean /= static_cast<double>(col.size());
        double ss = 0.0;
        for (double v : col) ss += (v - mean) * (v - mean);
        const double sd = col.size() > 1 ? std::sqrt(ss / static_cast<double>(col.size() - 1)) : 0.0;
        for (std::size_t j = 0; j < rows.size(); ++j) {
            out(rows[j], c) = sd > 0.0 ? (col[j] - mean) / sd : 0.0;
        }
    }
    return out;
}

struct EngineConfig {
    Mode mode = Mode::KF;
    /// UKF only; KF is always the identity random walk.
    TransitionKind transition = TransitionKind::NeuralAR;
    Index psi_window = 20;
    Index obs_window = 20;
    /// OLS-only days before the filter starts.
    Index cold_start = 21;
    double prior_mean = 0.0;
    double prior_var = 1.0;
    /// Multiplies the estimated observation variances.
    double obs_noise_scale = 1.0;
    /// Smallest usable cross-section; 0 means m + 1.
    Index min_cross_section = 0;
    bool intercept = false;
    filters::SigmaScaling scaling;
    transition::NeuralARConfig neural;
    /// Premia observations needed before the first network fit.
    Index neural_min_history = 252;
    /// Refit cadence in premia observations (one trading year).
    Index refit_interval = 252;
    /// Run the UKF measurement stage through sigma points with a dense n x n
    /// Omega instead of the equivalent information-form update.
    bool dense_ukf_measurement = false;
    std::uint64_t seed = 0;

    void validate() const {
        if (psi_window < 2) throw InvalidInput("engine: psi_window must be >= 2");
        if (obs_window < 2) throw InvalidInput("engine: obs_window must be >= 2");
        if (cold_start < 2) throw InvalidInput("engine: cold_start must be >= 2");
        if (!(prior_var > 0.0)) throw InvalidInput("engine: prior_var must be > 0");
        if (!(obs_noise_scale > 0.0)) throw InvalidInput("engine: obs_noise_scale must be > 0");
        if (neural.lags < 1) throw InvalidInput("engine: neural lags must be >= 1");
        if (neural_min_history <= neural.lags + 1) throw InvalidInput("engine: neural_min_history too small");
        if (refit_interval < 1) throw InvalidInput("engine: refit_interval must be >= 1");
    }
};

/// Everything the engine knows after one step.
struct StepOutput {
    Vector r_filt;  ///< n fair-value returns for date k, NaN where undefined
    Vector f_hat;   ///< OLS premia for k-1, NaN on a skip day
    Vector f_filt;  ///< premia behind r_filt
    Vector f_pred;  ///< predicted premia for k
    Vector psi;     ///< per-factor process noise used by the predict step
    double trace = kNaN;  ///< trace of the predicted state covariance
    bool skipped = false;
    bool filtering = false;
    EstimateSource source = EstimateSource::OLS;
};

class FactorEngine {
public:
    FactorEngine(Index n_assets, Index n_factors, EngineConfig config)
        : n_(n_assets), m_raw_(n_factors), config_(std::move(config)) {
        config_.validate();
        if (n_ < 1 || m_raw_ < 1) throw InvalidInput("engine: need at least one asset and one factor");
        m_ = m_raw_ + (config_.intercept ? 1 : 0);
        order_ = neural_mode() ? config_.neural.lags : 1;
        residuals_.resize(static_cast<std::size_t>(n_));
        models_.resize(static_cast<std::size_t>(m_));
    }

    Index factors() const { return m_; }
    Index state_dim() const { return m_ * order_; }
    const EngineConfig& config() const { return config_; }
    const std::optional<GaussianBelief>& belief() const { return belief_; }
    Index fits() const { return fit_count_; }

    /// Consume exposures X_k (n x m, NaN = missing) and returns r_k realized
    /// over [k-1, k] (n, NaN = missing).
    StepOutput step(const Matrix& X_in, const Vector& r) {
        if (X_in.rows() != n_ || X_in.cols() != m_raw_) throw InvalidInput("engine: exposure matrix shape mismatch");
        if (r.size() != n_) throw InvalidInput("engine: return vector length mismatch");
        const Matrix X = augment(X_in);

        StepOutput out;
        out.r_filt = Vector::Constant(n_, kNaN);
        out.f_hat = Vector::Constant(m_, kNaN);
        out.f_filt = Vector::Constant(m_, kNaN);
        out.f_pred = Vector::Constant(m_, kNaN);
        out.psi = Vector::Constant(m_, kNaN);

        if (!previous_) {
            previous_ = X;
            out.skipped = true;
            return out;
        }
        const Matrix& X_prev = *previous_;
        const Index min_rows = config_.min_cross_section > 0 ? config_.min_cross_section : m_ + 1;
        const auto rows = valid_rows(X_prev, r);
        const bool skip = static_cast<Index>(rows.size()) < min_rows;

        std::optional<FactorEstimate> ols;
        if (!skip) {
            ols = cross_sectional_ols(X_prev, r, min_rows);
            out.f_hat = ols->f_hat;
        }
        out.skipped = skip;

        const bool filter_mode = config_.mode != Mode::OLS;
        if (filter_mode && !belief_ && ols_days_ >= config_.cold_start && !skip) {
            belief_ = GaussianBelief{Vector::Constant(state_dim(), config_.prior_mean),
                                     config_.prior_var * Matrix::Identity(state_dim(), state_dim())};
        }

        if (belief_) {
            out.filtering = true;
            if (!skip) measurement_update(X_prev, r, rows);
            out.f_filt = select(belief_->mean);
            out.source = config_.mode == Mode::KF ? EstimateSource::KFFilter : EstimateSource::UKFFilter;
            if (!skip) out.r_filt = fair_value(X, out.f_filt);
            predict(out.psi);
            out.f_pred = select(belief_->mean);
            out.trace = belief_->cov.trace();
        } else if (!skip) {
            out.f_filt = ols->f_hat;
            out.f_pred = ols->f_hat;
            out.r_filt = fair_value(X, out.f_filt);
        }

        if (ols) absorb(*ols);
        previous_ = X;
        return out;
    }

private:
    bool neural_mode() const {
        return config_.mode == Mode::UKF && config_.transition == TransitionKind::NeuralAR;
    }

    Matrix augment(const Matrix& X) const {
        if (!config_.intercept) return X;
        Matrix out(X.rows(), X.cols() + 1);
        out << X, Vector::Ones(X.rows());
        return out;
    }

    /// First coordinate of each factor block.
    Vector select(const Vector& state) const {
        Vector f(m_);
        for (Index j = 0; j < m_; ++j) f(j) = state(j * order_);
        return f;
    }

    Matrix selector() const {
        Matrix S = Matrix::Zero(m_, state_dim());
        for (Index j = 0; j < m_; ++j) S(j, j * order_) = 1.0;
        return S;
    }

    Vector fair_value(const Matrix& X, const Vector& f) const {
        Vector out = Vector::Constant(n_, kNaN);
        for (Index i = 0; i < n_; ++i) {
            if (row_finite(X, i)) out(i) = X.row(i).dot(f);
        }
        return out;
    }

    void measurement_update(const Matrix& X_prev, const Vector& r, const std::vector<Index>& rows) {
        const Vector noise_all = config_.obs_noise_scale * estimate_obs_cov(residuals_, config_.obs_window);
        const Matrix Xv = take_rows(X_prev, rows);
        const Vector y = take(r, rows);
        const Vector noise = take(noise_all, rows);
        const Matrix B = order_ == 1 ? Xv : Matrix(Xv * selector());

        if (config_.mode == Mode::UKF && config_.dense_ukf_measurement) {
            const Matrix omega = noise.asDiagonal();
            belief_ = filters::ukf_update(*belief_, y, [&B](const Vector& x) -> Vector { return B * x; }, omega,
                                          config_.scaling)
                          .filtered;
        } else {
            belief_ = filters::kf_update_diagonal(*belief_, y, B, noise);
        }
    }

    /// Rolling diagonal Psi from premia increments; floor entries when there
    /// are fewer than two observations.
    Vector rolling_psi() const {
        const Index count = static_cast<Index>(fhat_history_.size());
        if (count < 2) return Vector::Constant(m_, transition::kStateCovFloor);
        const Index used = std::min<Index>(count, config_.psi_window + 1);
        Matrix history(used, m_);
        for (Index t = 0; t < used; ++t) history.row(t) = fhat_history_[static_cast<std::size_t>(count - used + t)];
        return transition::rolling_state_cov(history, config_.psi_window).diagonal();
    }

    void predict(Vector& psi_used) {
        const Vector rolling = rolling_psi();
        if (config_.mode == Mode::KF) {
            psi_used = rolling;
            belief_ = filters::kf_predict(*belief_, Matrix::Identity(m_, m_), Matrix(rolling.asDiagonal()));
            return;
        }
        if (!neural_mode()) {
            psi_used = rolling;
            belief_ = filters::ukf_predict(*belief_, transition::IdentityMap{}, Matrix(rolling.asDiagonal()),
                                           config_.scaling)
                          .predicted;
            return;
        }

        const Index M = order_;
        auto state_map = [this, M](const Vector& x) -> Vector {
            Vector out(x.size());
            for (Index j = 0; j < m_; ++j) {
                const auto block = x.segment(j * M, M);
                const auto& model = models_[static_cast<std::size_t>(j)];
                out(j * M) = model ? model->predict(Vector(block)).mean : block(0);
                out.segment(j * M + 1, M - 1) = block.head(M - 1);
            }
            return out;
        };
        auto noise = [this, M, &rolling, &psi_used](const filters::SigmaSet& drawn) -> Matrix {
            Matrix q = Matrix::Zero(drawn.points.rows(), drawn.points.rows());
            for (Index j = 0; j < m_; ++j) {
                const auto& model = models_[static_cast<std::size_t>(j)];
                const double v = model ? transition::aleatoric_psi(*model, drawn.points.middleRows(j * M, M), drawn.wm)
                                       : rolling(j);
                q(j * M, j * M) = v;
                psi_used(j) = v;
            }
            return q;
        };
        belief_ = filters::ukf_predict(*belief_, state_map, noise, config_.scaling).predicted;
    }

    void absorb(const FactorEstimate& ols) {
        for (Index i = 0; i < n_; ++i) {
            const double e = ols.residuals(i);
            if (!std::isfinite(e)) continue;
            auto& buf = residuals_[static_cast<std::size_t>(i)];
            buf.push_back(e);
            while (static_cast<Index>(buf.size()) > config_.obs_window) buf.pop_front();
        }
        ++ols_days_;
        fhat_history_.push_back(ols.f_hat);
        if (!neural_mode()) {
            // Only the Psi window is ever read.
            while (static_cast<Index>(fhat_history_.size()) > config_.psi_window + 1) fhat_history_.pop_front();
            return;
        }
        const Index count = static_cast<Index>(fhat_history_.size());
        const bool due = fit_count_ == 0 ? count >= config_.neural_min_history
                                         : count - last_fit_size_ >= config_.refit_interval;
        if (due) refit();
    }

    void refit() {
        const Index count = static_cast<Index>(fhat_history_.size());
        std::vector<double> series(static_cast<std::size_t>(count));
        for (Index j = 0; j < m_; ++j) {
            for (Index t = 0; t < count; ++t) series[static_cast<std::size_t>(t)] = fhat_history_[static_cast<std::size_t>(t)](j);
            transition::NeuralARConfig cfg = config_.neural;
            cfg.seed = derive_seed(config_.seed, static_cast<std::uint64_t>(1000 * fit_count_ + j));
            models_[static_cast<std::size_t>(j)] =
                std::make_shared<const transition::NeuralARModel>(transition::neural_fit(series, cfg));
        }
        ++fit_count_;
        last_fit_size_ = count;
    }

    Index n_;
    Index m_raw_;
    Index m_ = 0;
    Index order_ = 1;
    EngineConfig config_;
    std::optional<Matrix> previous_;
    std::optional<GaussianBelief> belief_;
    std::vector<std::deque<double>> residuals_;
    std::deque<Vector> fhat_history_;
    std::vector<std::shared_ptr<const transition::NeuralARModel>> models_;
    Index ols_days_ = 0;
    Index fit_count_ = 0;
    Index last_fit_size_ = 0;
};

/// Full-panel sweep. `exposures[k]` is X_k and row k of `returns` is r_k.
struct EngineRun {
    Matrix r_filt;  ///< T x n
    std::vector<StepOutput> steps;
};

inline EngineRun run_engine(const std::vector<Matrix>& exposures, const Matrix& returns, const EngineConfig& config,
                            bool keep_steps = true) {
    const Index T = returns.rows();
    if (static_cast<Index>(exposures.size()) != T) throw InvalidInput("run_engine: exposures/returns length mismatch");
    if (T == 0) return {};
    FactorEngine engine(returns.cols(), exposures.front().cols(), config);
    EngineRun run;
    run.r_filt.resize(T, returns.cols());
    if (keep_steps) run.steps.reserve(static_cast<std::size_t>(T));
    for (Index k = 0; k < T; ++k) {
        StepOutput out = engine.step(exposures[static_cast<std::size_t>(k)], returns.row(k).transpose());
        run.r_filt.row(k) = out.r_filt.transpose();
        if (keep_steps) run.steps.push_back(std::move(out));
    }
    return run;
}

/// Per-day diagnostics: date, then per factor f_hat, f_filt, f_pred, psi,
/// then the predicted-covariance trace. Missing values print as nan.
inline void write_diagnostics_csv(std::ostream& os, const std::vector<std::string>& dates,
                                  const std::vector<StepOutput>& steps) {
    if (dates.size() != steps.size()) throw InvalidInput("write_diagnostics_csv: dates/steps length mismatch");
    const Index m = steps.empty() ? 0 : steps.front().f_hat.size();
    os << "date";
    for (const char* field : {"f_hat", "f_filt", "f_pred", "psi"}) {
        for (Index j = 0; j < m; ++j) os << ',' << field << '_' << j;
    }
    os << ",trace\n";
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << ',' << buf;
    };
    for (std::size_t t = 0; t < steps.size(); ++t) {
        const auto& s = steps[t];
        os << dates[t];
        for (const Vector* v : {&s.f_hat, &s.f_filt, &s.f_pred, &s.psi}) {
            for (Index j = 0; j < m; ++j) put((*v)(j));
        }
        put(s.trace);
        os << '\n';
    }
}

}  // namespace statarb::engine
