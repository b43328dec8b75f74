#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <sstream>
#include <vector>

#include "statarb/factor_engine.hpp"
#include "statarb/market_data.hpp"
#include "test_util.hpp"

namespace statarb::engine {
namespace {

using testing::random_matrix;
using testing::random_vector;

// ------------------------------------------------------------------ OLS

TEST(CrossSectionalOls, SquareIdentityDesignReturnsTarget) {
    Rng rng(1);
    const Vector r = random_vector(rng, 4);
    const auto est = cross_sectional_ols(Matrix::Identity(4, 4), r, 4);
    EXPECT_LT((est.f_hat - r).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT(est.residuals.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(CrossSectionalOls, NoiselessRecovery) {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix X = random_matrix(rng, 60, 4);
        const Vector f = random_vector(rng, 4, 0.01);
        EXPECT_LT((cross_sectional_ols(X, X * f).f_hat - f).cwiseAbs().maxCoeff(), 1e-10);
    }
}

// Sampling theory: f_hat - f ~ N(0, sigma^2 (X'X)^-1), so each coordinate
// lands inside 3 standard errors with probability 0.9973.
TEST(CrossSectionalOls, MonteCarloCoverageMatchesSamplingTheory) {
    Rng rng(3);
    const double sigma = 0.02;
    int inside = 0, total = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const Matrix X = random_matrix(rng, 500, 4);
        const Vector f = random_vector(rng, 4, 0.01);
        const Vector r = X * f + random_vector(rng, 500, sigma);
        const auto est = cross_sectional_ols(X, r);
        const Matrix inv = (X.transpose() * X).fullPivLu().inverse();
        for (Index j = 0; j < 4; ++j) {
            inside += std::abs(est.f_hat(j) - f(j)) <= 3.0 * sigma * std::sqrt(inv(j, j));
            ++total;
        }
    }
    EXPECT_GE(static_cast<double>(inside) / total, 0.99);
}

TEST(CrossSectionalOls, ResidualsOrthogonalToExposures) {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix X = random_matrix(rng, 80, 5);
        const Vector r = random_vector(rng, 80, 0.03);
        const auto est = cross_sectional_ols(X, r);
        EXPECT_LE((X.transpose() * est.residuals).cwiseAbs().maxCoeff(), 1e-8 * r.norm());
    }
}

TEST(CrossSectionalOls, MaskedRowsAreDropped) {
    Rng rng(5);
    Matrix X = random_matrix(rng, 30, 3);
    const Vector f = random_vector(rng, 3);
    Vector r = X * f;
    r(2) = kNaN;
    X(7, 1) = kNaN;
    r(7) = 1e6;  // would wreck the fit if row 7 were used
    const auto est = cross_sectional_ols(X, r);
    EXPECT_LT((est.f_hat - f).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_TRUE(std::isnan(est.residuals(2)));
    EXPECT_TRUE(std::isnan(est.residuals(7)));
}

TEST(CrossSectionalOls, CollinearColumnsAreNamed) {
    Rng rng(6);
    Matrix X = random_matrix(rng, 40, 4);
    X.col(3) = 2.0 * X.col(1);
    try {
        cross_sectional_ols(X, random_vector(rng, 40));
        FAIL() << "expected SingularDesign";
    } catch (const SingularDesign& e) {
        ASSERT_EQ(e.columns().size(), 1u);
        EXPECT_TRUE(e.columns()[0] == 1 || e.columns()[0] == 3);
        EXPECT_NE(std::string(e.what()).find("collinear"), std::string::npos);
    }
}

TEST(CrossSectionalOls, TooFewRowsIsInsufficientHistory) {
    Rng rng(7);
    EXPECT_THROW(cross_sectional_ols(random_matrix(rng, 4, 4), random_vector(rng, 4)), InsufficientHistory);
    EXPECT_THROW(cross_sectional_ols(random_matrix(rng, 4, 4), random_vector(rng, 5)), InvalidInput);
}

// ------------------------------------------------------- observation noise

TEST(EstimateObsCov, ConstantResidualsGiveFloors) {
    const std::vector<std::vector<double>> hist(5, std::vector<double>(20, 0.3));
    const Vector d = estimate_obs_cov(hist, 20);
    for (Index i = 0; i < d.size(); ++i) EXPECT_EQ(d(i), kObsVarianceFloor);
}

TEST(EstimateObsCov, WindowedSampleVarianceMatchesDirectComputation) {
    Rng rng(8);
    std::vector<std::deque<double>> hist(3);
    for (auto& buf : hist) {
        for (int t = 0; t < 35; ++t) buf.push_back(rng.normal());
    }
    const Vector d = estimate_obs_cov(hist, 20);
    for (std::size_t i = 0; i < hist.size(); ++i) {
        const std::vector<double> tail(hist[i].end() - 20, hist[i].end());
        double mean = 0.0, ss = 0.0;
        for (double x : tail) mean += x / 20.0;
        for (double x : tail) ss += (x - mean) * (x - mean);
        EXPECT_NEAR(d(static_cast<Index>(i)), ss / 19.0, 1e-14);
    }
}

// Sample variance with df = 19 of N(0, 4e-4) data: the chi-square 2.5% and
// 97.5% quantiles give roughly [2.1e-4, 6.9e-4], well inside the band.
TEST(EstimateObsCov, IidResidualsLandInChiSquareBand) {
    int inside = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(100 + seed);
        std::vector<std::vector<double>> hist(200);
        for (auto& buf : hist) {
            for (int t = 0; t < 20; ++t) buf.push_back(rng.normal(0.0, 0.02));
        }
        const Vector d = estimate_obs_cov(hist, 20);
        for (Index i = 0; i < d.size(); ++i) {
            inside += d(i) >= 1e-4 && d(i) <= 1.2e-3;
            ++total;
        }
    }
    EXPECT_GE(static_cast<double>(inside) / total, 0.95);
}

TEST(EstimateObsCov, ShortHistoryTakesMedianOfOthers) {
    std::vector<std::vector<double>> hist{{0.0, 2.0}, {0.0, 4.0}, {0.0, 6.0}, {1.0}};
    const Vector d = estimate_obs_cov(hist, 20);
    // variances 2, 8, 18 -> median 8
    EXPECT_DOUBLE_EQ(d(3), 8.0);
    EXPECT_DOUBLE_EQ(d(0), 2.0);
}

// -------------------------------------------------------- standardization

TEST(StandardizeExposures, ZScoresEachColumnAndKeepsMissingRows) {
    Rng rng(9);
    Matrix X = random_matrix(rng, 50, 3);
    X(4, 2) = kNaN;
    const Matrix Z = standardize_exposures(X);
    EXPECT_TRUE(Z.row(4).array().isNaN().all());
    for (Index c = 0; c < 3; ++c) {
        std::vector<double> col;
        for (Index i = 0; i < 50; ++i) {
            if (i != 4) col.push_back(Z(i, c));
        }
        double mean = 0.0, ss = 0.0;
        for (double v : col) mean += v / static_cast<double>(col.size());
        for (double v : col) ss += (v - mean) * (v - mean);
        EXPECT_NEAR(mean, 0.0, 1e-12);
        EXPECT_NEAR(std::sqrt(ss / static_cast<double>(col.size() - 1)), 1.0, 1e-12);
    }
}

TEST(StandardizeExposures, OutlierIsClippedBeforeScoring) {
    Matrix X(7, 1);
    X << 1, 2, 3, 4, 5, 6, 1000;
    const Matrix Z = standardize_exposures(X);
    // median 4, MAD 2 -> clip at 4 + 3 * 1.4826 * 2
    Matrix clipped = X;
    clipped(6, 0) = 4.0 + 3.0 * 1.4826 * 2.0;
    const double mean = clipped.mean();
    const double sd = std::sqrt((clipped.array() - mean).square().sum() / 6.0);
    EXPECT_NEAR(Z(6, 0), (clipped(6, 0) - mean) / sd, 1e-12);
}

// ----------------------------------------------------------------- engine

struct Panel {
    std::vector<Matrix> X;
    Matrix r;
    Matrix f;
};

Panel to_panel(const market::SynthPanel& s) {
    Panel p;
    p.X = s.exposures;
    p.r.resize(s.panel.days(), s.panel.width());
    for (Index k = 0; k < s.panel.days(); ++k) {
        for (Index i = 0; i < s.panel.width(); ++i) p.r(k, i) = s.panel.excess(k, i);
    }
    p.f = s.true_f;
    return p;
}

Panel synth(Index n, Index m, Index days, double sigma_r, std::uint64_t seed, double sigma_f = 0.001) {
    market::SynthConfig cfg;
    cfg.assets = n;
    cfg.factors = m;
    cfg.days = days;
    cfg.sigma_r = sigma_r;
    cfg.sigma_f = sigma_f;
    cfg.seed = seed;
    return to_panel(market::synth_generate(cfg));
}

EngineConfig kf_config() {
    EngineConfig cfg;
    cfg.mode = Mode::KF;
    return cfg;
}

EngineConfig ukf_identity_config() {
    EngineConfig cfg;
    cfg.mode = Mode::UKF;
    cfg.transition = TransitionKind::Identity;
    return cfg;
}

EngineConfig ukf_neural_config() {
    EngineConfig cfg;
    cfg.mode = Mode::UKF;
    cfg.transition = TransitionKind::NeuralAR;
    cfg.neural.lags = 3;
    cfg.neural.hidden = 8;
    cfg.neural.epochs = 60;
    cfg.neural_min_history = 60;
    cfg.refit_interval = 40;
    cfg.seed = 5;
    return cfg;
}

TEST(Engine, ZeroNoiseSquareDesignPinsToOlsSolution) {
    Rng rng(10);
    const Index n = 3, T = 60;
    std::vector<Matrix> X;
    Matrix r = Matrix::Zero(T, n);
    Vector f = random_vector(rng, n, 0.01);
    for (Index k = 0; k < T; ++k) {
        X.push_back(random_matrix(rng, n, n) + 3.0 * Matrix::Identity(n, n));
        if (k > 0) r.row(k) = (X[k - 1] * f).transpose();  // r_k from f_{k-1}
        if (k > 0) f += random_vector(rng, n, 0.001);
    }

    // Residuals are exactly zero, so D sits at its floor; scaling it down
    // takes the measurement-noise limit rather than stopping at the floor.
    EngineConfig cfg = kf_config();
    cfg.min_cross_section = n;
    cfg.obs_noise_scale = 1e-6;
    const auto run = run_engine(X, r, cfg);
    for (Index k = cfg.cold_start + 2; k < T; ++k) {
        const Vector expected = X[k] * X[k - 1].partialPivLu().solve(Vector(r.row(k).transpose()));
        ASSERT_TRUE(run.steps[k].filtering);
        EXPECT_LT((run.r_filt.row(k).transpose() - expected).cwiseAbs().maxCoeff(), 1e-6) << "day " << k;
    }
}

TEST(Engine, NoiselessOverdeterminedPanelTracksTruePremia) {
    const Panel p = synth(20, 3, 80, 0.0, 12);
    const auto run = run_engine(p.X, p.r, kf_config());
    for (Index k = 30; k < 80; ++k) {
        const Vector expected = p.X[k] * p.f.row(k - 1).transpose();
        EXPECT_LT((run.r_filt.row(k).transpose() - expected).cwiseAbs().maxCoeff(), 1e-6) << "day " << k;
    }
}

double premia_rmse(const EngineRun& run, const Matrix& f, bool filtered, Index from) {
    double ss = 0.0;
    Index count = 0;
    for (Index k = from; k < f.rows(); ++k) {
        const Vector& est = filtered ? run.steps[k].f_filt : run.steps[k].f_hat;
        ss += (est - f.row(k - 1).transpose()).squaredNorm();
        count += est.size();
    }
    return std::sqrt(ss / static_cast<double>(count));
}

TEST(Engine, KalmanTrackingBeatsDailyOls) {
    const Panel p = synth(100, 4, 1000, 0.02, 13);
    const auto run = run_engine(p.X, p.r, kf_config());
    const double kf = premia_rmse(run, p.f, true, 50);
    const double ols = premia_rmse(run, p.f, false, 50);
    EXPECT_LE(kf, 0.9 * ols) << "kf " << kf << " ols " << ols;
}

TEST(Engine, ReplayIsBitIdentical) {
    const Panel p = synth(30, 3, 150, 0.02, 14);
    for (const auto& cfg : {kf_config(), ukf_neural_config()}) {
        const auto a = run_engine(p.X, p.r, cfg);
        const auto b = run_engine(p.X, p.r, cfg);
        ASSERT_EQ(a.r_filt.rows(), b.r_filt.rows());
        for (Index i = 0; i < a.r_filt.size(); ++i) {
            const double x = a.r_filt.data()[i], y = b.r_filt.data()[i];
            ASSERT_TRUE((std::isnan(x) && std::isnan(y)) || x == y);
        }
    }
}

bool same_prefix(const Matrix& full, const Matrix& part) {
    for (Index k = 0; k < part.rows(); ++k) {
        for (Index i = 0; i < part.cols(); ++i) {
            const double x = full(k, i), y = part(k, i);
            if (!((std::isnan(x) && std::isnan(y)) || x == y)) return false;
        }
    }
    return true;
}

TEST(Engine, TruncatingThePanelLeavesEarlierOutputsUnchanged) {
    const Panel p = synth(30, 3, 160, 0.02, 15);
    for (const auto& cfg : {kf_config(), ukf_identity_config(), ukf_neural_config()}) {
        const auto full = run_engine(p.X, p.r, cfg, false);
        for (Index cut : {25, 90, 130}) {
            const std::vector<Matrix> X(p.X.begin(), p.X.begin() + cut);
            const auto part = run_engine(X, p.r.topRows(cut), cfg, false);
            EXPECT_TRUE(same_prefix(full.r_filt, part.r_filt)) << "cut " << cut;
        }
    }
}

TEST(Engine, KalmanAndUnscentedAgreeUnderIdentityTransition) {
    const Panel p = synth(40, 4, 200, 0.02, 16);
    const auto kf = run_engine(p.X, p.r, kf_config());
    const auto ukf = run_engine(p.X, p.r, ukf_identity_config());
    double worst = 0.0;
    for (Index i = 0; i < kf.r_filt.size(); ++i) {
        const double x = kf.r_filt.data()[i], y = ukf.r_filt.data()[i];
        if (std::isnan(x) || std::isnan(y)) {
            ASSERT_TRUE(std::isnan(x) && std::isnan(y));
            continue;
        }
        worst = std::max(worst, std::abs(x - y));
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(Engine, DenseSigmaPointMeasurementMatchesInformationForm) {
    const Panel p = synth(12, 2, 60, 0.02, 17);
    EngineConfig dense = ukf_identity_config();
    dense.dense_ukf_measurement = true;
    const auto a = run_engine(p.X, p.r, ukf_identity_config());
    const auto b = run_engine(p.X, p.r, dense);
    for (Index k = 30; k < 60; ++k) {
        EXPECT_LT((a.steps[k].f_filt - b.steps[k].f_filt).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Engine, HugeMeasurementNoiseFreezesPremiaAtPrior) {
    const Panel p = synth(30, 3, 120, 0.02, 18);
    EngineConfig cfg = kf_config();
    cfg.obs_noise_scale = 1e12;
    cfg.prior_mean = 0.002;
    const auto run = run_engine(p.X, p.r, cfg);
    for (Index k = 40; k < 120; ++k) {
        ASSERT_TRUE(run.steps[k].filtering);
        EXPECT_LT((run.steps[k].f_filt.array() - 0.002).abs().maxCoeff(), 1e-6);
        const Vector expected = p.X[k] * Vector::Constant(3, 0.002);
        EXPECT_LT((run.r_filt.row(k).transpose() - expected).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Engine, SkipDayEmitsNoSignalButStillPredicts) {
    Panel p = synth(10, 3, 60, 0.02, 19);
    for (Index i = 3; i < 10; ++i) p.X[39](i, 0) = kNaN;  // 3 valid rows for 3 factors at X_39
    const auto run = run_engine(p.X, p.r, kf_config());
    const auto& skip = run.steps[40];
    EXPECT_TRUE(skip.skipped);
    EXPECT_TRUE(skip.r_filt.array().isNaN().all());
    EXPECT_TRUE(skip.f_hat.array().isNaN().all());
    EXPECT_GT(skip.trace, run.steps[39].trace);
    EXPECT_FALSE(run.steps[41].skipped);
    EXPECT_TRUE(run.r_filt.row(41).array().isFinite().all());
}

TEST(Engine, MissingExposureRowGetsNoFairValue) {
    Panel p = synth(10, 2, 50, 0.02, 20);
    p.X[45](4, 1) = kNaN;
    const auto run = run_engine(p.X, p.r, kf_config());
    EXPECT_TRUE(std::isnan(run.r_filt(45, 4)));
    EXPECT_TRUE(std::isfinite(run.r_filt(45, 3)));
    EXPECT_FALSE(run.steps[46].skipped);
}

TEST(Engine, OlsModeUsesLatestCrossSection) {
    const Panel p = synth(25, 3, 40, 0.02, 21);
    EngineConfig cfg;
    cfg.mode = Mode::OLS;
    const auto run = run_engine(p.X, p.r, cfg);
    for (Index k = 1; k < 40; ++k) {
        const auto est = cross_sectional_ols(p.X[k - 1], p.r.row(k).transpose());
        EXPECT_LT((run.r_filt.row(k).transpose() - p.X[k] * est.f_hat).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(Engine, NeuralTransitionFitsAndStaysFinite) {
    const Panel p = synth(30, 2, 200, 0.02, 22);
    EngineConfig cfg = ukf_neural_config();
    FactorEngine engine(30, 2, cfg);
    EXPECT_EQ(engine.state_dim(), 2 * cfg.neural.lags);
    for (Index k = 0; k < 200; ++k) {
        const auto out = engine.step(p.X[k], p.r.row(k).transpose());
        if (out.filtering) {
            ASSERT_TRUE(out.f_filt.allFinite());
            ASSERT_TRUE((out.psi.array() > 0.0).all());
            ASSERT_TRUE(engine.belief()->mean.allFinite());
        }
    }
    EXPECT_GE(engine.fits(), 3);
}

TEST(Engine, InterceptAddsAColumn) {
    const Panel p = synth(20, 2, 40, 0.02, 23);
    EngineConfig cfg = kf_config();
    cfg.intercept = true;
    FactorEngine engine(20, 2, cfg);
    EXPECT_EQ(engine.factors(), 3);
    const auto run = run_engine(p.X, p.r, cfg);
    EXPECT_EQ(run.steps.back().f_filt.size(), 3);
}

TEST(Engine, RejectsBadShapesAndConfig) {
    FactorEngine engine(5, 2, kf_config());
    EXPECT_THROW(engine.step(Matrix::Zero(4, 2), Vector::Zero(5)), InvalidInput);
    EXPECT_THROW(engine.step(Matrix::Zero(5, 2), Vector::Zero(4)), InvalidInput);
    EngineConfig bad = kf_config();
    bad.prior_var = 0.0;
    EXPECT_THROW(FactorEngine(5, 2, bad), InvalidInput);
    EXPECT_THROW(parse_mode("PCA"), InvalidInput);
    EXPECT_EQ(parse_mode("ukf"), Mode::UKF);
}

TEST(Engine, DiagnosticsCsvHasOneRowPerDay) {
    const Panel p = synth(10, 2, 30, 0.02, 24);
    const auto run = run_engine(p.X, p.r, kf_config());
    std::vector<std::string> dates;
    for (int k = 0; k < 30; ++k) dates.push_back("d" + std::to_string(k));
    std::ostringstream os;
    write_diagnostics_csv(os, dates, run.steps);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "date,f_hat_0,f_hat_1,f_filt_0,f_filt_1,f_pred_0,f_pred_1,psi_0,psi_1,trace");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 30);
}

}  // namespace
}  // namespace statarb::engine
