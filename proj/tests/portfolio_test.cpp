#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "statarb/portfolio.hpp"
#include "test_util.hpp"

namespace statarb::portfolio {
namespace {

using testing::random_matrix;

int ternary(Rng& rng) { return static_cast<int>(rng.uniform() * 3.0) - 1; }

LedgerEntry day(const std::vector<int>& held, const std::vector<int>& traded, const std::vector<double>& r,
                const CostModel& model, double rf = 0.0, const std::vector<double>* betas = nullptr,
                double index = 0.0) {
    PeriodInputs in{held.data(), traded.data(), r.data(), betas ? betas->data() : nullptr,
                    static_cast<Index>(held.size()), rf, index};
    return period_return(in, model);
}

CostModel no_hedge(double tc = 0.0) {
    CostModel m;
    m.tc_bps = tc;
    m.hedge = false;
    return m;
}

TEST(PeriodReturn, SingleLongEarnsTheAssetReturn) {
    const auto e = day({1}, {1}, {0.0123}, no_hedge());
    EXPECT_EQ(e.net_excess, 0.0123);
    EXPECT_EQ(e.pi, 1.0);
    EXPECT_EQ(e.cost, 0.0);
}

TEST(PeriodReturn, LongShortOnIdenticalAssetsIsFlat) {
    const auto e = day({1, -1}, {1, -1}, {0.031, 0.031}, no_hedge());
    EXPECT_EQ(e.net_excess, 0.0);
    EXPECT_EQ(e.l, 1);
    EXPECT_EQ(e.s, 1);
}

TEST(PeriodReturn, RoundTripCostsTenBasisPoints) {
    const auto model = no_hedge(5.0);
    const auto enter = day({0}, {1}, {0.0}, model);
    const auto exit = day({1}, {0}, {0.0}, model);
    EXPECT_DOUBLE_EQ(enter.net_excess, -5e-4);
    EXPECT_DOUBLE_EQ(exit.net_excess, -5e-4);
    EXPECT_DOUBLE_EQ(enter.net_excess + exit.net_excess, -1e-3);
}

TEST(PeriodReturn, DegenerateDayIsExactlyZero) {
    const auto e = day({0, 0, 0}, {0, 0, 0}, {0.5, -0.2, kNaN}, CostModel{}, 0.05);
    EXPECT_EQ(e.net_excess, 0.0);
    EXPECT_EQ(e.gross, 0.0);
    EXPECT_EQ(e.cost, 0.0);
    EXPECT_EQ(e.hedge_pnl, 0.0);
}

// Hand evaluation: rf dt = 0.0252/252 = 1e-4; one long at +1% and one short
// on an asset that fell 2%.
TEST(PeriodReturn, RiskFreeLegsAndShortProceeds) {
    const double rf_dt = 1e-4;
    const auto e = day({1, -1}, {1, -1}, {0.01, -0.02}, no_hedge(), 0.0252);
    const double oracle = (0.01 - rf_dt) + (0.02 - rf_dt) + rf_dt;
    EXPECT_NEAR(e.net_excess, oracle, 1e-15);
}

TEST(PeriodReturn, RejectsNonFiniteInputs) {
    EXPECT_THROW(day({1}, {1}, {kNaN}, no_hedge()), InvalidInput);
    EXPECT_THROW(day({0}, {0}, {0.0}, no_hedge(), kNaN), InvalidInput);
    const std::vector<double> b{1.0};
    EXPECT_THROW(day({1}, {1}, {0.0}, CostModel{}, 0.0, &b, kNaN), InvalidInput);
}

TEST(PeriodReturn, ZeroCostIsGrossPlusHedge) {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const Index n = 12;
        std::vector<int> held(n), traded(n);
        std::vector<double> r(n), b(n);
        for (Index i = 0; i < n; ++i) {
            held[i] = ternary(rng);
            traded[i] = ternary(rng);
            r[i] = rng.normal(0.0, 0.02);
            b[i] = rng.uniform(0.5, 1.5);
        }
        CostModel m;
        m.tc_bps = 0.0;
        const auto e = day(held, traded, r, m, 0.03, &b, rng.normal(0.0, 0.01));
        EXPECT_EQ(e.net_excess, e.gross + e.hedge_pnl);
        EXPECT_EQ(e.cost, 0.0);
    }
}

TEST(PeriodReturn, CostIsLinearInTcAndPermutationInvariant) {
    Rng rng(2);
    const Index n = 15;
    std::vector<int> held(n), traded(n);
    std::vector<double> r(n);
    for (Index i = 0; i < n; ++i) {
        held[i] = ternary(rng);
        traded[i] = ternary(rng);
        r[i] = rng.normal(0.0, 0.02);
    }
    const double c1 = day(held, traded, r, no_hedge(1.0)).cost;
    for (double tc : {0.0, 2.5, 5.0, 15.0}) EXPECT_NEAR(day(held, traded, r, no_hedge(tc)).cost, tc * c1, 1e-15);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::vector<int> hp(n), tp(n);
    std::vector<double> rp(n);
    for (Index i = 0; i < n; ++i) {
        hp[i] = held[perm[i]];
        tp[i] = traded[perm[i]];
        rp[i] = r[perm[i]];
    }
    EXPECT_EQ(day(hp, tp, rp, no_hedge(5.0)).cost, day(held, traded, r, no_hedge(5.0)).cost);
}

TEST(PeriodReturn, DoublingPositionsLeavesNetUnchanged) {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const Index n = 10;
        std::vector<int> held(n), traded(n), h2(n), t2(n);
        std::vector<double> r(n), b(n);
        for (Index i = 0; i < n; ++i) {
            held[i] = ternary(rng);
            traded[i] = ternary(rng);
            h2[i] = 2 * held[i];
            t2[i] = 2 * traded[i];
            r[i] = rng.normal(0.0, 0.02);
            b[i] = rng.uniform(0.5, 1.5);
        }
        const double idx = rng.normal(0.0, 0.01);
        const auto a = day(held, traded, r, CostModel{}, 0.02, &b, idx);
        const auto d = day(h2, t2, r, CostModel{}, 0.02, &b, idx);
        EXPECT_NEAR(a.net_excess, d.net_excess, 1e-15);
    }
}

TEST(PortfolioBeta, Fixtures) {
    EXPECT_EQ(portfolio_beta(Eigen::VectorXi::Ones(1), Vector::Ones(1), 1.0), 1.0);
    Eigen::VectorXi pos(2);
    pos << 1, -1;
    EXPECT_EQ(portfolio_beta(pos, Vector::Constant(2, 1.2), 1.0), 0.0);
    EXPECT_EQ(portfolio_beta(Eigen::VectorXi::Zero(3), Vector::Ones(3), 0.0), 0.0);
}

TEST(PortfolioBeta, MatchesDotProduct) {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const Index n = 25;
        Eigen::VectorXi pos(n);
        Vector betas(n);
        for (Index i = 0; i < n; ++i) {
            pos(i) = ternary(rng);
            betas(i) = rng.uniform(0.3, 1.8);
        }
        const double pi = static_cast<double>(std::max((pos.array() > 0).count(), (pos.array() < 0).count()));
        if (pi == 0.0) continue;
        EXPECT_NEAR(portfolio_beta(pos, betas, pi), betas.dot(pos.cast<double>()) / pi, 1e-12);
    }
}

TEST(Hedge, Notional) {
    EXPECT_EQ(hedge_notional(1.0, 1.0), -1.0);
    EXPECT_EQ(hedge_notional(0.0, 3.0), 0.0);
}

// A single long with beta b whose return is exactly b times the index:
// the hedged day nets to zero.
TEST(Hedge, RemovesExactIndexExposure) {
    const std::vector<double> b{1.3};
    const double idx = 0.017;
    const auto e = day({1}, {1}, {1.3 * idx}, CostModel{0.0, true, true}, 0.0, &b, idx);
    EXPECT_NEAR(e.net_excess, 0.0, 1e-16);
    EXPECT_EQ(e.P, -1.3);
}

TEST(BuildLedger, UsesYesterdaysPositionsAndBetas) {
    const Index T = 3, n = 2;
    PositionMatrix pos(T, n);
    pos << 1, 0,  //
        1, -1,    //
        0, 0;
    Matrix r(T, n), betas(T, n);
    r << 0.5, 0.5,  //
        0.01, 0.02,  //
        -0.03, 0.04;
    betas << 2.0, kNaN,  //
        1.5, 0.5,        //
        9.0, 9.0;
    LedgerInputs in;
    in.dates = {"d0", "d1", "d2"};
    in.positions = &pos;
    in.total_returns = &r;
    in.betas = &betas;
    in.index_return = Vector::Constant(T, 0.01);
    in.rf_annual = Vector::Zero(T);
    CostModel m;
    m.tc_bps = 0.0;
    const auto ledger = build_ledger(in, m);
    ASSERT_EQ(ledger.size(), 3u);
    EXPECT_EQ(ledger[0].net_excess, 0.0);  // nothing held at the first close
    EXPECT_EQ(ledger[1].l, 1);
    EXPECT_NEAR(ledger[1].net_excess, 0.01 - 2.0 * 0.01, 1e-16);
    EXPECT_EQ(ledger[2].l, 1);
    EXPECT_EQ(ledger[2].s, 1);
    EXPECT_NEAR(ledger[2].net_excess, -0.03 - 0.04 - (1.5 - 0.5) * 0.01, 1e-16);
    EXPECT_EQ(ledger[2].abs_change, 2.0);
}

TEST(BuildLedger, ZeroEverythingIsZero) {
    Rng rng(5);
    const Index T = 100, n = 8;
    PositionMatrix pos(T, n);
    for (Index k = 0; k < T; ++k)
        for (Index i = 0; i < n; ++i) pos(k, i) = ternary(rng);
    const Matrix r = Matrix::Zero(T, n), betas = random_matrix(rng, T, n);
    LedgerInputs in;
    in.dates.assign(T, "d");
    in.positions = &pos;
    in.total_returns = &r;
    in.betas = &betas;
    in.index_return = Vector::Zero(T);
    in.rf_annual = Vector::Zero(T);
    CostModel m;
    m.tc_bps = 0.0;
    for (const auto& e : build_ledger(in, m)) EXPECT_EQ(e.net_excess, 0.0);
}

TEST(BuildLedger, ShapeMismatchThrows) {
    PositionMatrix pos = PositionMatrix::Zero(3, 2);
    Matrix r = Matrix::Zero(4, 2);
    LedgerInputs in;
    in.dates.assign(3, "d");
    in.positions = &pos;
    in.total_returns = &r;
    in.index_return = Vector::Zero(3);
    in.rf_annual = Vector::Zero(3);
    EXPECT_THROW(build_ledger(in, CostModel{}), InvalidInput);
}

TEST(LedgerCsv, HeaderAndRow) {
    LedgerEntry e;
    e.date = "2020-01-02";
    e.l = 1;
    e.pi = 1;
    e.gross = 0.25;
    e.net_excess = 0.25;
    e.universe = 4;
    std::ostringstream os;
    write_ledger_csv(os, {e});
    EXPECT_EQ(os.str(),
              "date,l,s,pi,gross,cost,hedge_pnl,net_excess,beta_port,P,entries,abs_change,universe,index_excess\n"
              "2020-01-02,1,0,1,0.25,0,0,0.25,0,0,0,0,4,0\n");
}

TEST(BlendedWeights, Fixtures) {
    EXPECT_EQ(blended_weights(0.05, 0.02, 0.05, 0.02), std::make_pair(0.5, 0.5));
    EXPECT_EQ(blended_weights(0.0, 0.02, 0.05, 0.03), std::make_pair(0.0, 1.0));
    const auto [wl, wls] = blended_weights(0.08, 0.04, 0.06, 0.01);
    EXPECT_DOUBLE_EQ(wl, 0.25);
    EXPECT_DOUBLE_EQ(wls, 0.75);
    EXPECT_EQ(blended_weights(0.1, 0.1, -0.1, 0.1), std::make_pair(0.5, 0.5));
    EXPECT_THROW(blended_weights(0.1, 0.0, 0.1, 0.1), InvalidInput);
}

double sharpe_of(const Vector& v) {
    const double m = v.mean();
    return m / std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1)) * std::sqrt(252.0);
}

// With the true moments plugged in, the blend's population Sharpe is the
// maximum over all weightings, so it dominates either component.
TEST(BlendedWeights, PopulationSharpeDominatesComponents) {
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        const double mu_l = rng.uniform(0.01, 0.2), var_l = rng.uniform(0.005, 0.1);
        const double mu_ls = rng.uniform(0.01, 0.2), var_ls = rng.uniform(0.001, 0.05);
        const auto [wl, wls] = blended_weights(mu_l, var_l, mu_ls, var_ls);
        const double blend = (wl * mu_l + wls * mu_ls) / std::sqrt(wl * wl * var_l + wls * wls * var_ls);
        const double best = std::max(mu_l / std::sqrt(var_l), mu_ls / std::sqrt(var_ls));
        EXPECT_GE(blend, best - 1e-12);
        EXPECT_NEAR(blend, std::hypot(mu_l / std::sqrt(var_l), mu_ls / std::sqrt(var_ls)), 1e-12);
    }
}

// Sampled streams with comparable Sharpe: the in-sample blend beats both.
TEST(BlendedWeights, InSampleSharpeOnUncorrelatedStreams) {
    Rng rng(7);
    const double mu_l = 0.10 / 252, sd_l = 0.15 / std::sqrt(252.0);
    const double mu_ls = 0.05 / 252, sd_ls = 0.06 / std::sqrt(252.0);
    const auto [wl, wls] = blended_weights(mu_l * 252, sd_l * sd_l * 252, mu_ls * 252, sd_ls * sd_ls * 252);
    const Index T = 252 * 40;
    Vector a(T), b(T);
    for (Index k = 0; k < T; ++k) {
        a(k) = rng.normal(mu_l, sd_l);
        b(k) = rng.normal(mu_ls, sd_ls);
    }
    const Vector blend = wl * a + wls * b;
    EXPECT_GE(sharpe_of(blend), std::max(sharpe_of(a), sharpe_of(b)) - 0.01);
}

TEST(BlendSeries, FirstYearEqualThenTrailingMoments) {
    const Index per_year = 252;
    std::vector<int> years;
    Vector l(3 * per_year), ls(3 * per_year);
    Rng rng(9);
    for (Index k = 0; k < 3 * per_year; ++k) {
        years.push_back(2000 + static_cast<int>(k / per_year));
        l(k) = rng.normal(1e-3, 0.01);
        ls(k) = rng.normal(5e-4, 0.003);
    }
    const auto run = blend_series(l, ls, years);
    ASSERT_EQ(run.years.size(), 3u);
    EXPECT_EQ(run.years[0].w_long, 0.5);
    EXPECT_NEAR(run.years[0].w_long + run.years[0].w_long_short, 1.0, 1e-15);

    auto moments = [](const Vector& v) {
        const double m = v.mean();
        return std::make_pair(m * 252, (v.array() - m).square().sum() / static_cast<double>(v.size() - 1) * 252);
    };
    for (int y = 1; y < 3; ++y) {
        const auto [ml, vl] = moments(l.head(y * per_year));
        const auto [mls, vls] = moments(ls.head(y * per_year));
        const auto w = blended_weights(ml, vl, mls, vls);
        EXPECT_NEAR(run.years[static_cast<std::size_t>(y)].w_long, w.first, 1e-12);
        EXPECT_NEAR(run.returns(y * per_year), w.first * l(y * per_year) + w.second * ls(y * per_year), 1e-15);
    }
}

TEST(BlendSeries, WindowCapsAtMaxYears) {
    std::vector<int> years;
    Vector l(5 * 10), ls(5 * 10);
    Rng rng(8);
    for (Index k = 0; k < 50; ++k) {
        years.push_back(static_cast<int>(k / 10));
        l(k) = rng.normal(0.01, 0.02);
        ls(k) = rng.normal(0.01, 0.01);
    }
    const auto run = blend_series(l, ls, years, 2);
    const auto [ml, vl] = [&] {
        const Vector seg = l.segment(20, 20);
        const double m = seg.mean();
        return std::make_pair(m * 252, (seg.array() - m).square().sum() / 19.0 * 252);
    }();
    const auto [mls, vls] = [&] {
        const Vector seg = ls.segment(20, 20);
        const double m = seg.mean();
        return std::make_pair(m * 252, (seg.array() - m).square().sum() / 19.0 * 252);
    }();
    EXPECT_NEAR(run.years[4].w_long, blended_weights(ml, vl, mls, vls).first, 1e-12);
}

}  // namespace
}  // namespace statarb::portfolio
