#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "statarb/analytics.hpp"
#include "test_util.hpp"

namespace statarb::analytics {
namespace {

TEST(Sharpe, ZeroMeanSeriesIsZero) {
    const std::vector<double> v{0.01, -0.01, 0.02, -0.02};
    EXPECT_NEAR(sharpe_annual(v).value, 0.0, 1e-15);
}

TEST(Sharpe, ConstantSeriesIsNa) {
    const std::vector<double> v(100, 0.001);
    EXPECT_TRUE(std::isnan(sharpe_annual(v).value));
    EXPECT_EQ(sharpe_annual(std::vector<double>(100, 0.0)).value, 0.0);
}

TEST(Sharpe, FlagsShortYears) {
    std::vector<double> v(59, 0.0);
    v[0] = 0.01;
    EXPECT_TRUE(sharpe_annual(v).flagged);
    v.push_back(0.0);
    EXPECT_FALSE(sharpe_annual(v).flagged);
    EXPECT_EQ(sharpe_annual(v).observations, 60);
}

TEST(Sharpe, HandComputed) {
    const std::vector<double> v{0.01, 0.03};
    // mean 0.02, sample sd sqrt(2) * 0.01
    EXPECT_NEAR(sharpe_annual(v).value, 0.02 / (std::sqrt(2.0) * 0.01) * std::sqrt(252.0), 1e-12);
}

// Estimator distribution for iid N(0.001, 0.01) over 252 days: centred at
// 0.1 sqrt(252), standard error sqrt((1 + S_d^2 / 2) / n) sqrt(252) with S_d
// the daily ratio, so about 95% of draws land within 1.96 standard errors.
TEST(Sharpe, MonteCarloBand) {
    Rng rng(1);
    const double truth = 0.1 * std::sqrt(252.0);
    const double se = std::sqrt((1.0 + 0.01 / 2.0) / 252.0) * std::sqrt(252.0);
    double sum = 0.0;
    int inside = 0;
    const int trials = 2000;
    for (int t = 0; t < trials; ++t) {
        std::vector<double> v(252);
        for (auto& x : v) x = rng.normal(0.001, 0.01);
        const double s = sharpe_annual(v).value;
        sum += s;
        inside += std::abs(s - truth) < 1.96 * se;
    }
    EXPECT_NEAR(sum / trials, truth, 4.0 * se / std::sqrt(trials) + 0.01);
    const double frac = static_cast<double>(inside) / trials;
    EXPECT_NEAR(frac, 0.95, 4.0 * std::sqrt(0.95 * 0.05 / trials));
}

DrawdownResult brute_drawdown(const std::vector<double>& r, Index window) {
    std::vector<double> e{1.0};
    for (double x : r) e.push_back(e.back() * (1.0 + x));
    DrawdownResult out;
    out.drawdown.resize(static_cast<Index>(r.size()));
    for (std::size_t k = 1; k < e.size(); ++k) {
        const std::size_t from = k + 1 > static_cast<std::size_t>(window) ? k + 1 - static_cast<std::size_t>(window) : 0;
        const double peak = *std::max_element(e.begin() + static_cast<std::ptrdiff_t>(from), e.begin() + static_cast<std::ptrdiff_t>(k) + 1);
        out.drawdown(static_cast<Index>(k - 1)) = e[k] / peak - 1.0;
        out.max_drawdown = std::min(out.max_drawdown, out.drawdown(static_cast<Index>(k - 1)));
    }
    return out;
}

TEST(Drawdown, NonNegativeReturnsNeverDraw) {
    Rng rng(2);
    std::vector<double> v(500);
    for (auto& x : v) x = std::abs(rng.normal(0.0, 0.01));
    const auto dd = rolling_drawdown(v);
    EXPECT_EQ(dd.max_drawdown, 0.0);
    EXPECT_EQ(dd.drawdown.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Drawdown, SingleLossDay) {
    std::vector<double> v(300, 0.0);
    v[100] = -0.10;
    EXPECT_NEAR(rolling_drawdown(v).max_drawdown, -0.10, 1e-15);
}

TEST(Drawdown, MatchesBruteForceTrailingMax) {
    Rng rng(3);
    for (Index window : {1, 5, 252}) {
        std::vector<double> v(1200);
        for (auto& x : v) x = rng.normal(0.0002, 0.015);
        const auto fast = rolling_drawdown(v, window);
        const auto slow = brute_drawdown(v, window);
        EXPECT_LT((fast.drawdown - slow.drawdown).cwiseAbs().maxCoeff(), 1e-12) << window;
        EXPECT_NEAR(fast.max_drawdown, slow.max_drawdown, 1e-12);
    }
}

TEST(Drawdown, OldPeaksLeaveTheWindow) {
    std::vector<double> v(20, 0.0);
    v[0] = 1.0;   // equity 2
    v[1] = -0.5;  // back to 1
    const auto dd = rolling_drawdown(v, 5);
    EXPECT_NEAR(dd.drawdown(1), -0.5, 1e-15);
    EXPECT_NEAR(dd.drawdown(4), -0.5, 1e-15);  // peak at equity index 1 still inside
    EXPECT_EQ(dd.drawdown(5), 0.0);
}

TEST(Percentile, Definitional) {
    const std::vector<double> g{4, 0, 3, 1, 2};
    EXPECT_EQ(percentile(g, 0.25), 1.0);
    EXPECT_EQ(percentile(g, 0.50), 2.0);
    EXPECT_EQ(percentile(g, 0.75), 3.0);
    EXPECT_EQ(percentile({7.5}, 0.25), 7.5);
    EXPECT_EQ(percentile({7.5}, 0.75), 7.5);
    EXPECT_NEAR(percentile({0.0, 1.0}, 0.3), 0.3, 1e-15);
    EXPECT_TRUE(std::isnan(percentile({}, 0.5)));
    EXPECT_EQ(percentile({kNaN, 1.0, 3.0}, 0.5), 2.0);
}

TEST(PercentileTable, GroupsSortedByCostThenWindow) {
    SharpeGroups groups;
    groups[{5.0, 10}] = {1.0};
    groups[{0.0, 5}] = {0, 1, 2, 3, 4};
    groups[{5.0, 5}] = {2.0, kNaN};
    const auto rows = percentile_table(groups);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].tc_bps, 0.0);
    EXPECT_EQ(rows[0].p25, 1.0);
    EXPECT_EQ(rows[0].count, 5);
    EXPECT_EQ(rows[1].ws, 5);
    EXPECT_EQ(rows[1].count, 1);
    EXPECT_EQ(rows[2].ws, 10);
}

// Layout golden using a published-looking row; the numbers are only a
// formatting fixture.
TEST(PercentileTable, TextLayoutGolden) {
    PercentileRow row;
    row.tc_bps = 5.0;
    row.ws = 5;
    row.p25 = 0.39;
    row.p50 = 0.99;
    row.p75 = 1.91;
    row.count = 29;
    PercentileRow empty;
    empty.tc_bps = 15.0;
    empty.ws = 10;
    std::ostringstream os;
    write_percentile_text(os, {row, empty});
    EXPECT_EQ(os.str(),
              " TC(bps)   WS      p25      p50      p75      n\n"
              "     5.0    5     0.39     0.99     1.91     29\n"
              "    15.0   10       NA       NA       NA      0\n");
    std::ostringstream csv;
    write_percentile_csv(csv, {row});
    EXPECT_EQ(csv.str(), "tc_bps,ws,p25,p50,p75,count\n5,5,0.39000000000000001,0.98999999999999999,1.9099999999999999,29\n");
}

std::vector<portfolio::LedgerEntry> ledger_of(const std::vector<std::string>& dates, const std::vector<double>& net) {
    std::vector<portfolio::LedgerEntry> out;
    for (std::size_t t = 0; t < dates.size(); ++t) {
        portfolio::LedgerEntry e;
        e.date = dates[t];
        e.net_excess = net[t];
        e.l = static_cast<Index>(t % 3);
        e.s = 1;
        e.universe = 10;
        e.entries = t % 2;
        e.abs_change = static_cast<double>(t % 4);
        out.push_back(e);
    }
    return out;
}

TEST(Summarize, YearsAndAggregatesFromLedgerColumns) {
    Rng rng(4);
    const auto dates = market::weekday_calendar("2001-01-01", 700);
    std::vector<double> net(700);
    for (auto& x : net) x = rng.normal(3e-4, 0.01);
    const auto ledger = ledger_of(dates, net);
    const auto sum = summarize(ledger);
    ASSERT_EQ(sum.years.size(), 3u);
    EXPECT_EQ(sum.years[0].year, 2001);

    double sharpe_total = 0.0;
    Index trades = 0;
    std::size_t start = 0;
    for (const auto& y : sum.years) {
        std::vector<double> seg;
        Index year_trades = 0;
        double invested = 0.0;
        std::size_t t = start;
        for (; t < ledger.size() && market::year_of(ledger[t].date) == y.year; ++t) {
            seg.push_back(net[t]);
            year_trades += ledger[t].entries;
            invested += static_cast<double>(ledger[t].l + ledger[t].s) / 10.0;
        }
        EXPECT_NEAR(y.sharpe.value, sharpe_annual(seg).value, 1e-12);
        EXPECT_EQ(y.trades, year_trades);
        EXPECT_NEAR(y.invested, invested / static_cast<double>(seg.size()), 1e-12);
        sharpe_total += y.sharpe.value;
        trades += year_trades;
        start = t;
    }
    EXPECT_NEAR(sum.mean_annual_sharpe, sharpe_total / 3.0, 1e-12);
    EXPECT_EQ(sum.trades, trades);
    EXPECT_NEAR(sum.pooled_sharpe, sharpe_annual(net).value, 1e-12);
    EXPECT_NEAR(sum.max_drawdown, brute_drawdown(net, 252).max_drawdown, 1e-12);
}

TEST(Summarize, EmptyLedger) {
    const auto sum = summarize({});
    EXPECT_EQ(sum.days, 0);
    EXPECT_TRUE(std::isnan(sum.mean_annual_sharpe));
}

}  // namespace
}  // namespace statarb::analytics
