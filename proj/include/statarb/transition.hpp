// State-evolution models for the latent factor premia: identity random
// walk, rolling diagonal process-noise estimate, a small neural AR regressor
// with a log-variance head, and the lag-expanded companion form that lets
// the UKF run an order-M scalar model.
#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "statarb/errors.hpp"
#include "statarb/filters.hpp"
#include "statarb/random.hpp"

namespace statarb::transition {

using filters::Index;
using filters::Matrix;
using filters::Vector;

inline constexpr double kStateCovFloor = 1e-12;
inline constexpr double kVarianceFloor = 1e-10;

inline Vector identity_transition(const Vector& f) { return f; }

struct IdentityMap {
    Vector operator()(const Vector& f) const { return f; }
};

/// Diagonal process-noise estimate from the last min(window, T-1) increments
/// f_{k+1} - g(f_k) of a T x m history (rows are dates). Sample variance with
/// the (n-1) convention; a single increment falls back to its square.
template <typename Map = IdentityMap>
Matrix rolling_state_cov(const Matrix& history, Index window = 20, Map&& g = Map{}) {
    if (history.rows() < 2) throw InsufficientHistory("rolling_state_cov: need at least two dates");
    if (window < 2) throw InvalidInput("rolling_state_cov: window must be >= 2");

    const Index m = history.cols();
    const Index count = std::min<Index>(window, history.rows() - 1);
    const Index first = history.rows() - 1 - count;

    Matrix increments(count, m);
    for (Index j = 0; j < count; ++j) {
        const Index k = first + j;
        const Vector predicted = g(Vector(history.row(k).transpose()));
        increments.row(j) = history.row(k + 1) - predicted.transpose();
    }

    Vector variance(m);
    if (count == 1) {
        variance = increments.row(0).transpose().array().square();
    } else {
        const Eigen::RowVectorXd mean = increments.colwise().mean();
        variance = ((increments.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(count - 1))
                       .transpose();
    }
    return variance.cwiseMax(kStateCovFloor).asDiagonal();
}

struct NeuralARConfig {
    int lags = 10;
    int hidden = 32;
    double dropout = 0.1;
    double l2 = 1e-5;
    int epochs = 500;
    double learning_rate = 1e-2;
    std::uint64_t seed = 0;
};

struct NeuralPrediction {
    double mean = 0.0;
    double variance = 0.0;
};

/// One hidden tanh layer feeding two linear heads: next value and log-variance.
/// Inputs and targets are standardized with a scaler fitted on the training
/// series; predictions come back in series units.
class NeuralARModel {
public:
    static constexpr double kLogVarMin = -30.0;
    static constexpr double kLogVarMax = 20.0;

    NeuralARModel() = default;

    /// Randomly initialized, untrained network.
    NeuralARModel(int lags, int hidden, std::uint64_t seed) : lags_(lags), hidden_(hidden) {
        if (lags < 1 || hidden < 1) throw InvalidInput("NeuralARModel: lags and hidden must be >= 1");
        Rng rng(seed);
        const double input_bound = std::sqrt(6.0 / (lags + hidden));
        const double head_bound = 0.1 * std::sqrt(6.0 / (hidden + 1));
        w_hidden_.resize(hidden, lags);
        for (Index i = 0; i < w_hidden_.size(); ++i) w_hidden_.data()[i] = rng.uniform(-input_bound, input_bound);
        b_hidden_ = Vector::Zero(hidden);
        w_mean_.resize(hidden);
        w_logvar_.resize(hidden);
        for (Index i = 0; i < hidden; ++i) w_mean_(i) = rng.uniform(-head_bound, head_bound);
        for (Index i = 0; i < hidden; ++i) w_logvar_(i) = rng.uniform(-head_bound, head_bound);
    }

    int lags() const { return lags_; }
    int hidden() const { return hidden_; }
    double center() const { return center_; }
    double scale() const { return scale_; }
    const std::vector<double>& loss_history() const { return loss_history_; }

    /// `window` holds the most recent value first.
    NeuralPrediction predict(std::span<const double> window) const {
        if (static_cast<int>(window.size()) != lags_) throw InvalidInput("neural_predict: window length != lags");
        Vector x(lags_);
        for (int i = 0; i < lags_; ++i) {
            if (!std::isfinite(window[i])) throw InvalidInput("neural_predict: non-finite input");
            x(i) = (window[i] - center_) / scale_;
        }
        const Vector activation = (w_hidden_ * x + b_hidden_).array().tanh();
        const double mean_std = w_mean_.dot(activation) + b_mean_;
        const double logvar = std::clamp(w_logvar_.dot(activation) + b_logvar_, kLogVarMin, kLogVarMax);
        return {center_ + scale_ * mean_std, std::max(scale_ * scale_ * std::exp(logvar), kVarianceFloor)};
    }

    NeuralPrediction predict(const Vector& window) const {
        return predict(std::span<const double>(window.data(), static_cast<std::size_t>(window.size())));
    }

    nlohmann::json to_json() const {
        auto flat = [](const auto& m) { return std::vector<double>(m.data(), m.data() + m.size()); };
        return {{"format", "statarb.neural_ar"},
                {"version", 1},
                {"lags", lags_},
                {"hidden", hidden_},
                {"center", center_},
                {"scale", scale_},
                {"w_hidden", flat(w_hidden_)},
                {"b_hidden", flat(b_hidden_)},
                {"w_mean", flat(w_mean_)},
                {"b_mean", b_mean_},
                {"w_logvar", flat(w_logvar_)},
                {"b_logvar", b_logvar_}};
    }

    static NeuralARModel from_json(const nlohmann::json& j) {
        if (j.value("format", "") != "statarb.neural_ar" || j.value("version", 0) != 1) {
            throw InvalidInput("NeuralARModel: unsupported model snapshot");
        }
        NeuralARModel model;
        model.lags_ = j.at("lags").get<int>();
        model.hidden_ = j.at("hidden").get<int>();
        model.center_ = j.at("center").get<double>();
        model.scale_ = j.at("scale").get<double>();
        auto load = [&](const char* key, auto& target, Index rows, Index cols) {
            const auto values = j.at(key).get<std::vector<double>>();
            if (static_cast<Index>(values.size()) != rows * cols) {
                throw InvalidInput(std::string("NeuralARModel: bad size for ") + key);
            }
            target.resize(rows, cols);
            std::copy(values.begin(), values.end(), target.data());
        };
        Matrix w_hidden;
        Matrix b_hidden;
        Matrix w_mean;
        Matrix w_logvar;
        load("w_hidden", w_hidden, model.hidden_, model.lags_);
        load("b_hidden", b_hidden, model.hidden_, 1);
        load("w_mean", w_mean, model.hidden_, 1);
        load("w_logvar", w_logvar, model.hidden_, 1);
        model.w_hidden_ = w_hidden;
        model.b_hidden_ = b_hidden.col(0);
        model.w_mean_ = w_mean.col(0);
        model.w_logvar_ = w_logvar.col(0);
        model.b_mean_ = j.at("b_mean").get<double>();
        model.b_logvar_ = j.at("b_logvar").get<double>();
        return model;
    }

private:
    friend NeuralARModel neural_fit(std::span<const double> series, const NeuralARConfig& config);

    int lags_ = 0;
    int hidden_ = 0;
    double center_ = 0.0;
    double scale_ = 1.0;
    Matrix w_hidden_;
    Vector b_hidden_;
    Vector w_mean_;
    double b_mean_ = 0.0;
    Vector w_logvar_;
    double b_logvar_ = 0.0;
    std::vector<double> loss_history_;
};

namespace detail {

/// Adam state for one parameter block.
struct AdamSlot {
    Matrix m1;
    Matrix m2;

    void step(Eigen::Ref<Matrix> param, const Matrix& grad, double lr, int t) {
        constexpr double beta1 = 0.9;
        constexpr double beta2 = 0.999;
        constexpr double eps = 1e-8;
        if (m1.size() == 0) {
            m1 = Matrix::Zero(grad.rows(), grad.cols());
            m2 = Matrix::Zero(grad.rows(), grad.cols());
        }
        m1 = beta1 * m1 + (1.0 - beta1) * grad;
        m2 = beta2 * m2 + (1.0 - beta2) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(beta1, t);
        const double c2 = 1.0 - std::pow(beta2, t);
        param.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
    }
};

}  // namespace detail

/// Fits the network on (M lags -> next value) pairs by full-batch Adam (cosine
/// decayed step) on the
/// Gaussian negative log-likelihood plus an L2 penalty on the weights.
/// Dropout masks the hidden layer during training only. Deterministic per seed.
inline NeuralARModel neural_fit(std::span<const double> series, const NeuralARConfig& config) {
    const int lags = config.lags;
    if (lags < 1) throw InvalidInput("neural_fit: lags must be >= 1");
    if (static_cast<int>(series.size()) <= lags + 1) {
        throw InsufficientHistory("neural_fit: series length must exceed lags + 1");
    }
    for (double v : series) {
        if (!std::isfinite(v)) throw InvalidInput("neural_fit: non-finite value in series");
    }

    NeuralARModel model(lags, config.hidden, derive_seed(config.seed, 0));

    const auto length = static_cast<Index>(series.size());
    double mean = 0.0;
    for (double v : series) mean += v;
    mean /= static_cast<double>(length);
    double var = 0.0;
    for (double v : series) var += (v - mean) * (v - mean);
    var /= static_cast<double>(length);
    model.center_ = mean;
    model.scale_ = var > 0.0 ? std::sqrt(var) : 1.0;

    const Index samples = length - lags;
    Matrix inputs(lags, samples);
    Eigen::RowVectorXd targets(samples);
    for (Index s = 0; s < samples; ++s) {
        const Index t = s + lags;
        for (int i = 0; i < lags; ++i) inputs(i, s) = (series[t - 1 - i] - model.center_) / model.scale_;
        targets(s) = (series[t] - model.center_) / model.scale_;
    }

    Rng dropout_rng(derive_seed(config.seed, 1));
    const double keep = 1.0 - config.dropout;
    const double batch = static_cast<double>(samples);
    detail::AdamSlot slot_wh, slot_bh, slot_wm, slot_bm, slot_wv, slot_bv;
    Matrix mask(config.hidden, samples);

    model.loss_history_.clear();
    model.loss_history_.reserve(static_cast<std::size_t>(config.epochs));
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const Matrix pre = (model.w_hidden_ * inputs).colwise() + model.b_hidden_;
        const Matrix activation = pre.array().tanh();
        for (Index i = 0; i < mask.size(); ++i) {
            mask.data()[i] = (config.dropout > 0.0 && dropout_rng.uniform() < config.dropout) ? 0.0 : 1.0 / keep;
        }
        const Matrix dropped = activation.cwiseProduct(mask);

        const Eigen::RowVectorXd mu = (model.w_mean_.transpose() * dropped).array() + model.b_mean_;
        const Eigen::RowVectorXd raw_logvar = (model.w_logvar_.transpose() * dropped).array() + model.b_logvar_;
        const Eigen::RowVectorXd logvar =
            raw_logvar.array().max(NeuralARModel::kLogVarMin).min(NeuralARModel::kLogVarMax);
        const Eigen::RowVectorXd inv_var = (-logvar.array()).exp();
        const Eigen::RowVectorXd err = targets - mu;

        const double penalty =
            config.l2 * (model.w_hidden_.squaredNorm() + model.w_mean_.squaredNorm() + model.w_logvar_.squaredNorm());
        const double nll = 0.5 * (logvar.array() + err.array().square() * inv_var.array()).sum() / batch;
        model.loss_history_.push_back(nll + penalty);

        const Eigen::RowVectorXd d_mu = (-err.array() * inv_var.array()) / batch;
        Eigen::RowVectorXd d_logvar = 0.5 * (1.0 - err.array().square() * inv_var.array()) / batch;
        for (Index s = 0; s < samples; ++s) {
            if (raw_logvar(s) < NeuralARModel::kLogVarMin || raw_logvar(s) > NeuralARModel::kLogVarMax) {
                d_logvar(s) = 0.0;
            }
        }

        const Vector g_wm = dropped * d_mu.transpose() + 2.0 * config.l2 * model.w_mean_;
        const double g_bm = d_mu.sum();
        const Vector g_wv = dropped * d_logvar.transpose() + 2.0 * config.l2 * model.w_logvar_;
        const double g_bv = d_logvar.sum();

        Matrix d_hidden = model.w_mean_ * d_mu + model.w_logvar_ * d_logvar;
        d_hidden = d_hidden.cwiseProduct(mask).cwiseProduct((1.0 - activation.array().square()).matrix());
        const Matrix g_wh = d_hidden * inputs.transpose() + 2.0 * config.l2 * model.w_hidden_;
        const Vector g_bh = d_hidden.rowwise().sum();

        // Cosine decay from learning_rate down to 1% of it.
        const double progress = static_cast<double>(epoch - 1) / std::max(1, config.epochs - 1);
        const double lr = config.learning_rate * (0.01 + 0.495 * (1.0 + std::cos(std::numbers::pi * progress)));
        slot_wh.step(model.w_hidden_, g_wh, lr, epoch);
        slot_bh.step(model.b_hidden_, g_bh, lr, epoch);
        slot_wm.step(model.w_mean_, g_wm, lr, epoch);
        slot_wv.step(model.w_logvar_, g_wv, lr, epoch);
        Matrix bm = Matrix::Constant(1, 1, model.b_mean_);
        slot_bm.step(bm, Matrix::Constant(1, 1, g_bm), lr, epoch);
        model.b_mean_ = bm(0, 0);
        Matrix bv = Matrix::Constant(1, 1, model.b_logvar_);
        slot_bv.step(bv, Matrix::Constant(1, 1, g_bv), lr, epoch);
        model.b_logvar_ = bv(0, 0);
    }
    return model;
}

inline NeuralPrediction neural_predict(const NeuralARModel& model, const Vector& window) {
    return model.predict(window);
}

/// Lag-expanded state for an order-M scalar predictor: the state
/// (f_k, ..., f_{k-M+1}) maps to (predict, f_k, ..., f_{k-M+2}). Only the
/// first coordinate takes process noise; the measurement selects it.
struct CompanionSystem {
    Index order = 1;
    std::function<double(const Vector&)> next_value;

    Vector operator()(const Vector& state) const {
        Vector out(order);
        out(0) = next_value(state);
        out.tail(order - 1) = state.head(order - 1);
        return out;
    }

    Vector noise_column() const {
        Vector column = Vector::Zero(order);
        column(0) = 1.0;
        return column;
    }

    Eigen::RowVectorXd selector() const {
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(order);
        row(0) = 1.0;
        return row;
    }

    /// B v B^T for scalar noise variance v.
    Matrix process_noise(double variance) const {
        Matrix noise = Matrix::Zero(order, order);
        noise(0, 0) = variance;
        return noise;
    }
};

inline CompanionSystem companion_wrap(std::function<double(const Vector&)> predictor, Index order) {
    if (order < 1) throw InvalidInput("companion_wrap: order must be >= 1");
    return {order, std::move(predictor)};
}

inline CompanionSystem companion_wrap(const NeuralARModel& model) {
    auto shared = std::make_shared<const NeuralARModel>(model);
    return companion_wrap([shared](const Vector& state) { return shared->predict(state).mean; }, model.lags());
}

/// Process noise for the UKF time update: the sigma-weighted average of the
/// variances predicted at each sigma point's lag window (columns of
/// `sigma_windows`). Floored so it stays strictly positive.
inline double aleatoric_psi(const NeuralARModel& model, const Matrix& sigma_windows, const Vector& wm) {
    if (sigma_windows.rows() != model.lags()) throw InvalidInput("aleatoric_psi: window rows != lags");
    if (sigma_windows.cols() != wm.size()) throw InvalidInput("aleatoric_psi: weight count mismatch");
    // Offsets from the centre point (weights sum to one) keep the sum stable
    // when wm(0) is large and negative.
    const double centre = model.predict(Vector(sigma_windows.col(0))).variance;
    double total = centre;
    for (Index i = 1; i < sigma_windows.cols(); ++i) {
        total += wm(i) * (model.predict(Vector(sigma_windows.col(i))).variance - centre);
    }
    return std::max(total, kVarianceFloor);
}

}  // namespace statarb::transition
