#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sdm/error.hpp"

namespace sdm {

/// Linear ramp of gamma = log(sigma^2 / alpha^2) over t = 0..T.
struct ScheduleConfig {
    int T = 200;
    double gamma_min = -13.3;
    double gamma_max = 5.0;

    void validate() const {
        if (T < 2) throw ConfigError("schedule T must be >= 2, got " + std::to_string(T));
        if (!std::isfinite(gamma_min) || !std::isfinite(gamma_max))
            throw ConfigError("schedule gamma endpoints must be finite");
        if (!(gamma_min < gamma_max))
            throw ConfigError("schedule requires gamma_min < gamma_max");
    }

    friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

struct TransitionCoeffs {
    double alpha_ts;  ///< alpha_{t|s} = alpha_t / alpha_s
    double sigma2_ts; ///< sigma^2_{t|s} = sigma_t^2 - alpha_{t|s}^2 sigma_s^2
};

inline double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Variance-preserving signal/noise grid, immutable once built.
///
/// Index t runs over 0..T inclusive; t = 0 is the (nearly) clean level and
/// t = T the (nearly) pure-noise level. Every quantity is precomputed so that
/// hot loops only do table lookups.
class NoiseSchedule {
public:
    explicit NoiseSchedule(const ScheduleConfig& config) : config_(config) {
        config.validate();
        const auto n = static_cast<std::size_t>(config.T) + 1;
        gamma_.resize(n);
        alpha2_.resize(n);
        sigma2_.resize(n);
        for (std::size_t t = 0; t < n; ++t) {
            gamma_[t] = config.gamma_min +
                        (config.gamma_max - config.gamma_min) * static_cast<double>(t) / config.T;
            sigma2_[t] = logistic(gamma_[t]);
            alpha2_[t] = logistic(-gamma_[t]);
        }
        finish();
    }

    /// Arbitrary variance-preserving schedule given sigma_t^2 for t = 0..T.
    /// The config's gamma endpoints are filled in from the table.
    static NoiseSchedule from_sigma2(const std::vector<double>& sigma2) {
        if (sigma2.size() < 3) throw ConfigError("schedule table needs at least 3 entries");
        NoiseSchedule s;
        s.sigma2_ = sigma2;
        s.alpha2_.resize(sigma2.size());
        s.gamma_.resize(sigma2.size());
        for (std::size_t t = 0; t < sigma2.size(); ++t) {
            const double v = sigma2[t];
            if (!(v > 0.0 && v < 1.0)) throw ConfigError("schedule sigma^2 must lie in (0, 1)");
            if (t > 0 && !(v > sigma2[t - 1])) throw ConfigError("schedule sigma^2 must be strictly increasing");
            s.alpha2_[t] = 1.0 - v;
            s.gamma_[t] = std::log(v) - std::log1p(-v);
        }
        s.config_ = {static_cast<int>(sigma2.size()) - 1, s.gamma_.front(), s.gamma_.back()};
        s.finish();
        return s;
    }

    const ScheduleConfig& config() const { return config_; }
    int T() const { return config_.T; }

    double alpha(int t) const { return alpha_[check(t)]; }
    double sigma(int t) const { return sigma_[check(t)]; }
    double alpha2(int t) const { return alpha2_[check(t)]; }
    double sigma2(int t) const { return sigma2_[check(t)]; }
    double gamma(int t) const { return gamma_[check(t)]; }
    /// Signal-to-noise ratio alpha_t^2 / sigma_t^2 = exp(-gamma_t).
    double snr(int t) const { return std::exp(-gamma_[check(t)]); }

    const std::vector<double>& alphas() const { return alpha_; }
    const std::vector<double>& sigmas() const { return sigma_; }

    TransitionCoeffs transition_coeffs(int s, int t) const {
        check(s);
        check(t);
        if (s > t) throw ArgumentError("transition_coeffs requires s <= t");
        if (s == t) return {1.0, 0.0};
        // sigma_t^2 (1 - SNR_t / SNR_s), written to avoid cancellation.
        const double sigma2_ts = -sigma2_[t] * std::expm1(gamma_[s] - gamma_[t]);
        return {alpha_[t] / alpha_[s], sigma2_ts};
    }

    /// Variance of q(x_s | x_t, x_0).
    double posterior_variance(int s, int t) const {
        if (s >= t) throw ArgumentError("posterior_variance requires s < t");
        const auto c = transition_coeffs(s, t);
        return c.sigma2_ts * sigma2_[s] / sigma2_[t];
    }

    /// Weight (SNR_s - SNR_t) / 2 that turns the noise-prediction error into
    /// the KL term between q(x_s | x_t, x_0) and p(x_s | x_t).
    double kl_weight(int s, int t) const {
        if (s >= t) throw ArgumentError("kl_weight requires s < t");
        return 0.5 * (snr(s) - snr(t));
    }

private:
    NoiseSchedule() = default;

    void finish() {
        alpha_.resize(alpha2_.size());
        sigma_.resize(sigma2_.size());
        for (std::size_t t = 0; t < alpha2_.size(); ++t) {
            alpha_[t] = std::sqrt(alpha2_[t]);
            sigma_[t] = std::sqrt(sigma2_[t]);
        }
    }

    std::size_t check(int t) const {
        if (t < 0 || t > config_.T)
            throw ArgumentError("step index " + std::to_string(t) + " outside [0, " +
                                std::to_string(config_.T) + "]");
        return static_cast<std::size_t>(t);
    }

    ScheduleConfig config_;
    std::vector<double> gamma_;
    std::vector<double> alpha2_;
    std::vector<double> sigma2_;
    std::vector<double> alpha_;
    std::vector<double> sigma_;
};

} // namespace sdm
