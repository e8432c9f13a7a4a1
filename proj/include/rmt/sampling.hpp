#pragma once
// Seeded generation of return matrices for every model/distribution pair.

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "rmt/covariance.hpp"

namespace rmt {

// Reproducible generator: identical (seed, stream) -> identical draws.
class RngStream {
 public:
    RngStream(uint64_t seed, uint64_t stream) : seed_(seed), stream_(stream) {
        std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                          static_cast<uint32_t>(stream), static_cast<uint32_t>(stream >> 32)};
        eng_.seed(seq);
    }

    uint64_t seed() const { return seed_; }
    uint64_t stream() const { return stream_; }

    double normal() { return normal_(eng_); }
    double uniform() { return uniform_(eng_); }  // [0,1)
    double exponential() { return exp_(eng_); }
    double gamma(double shape, double scale) {
        std::gamma_distribution<double> g(shape, scale);
        return g(eng_);
    }
    // Complex normal with <|x|^2> = var (variance var/2 per part).
    cdouble complex_normal(double var) {
        const double s = std::sqrt(0.5 * var);
        return {s * normal(), s * normal()};
    }

 private:
    uint64_t seed_, stream_;
    std::mt19937_64 eng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    std::exponential_distribution<double> exp_{1.0};
};

struct ReturnMatrix {
    Eigen::MatrixXcd data;  // N x T
    int n = 0, t_len = 0;
    ModelSpec spec;
    ReturnDistribution dist;
    uint64_t seed = 0;
};

namespace detail {

inline int sector_of_row(int i, int n, const std::vector<double>& weights) {
    const double x = (i + 0.5) / n;
    double cum = 0.0;
    for (size_t k = 0; k < weights.size(); ++k) {
        cum += weights[k];
        if (x <= cum) return static_cast<int>(k);
    }
    return static_cast<int>(weights.size()) - 1;
}

// Per-row true variances implied by the spec (1 for temporal-only models).
inline std::vector<double> row_variances(const ModelSpec& spec, int n) {
    std::vector<double> v(n, 1.0);
    switch (spec.kind) {
        case ModelKind::TM1:
        case ModelKind::TM3:
            for (double& x : v) x = spec.sigma * spec.sigma;
            break;
        case ModelKind::TM2a:
        case ModelKind::TM4a:
        case ModelKind::TM4b:
            for (int i = 0; i < n; ++i)
                v[i] = spec.variances[sector_of_row(i, n, spec.weights)];
            break;
        case ModelKind::TM2b:
            // Stratified quantiles reproduce the power-law prior deterministically.
            for (int i = 0; i < n; ++i)
                v[i] = tm2b_variance_quantile(spec.lambda_min, (i + 0.5) / n);
            break;
        case ModelKind::TM4c:
            break;  // handled by the SVAR recursion
    }
    return v;
}

// Stationary AR(1) row with autocovariance var * exp(-|lag|/tau).
inline void fill_ar1_row(Eigen::MatrixXcd& R, int i, double var, double tau, RngStream& rng) {
    const int T = static_cast<int>(R.cols());
    const double phi = std::exp(-1.0 / tau);
    const double innov = var * (1.0 - phi * phi);
    R(i, 0) = rng.complex_normal(var);
    for (int a = 1; a < T; ++a) R(i, a) = phi * R(i, a - 1) + rng.complex_normal(innov);
}

}  // namespace detail

inline ReturnMatrix sample_gaussian_returns(const ModelSpec& spec, int n, int t_len,
                                            RngStream& rng) {
    if (n < 2 || t_len < 2) throw std::invalid_argument("N and T must be at least 2");
    spec.validate();
    ReturnMatrix rm;
    rm.n = n;
    rm.t_len = t_len;
    rm.spec = spec;
    rm.dist = ReturnDistribution::gaussian();
    rm.seed = rng.seed();
    rm.data.resize(n, t_len);
    switch (spec.kind) {
        case ModelKind::TM1:
        case ModelKind::TM2a:
        case ModelKind::TM2b: {
            const auto var = detail::row_variances(spec, n);
            for (int i = 0; i < n; ++i)
                for (int a = 0; a < t_len; ++a) rm.data(i, a) = rng.complex_normal(var[i]);
            break;
        }
        case ModelKind::TM3:
        case ModelKind::TM4a: {
            const auto var = detail::row_variances(spec, n);
            for (int i = 0; i < n; ++i)
                detail::fill_ar1_row(rm.data, i, var[i], spec.tau, rng);
            break;
        }
        case ModelKind::TM4b: {
            const auto var = detail::row_variances(spec, n);
            for (int i = 0; i < n; ++i) {
                const int k = detail::sector_of_row(i, n, spec.weights);
                detail::fill_ar1_row(rm.data, i, var[i], spec.taus[k], rng);
            }
            break;
        }
        case ModelKind::TM4c: {
            // SVAR recursion: market R_1 feeds every other asset; burn-in removes
            // the transient so the recorded window is stationary.
            const double a = spec.alpha, b = spec.beta, g = spec.gamma;
            const int burn = static_cast<int>(
                std::ceil(50.0 * std::max(1.0 / (1.0 - a), 1.0 / (1.0 - g))));
            Eigen::VectorXcd state = Eigen::VectorXcd::Zero(n);
            for (int step = 0; step < burn + t_len; ++step) {
                const cdouble market_prev = state(0);
                state(0) = rng.complex_normal(1.0) + a * market_prev;
                for (int i = 1; i < n; ++i)
                    state(i) = rng.complex_normal(1.0) + b * market_prev + g * state(i);
                if (step >= burn) rm.data.col(step - burn) = state;
            }
            break;
        }
    }
    return rm;
}

// Student returns for the uncorrelated model: version 1 draws one volatility per
// matrix, version 2 an independent volatility per time moment (shared by rows).
inline ReturnMatrix sample_student_returns(const ModelSpec& spec, int version, double mu,
                                           double theta, int n, int t_len, RngStream& rng) {
    if (spec.kind != ModelKind::TM1)
        throw std::invalid_argument("Student sampling is defined for the uncorrelated model");
    if (version != 1 && version != 2) throw std::invalid_argument("version must be 1 or 2");
    ReturnDistribution dist = ReturnDistribution::student(version, mu, theta);
    ReturnMatrix rm;
    rm.n = n;
    rm.t_len = t_len;
    rm.spec = spec;
    rm.dist = dist;
    rm.seed = rng.seed();
    rm.data.resize(n, t_len);
    auto draw_var = [&]() {
        // 1/sigma^2 ~ Gamma(mu/2, scale 2/theta^2)  =>  sigma = theta / sqrt(x),
        // x ~ Gamma(mu/2, scale 2).
        const double x = rng.gamma(0.5 * mu, 2.0);
        return theta * theta / x;
    };
    if (version == 1) {
        const double var = draw_var();
        for (int i = 0; i < n; ++i)
            for (int a = 0; a < t_len; ++a) rm.data(i, a) = rng.complex_normal(var);
    } else {
        for (int a = 0; a < t_len; ++a) {
            const double var = draw_var();
            for (int i = 0; i < n; ++i) rm.data(i, a) = rng.complex_normal(var);
        }
    }
    return rm;
}

// One draw from the stable law with characteristic exponent
// -gamma |k|^alpha (1 - i beta sign(k) tan(pi alpha / 2)), via the
// Chambers-Mallows-Stuck transform.
inline double sample_stable(double alpha, double beta, double gamma_range, RngStream& rng) {
    ReturnDistribution::levy(alpha, beta, gamma_range).validate();
    const double U = M_PI * (rng.uniform() - 0.5);
    const double W = rng.exponential();
    const double c = std::pow(gamma_range, 1.0 / alpha);
    if (alpha == 1.0) return c * std::tan(U);  // beta = 0 enforced by validate()
    const double ta = std::tan(M_PI * alpha / 2.0);
    const double B = std::atan(beta * ta) / alpha;
    const double S = std::pow(1.0 + beta * beta * ta * ta, 0.5 / alpha);
    const double x = S * std::sin(alpha * (U + B)) / std::pow(std::cos(U), 1.0 / alpha) *
                     std::pow(std::cos(U - alpha * (U + B)) / W, (1.0 - alpha) / alpha);
    return c * x;
}

// Heavy-tailed stand-in for the free Levy ensemble: iid stable entries.  With
// `scaled` the entries carry the T^{-1/alpha} factor; otherwise they are raw and
// the matching normalization is applied at the estimator stage.
inline ReturnMatrix sample_wigner_levy_returns(double alpha, double beta, double gamma_range,
                                               int n, int t_len, RngStream& rng,
                                               bool scaled = true) {
    ReturnMatrix rm;
    rm.n = n;
    rm.t_len = t_len;
    rm.spec = ModelSpec::tm1(1.0);
    rm.dist = ReturnDistribution::levy(alpha, beta, gamma_range);
    rm.seed = rng.seed();
    rm.data.resize(n, t_len);
    const double scale = scaled ? std::pow(static_cast<double>(t_len), -1.0 / alpha) : 1.0;
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < t_len; ++a)
            rm.data(i, a) = scale * sample_stable(alpha, beta, gamma_range, rng);
    return rm;
}

}  // namespace rmt
