#pragma once
// Toy-model specifications and derived covariance kernels: EWMA weights,
// temporal Fourier kernels, SVAR market-mode entries and true eigenvalues.

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rmt/numerics.hpp"

namespace rmt {

enum class ModelKind { TM1, TM2a, TM2b, TM3, TM4a, TM4b, TM4c };

inline const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::TM1: return "TM1";
        case ModelKind::TM2a: return "TM2a";
        case ModelKind::TM2b: return "TM2b";
        case ModelKind::TM3: return "TM3";
        case ModelKind::TM4a: return "TM4a";
        case ModelKind::TM4b: return "TM4b";
        case ModelKind::TM4c: return "TM4c";
    }
    return "?";
}

struct ModelSpec {
    ModelKind kind = ModelKind::TM1;
    double sigma = 1.0;                // TM1, TM3
    std::vector<double> variances;     // TM2a, TM4a, TM4b: sigma_k^2
    std::vector<double> weights;       // TM2a, TM4a, TM4b: p_k
    double lambda_min = 0.35;          // TM2b
    double mu_slope = 2.0;             // TM2b (theory fixed to 2)
    double tau = 1.0;                  // TM3, TM4a
    std::vector<double> taus;          // TM4b: tau_k
    double alpha = 0.0, beta = 0.0, gamma = 0.0;  // TM4c beta coefficients
    int n_assets = 0;                  // TM4c: N stored in the spec

    static ModelSpec tm1(double sigma) {
        ModelSpec s;
        s.kind = ModelKind::TM1;
        s.sigma = sigma;
        s.validate();
        return s;
    }
    static ModelSpec tm2a(std::vector<double> variances, std::vector<double> weights) {
        ModelSpec s;
        s.kind = ModelKind::TM2a;
        s.variances = std::move(variances);
        s.weights = std::move(weights);
        s.validate();
        return s;
    }
    static ModelSpec tm2b(double lambda_min, double mu = 2.0) {
        ModelSpec s;
        s.kind = ModelKind::TM2b;
        s.lambda_min = lambda_min;
        s.mu_slope = mu;
        s.validate();
        return s;
    }
    static ModelSpec tm3(double sigma, double tau) {
        ModelSpec s;
        s.kind = ModelKind::TM3;
        s.sigma = sigma;
        s.tau = tau;
        s.validate();
        return s;
    }
    static ModelSpec tm4a(std::vector<double> variances, std::vector<double> weights,
                          double tau) {
        ModelSpec s;
        s.kind = ModelKind::TM4a;
        s.variances = std::move(variances);
        s.weights = std::move(weights);
        s.tau = tau;
        s.validate();
        return s;
    }
    static ModelSpec tm4b(std::vector<double> variances, std::vector<double> weights,
                          std::vector<double> taus) {
        ModelSpec s;
        s.kind = ModelKind::TM4b;
        s.variances = std::move(variances);
        s.weights = std::move(weights);
        s.taus = std::move(taus);
        s.validate();
        return s;
    }
    static ModelSpec tm4c(double alpha, double beta, double gamma, int n_assets) {
        ModelSpec s;
        s.kind = ModelKind::TM4c;
        s.alpha = alpha;
        s.beta = beta;
        s.gamma = gamma;
        s.n_assets = n_assets;
        s.validate();
        return s;
    }

    void validate() const {
        auto require = [](bool ok, const std::string& msg) {
            if (!ok) throw std::invalid_argument(msg);
        };
        switch (kind) {
            case ModelKind::TM1:
                require(sigma > 0.0, "sigma must be positive");
                break;
            case ModelKind::TM2a:
                check_sectors(false);
                break;
            case ModelKind::TM2b:
                require(mu_slope > 1.0, "mu must exceed 1");
                require(lambda_min > 0.0 && lambda_min < 1.0 - 1.0 / mu_slope,
                        "lambda_min must lie in (0, 1 - 1/mu)");
                break;
            case ModelKind::TM3:
                require(sigma > 0.0, "sigma must be positive");
                require(tau > 0.0, "tau must be positive");
                break;
            case ModelKind::TM4a:
                check_sectors(false);
                require(tau > 0.0, "tau must be positive");
                break;
            case ModelKind::TM4b:
                check_sectors(true);
                break;
            case ModelKind::TM4c:
                require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
                require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0,1)");
                require(n_assets >= 3, "TM4c needs at least 3 assets");
                break;
        }
    }

 private:
    void check_sectors(bool with_taus) const {
        if (variances.empty() || variances.size() != weights.size())
            throw std::invalid_argument("variances/weights size mismatch");
        double sum = 0.0;
        for (size_t k = 0; k < variances.size(); ++k) {
            if (!(variances[k] > 0.0)) throw std::invalid_argument("variances must be positive");
            if (!(weights[k] > 0.0)) throw std::invalid_argument("weights must be positive");
            sum += weights[k];
        }
        if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("weights must sum to 1");
        if (with_taus) {
            if (taus.size() != variances.size())
                throw std::invalid_argument("taus size mismatch");
            for (double t : taus)
                if (!(t > 0.0)) throw std::invalid_argument("taus must be positive");
        }
    }
};

enum class DistKind { Gaussian, StudentV1, StudentV2, FreeLevyProxy };

struct ReturnDistribution {
    DistKind kind = DistKind::Gaussian;
    double mu = 0.0, theta = 0.0;                       // Student
    double alpha = 2.0, beta = 0.0, gamma_range = 1.0;  // stable law

    static ReturnDistribution gaussian() { return {}; }
    static ReturnDistribution student(int version, double mu, double theta) {
        ReturnDistribution d;
        d.kind = (version == 1) ? DistKind::StudentV1 : DistKind::StudentV2;
        d.mu = mu;
        d.theta = theta;
        d.validate();
        return d;
    }
    static ReturnDistribution levy(double alpha, double beta, double gamma_range) {
        ReturnDistribution d;
        d.kind = DistKind::FreeLevyProxy;
        d.alpha = alpha;
        d.beta = beta;
        d.gamma_range = gamma_range;
        d.validate();
        return d;
    }

    void validate() const {
        if (kind == DistKind::StudentV1 || kind == DistKind::StudentV2) {
            if (!(mu > 0.0)) throw std::invalid_argument("Student mu must be positive");
            if (!(theta > 0.0)) throw std::invalid_argument("Student theta must be positive");
        }
        if (kind == DistKind::FreeLevyProxy) {
            if (!(alpha > 0.0 && alpha <= 2.0))
                throw std::invalid_argument("stable alpha must lie in (0,2]");
            if (!(beta >= -1.0 && beta <= 1.0))
                throw std::invalid_argument("stable beta must lie in [-1,1]");
            if (!(gamma_range > 0.0)) throw std::invalid_argument("stable gamma must be positive");
            if (alpha == 1.0 && beta != 0.0)
                throw std::invalid_argument("alpha = 1 with nonzero beta is not supported");
        }
    }
};

enum class EstimatorKind { ETCE, TLCE, WeightedETCE, WeightedTLCE, GeneralizedB };

struct EstimatorSpec {
    EstimatorKind kind = EstimatorKind::ETCE;
    int lag = 0;
    double vartheta = 0.0;  // EWMA parameter; kappa = exp(-vartheta/T)

    void validate(int T, bool allow_large_lag = false) const {
        if (lag < 0 || lag >= T) throw std::invalid_argument("lag must lie in [0, T)");
        if (!allow_large_lag && lag > 0 && 10 * lag > T)
            throw std::invalid_argument("lag exceeds T/10; pass allow_large_lag to override");
        if (kind == EstimatorKind::WeightedETCE || kind == EstimatorKind::WeightedTLCE) {
            if (!(vartheta > 0.0)) throw std::invalid_argument("vartheta must be positive");
        }
    }
};

// EWMA amplitudes w_a, a = 1..T: w_a^2 = T (1-kappa) kappa^{-a} / (kappa^{-T} - 1).
// The sum rule sum_a w_a^2 = T holds exactly.
inline std::vector<double> ewma_weights(int T, double kappa) {
    if (T < 1) throw std::invalid_argument("T must be at least 1");
    if (!(kappa > 0.0 && kappa < 1.0)) throw std::invalid_argument("kappa must lie in (0,1)");
    const double l = std::log(kappa);  // negative
    // log of T(1-kappa)/(kappa^{-T}-1), overflow-safe for -T*l large
    const double log_num = std::log(static_cast<double>(T)) + std::log(-std::expm1(l));
    const double log_den = (-T * l > 30.0) ? (-T * l) : std::log(std::expm1(-T * l));
    const double log_pref = log_num - log_den;
    std::vector<double> w(T);
    for (int i = 0; i < T; ++i) {
        const double a = static_cast<double>(i + 1);
        w[i] = std::exp(0.5 * (log_pref - a * l));
    }
    return w;
}

// Diagonal temporal Fourier kernel A_hat(u) on |u| = 1.
//   TM3:  A1/(A2 - u - 1/u) with A1 = 2 sigma^2 sinh(1/tau), A2 = 2 cosh(1/tau)
//   TM4a: same with sigma = 1 (variances live in the spatial prior)
//   TM4b: one entry per sector with (sigma_k, tau_k)
//   models without a temporal kernel: the constant 1
inline std::vector<cdouble> temporal_fourier_kernel(const ModelSpec& spec, cdouble u) {
    if (std::abs(std::abs(u) - 1.0) > 1e-12)
        throw std::invalid_argument("u must lie on the unit circle");
    auto entry = [&](double sigma2, double tau) -> cdouble {
        // A1/(A2 - u - 1/u) rescaled by e^{-1/tau} so sinh/cosh cannot overflow
        const double e = std::exp(-1.0 / tau);
        return sigma2 * (1.0 - e * e) / (1.0 + e * e - (u + 1.0 / u) * e);
    };
    switch (spec.kind) {
        case ModelKind::TM3:
            return {entry(spec.sigma * spec.sigma, spec.tau)};
        case ModelKind::TM4a:
            return {entry(1.0, spec.tau)};
        case ModelKind::TM4b: {
            std::vector<cdouble> out;
            out.reserve(spec.variances.size());
            for (size_t k = 0; k < spec.variances.size(); ++k)
                out.push_back(entry(spec.variances[k], spec.taus[k]));
            return out;
        }
        default:
            return {cdouble(1.0)};
    }
}

// SVAR market-mode Fourier entries (diagonal market/asset, first row, first column).
struct Tm4cFourierEntries {
    cdouble c1, c2, c3, c4;
};

inline Tm4cFourierEntries tm4c_fourier_entries(const ModelSpec& spec, cdouble u) {
    if (spec.kind != ModelKind::TM4c) throw std::invalid_argument("spec must be TM4c");
    if (std::abs(std::abs(u) - 1.0) > 1e-12)
        throw std::invalid_argument("u must lie on the unit circle");
    const double a = spec.alpha, b = spec.beta, g = spec.gamma;
    if (std::abs(a - g) < 1e-12) throw std::invalid_argument("degenerate betas");
    const double N = spec.n_assets;
    const cdouble da = (u - a) * (u * a - 1.0);
    const cdouble dg = (u - g) * (u * g - 1.0);
    Tm4cFourierEntries e;
    e.c1 = u * (-g * u * u + (1.0 + g * g + (N - 1.0) * b * b) * u - g) / (da * dg);
    e.c2 = -u / dg;
    e.c3 = -b * u / ((u - a) * dg);
    e.c4 = b * u * u / ((u * a - 1.0) * dg);
    return e;
}

// True covariance eigenvalues of the market-mode model at time lag c:
// lambda1 is (N-2)-fold degenerate; lambda2 <= lambda3 solve the quadratic.
struct Tm4cEigenvalues {
    double lambda1, lambda2, lambda3;
};

inline Tm4cEigenvalues tm4c_true_eigenvalues(const ModelSpec& spec, int c) {
    if (spec.kind != ModelKind::TM4c) throw std::invalid_argument("spec must be TM4c");
    const double a = spec.alpha, b = spec.beta, g = spec.gamma;
    if (std::abs(a - g) < 1e-12) throw std::invalid_argument("degenerate betas");
    const double N = spec.n_assets;
    const double ac = std::abs(static_cast<double>(c));
    const double apow = std::pow(a, ac), gpow = std::pow(g, ac), agpow = std::pow(a * g, ac);
    const double nb2 = (N - 1.0) * b * b;
    const double ag = 1.0 - a * g;
    const double q0 = (a - g) * (ag * ag + nb2) * agpow;
    const double q1 = -((1.0 - g * g) * ((a - g) * ag + nb2 * a) * apow +
                        (1.0 - a * a) * ((a - g) * ag - nb2 * g) * gpow) *
                      ag;
    const double q2 = (1.0 - a * a) * (1.0 - g * g) * (a - g) * ag * ag;
    const double disc = q1 * q1 - 4.0 * q2 * q0;
    if (disc < 0.0) throw std::runtime_error("non-Hermitian true covariance at this lag");
    const double s = std::sqrt(disc);
    double r1 = (-q1 - s) / (2.0 * q2), r2 = (-q1 + s) / (2.0 * q2);
    if (r1 > r2) std::swap(r1, r2);
    Tm4cEigenvalues ev;
    ev.lambda1 = gpow / (1.0 - g * g);
    ev.lambda2 = r1;
    ev.lambda3 = r2;
    return ev;
}

// Inverse CDF of the mu = 2 power-law variance prior.
inline double tm2b_variance_quantile(double lambda_min, double q) {
    if (!(lambda_min > 0.0 && lambda_min < 0.5))
        throw std::invalid_argument("lambda_min must lie in (0, 1/2)");
    if (!(q >= 0.0 && q < 1.0)) throw std::invalid_argument("unbounded quantile");
    return 2.0 * lambda_min - 1.0 + (1.0 - lambda_min) / std::sqrt(1.0 - q);
}

}  // namespace rmt
