#pragma once
// Equal-time, time-lagged, weighted, and generalized covariance estimators.

#include <cmath>
#include <complex>
#include <iostream>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "rmt/sampling.hpp"

namespace rmt {

struct EstimatorMatrix {
    Eigen::MatrixXcd data;  // N x N
    bool hermitian = false;
    int lag = 0;
    ModelSpec spec;
};

// Circulant delay D_ab(t) = delta_{(a+t) mod T, b}; unitary, D(0) = I.
inline Eigen::MatrixXcd delay_matrix(int T, int t) {
    if (t < 0 || t >= T) throw std::invalid_argument("lag must lie in [0, T)");
    Eigen::MatrixXcd D = Eigen::MatrixXcd::Zero(T, T);
    for (int a = 0; a < T; ++a) D(a, (a + t) % T) = 1.0;
    return D;
}

inline EstimatorMatrix etce(const ReturnMatrix& R) {
    EstimatorMatrix e;
    e.data = (R.data * R.data.adjoint()) / static_cast<double>(R.t_len);
    e.data = 0.5 * (e.data + e.data.adjoint().eval());  // enforce exact Hermiticity
    e.hermitian = true;
    e.lag = 0;
    e.spec = R.spec;
    return e;
}

// c(t) = R D(t) R^dagger / T, computed via the column rotation R D(t) = R
// with columns shifted by t (avoids forming D explicitly).
inline EstimatorMatrix tlce(const ReturnMatrix& R, int t) {
    const int T = R.t_len;
    if (t < 0 || t >= T) throw std::invalid_argument("lag must lie in [0, T)");
    if (t > T / 10)
        std::cerr << "warning: lag " << t << " exceeds T/10 = " << T / 10
                  << "; the small-lag theory may not apply\n";
    if (t == 0) return etce(R);
    EstimatorMatrix e;
    // (R D(t))_{ib} = R_{i, (b - t) mod T}; the product is grouped exactly like
    // generalized_b so the E = D(t), F = I reduction is bitwise.
    Eigen::MatrixXcd rd(R.n, T);
    for (int b = 0; b < T; ++b) rd.col(b) = R.data.col((b - t + T) % T);
    const Eigen::MatrixXcd prod = rd * R.data.adjoint();
    e.data = prod / static_cast<double>(T);
    e.hermitian = false;
    e.lag = t;
    e.spec = R.spec;
    return e;
}

// R W D(t) W R^dagger / T with diagonal weights W = diag(w).
inline EstimatorMatrix weighted_estimator(const ReturnMatrix& R, const std::vector<double>& w,
                                          int t) {
    const int T = R.t_len;
    if (static_cast<int>(w.size()) != T) throw std::invalid_argument("weight length mismatch");
    for (double x : w)
        if (!(x > 0.0)) throw std::invalid_argument("weights must be positive");
    if (t < 0 || t >= T) throw std::invalid_argument("lag must lie in [0, T)");
    ReturnMatrix RW = R;
    for (int a = 0; a < T; ++a) RW.data.col(a) *= w[a];
    EstimatorMatrix e = (t == 0) ? etce(RW) : tlce(RW, t);
    e.spec = R.spec;
    return e;
}

// b = (1/T) R E R^dagger F.
inline EstimatorMatrix generalized_b(const ReturnMatrix& R, const Eigen::MatrixXcd& E,
                                     const Eigen::MatrixXcd& F) {
    if (E.rows() != R.t_len || E.cols() != R.t_len)
        throw std::invalid_argument("E must be T x T");
    if (F.rows() != R.n || F.cols() != R.n) throw std::invalid_argument("F must be N x N");
    EstimatorMatrix e;
    const Eigen::MatrixXcd re = R.data * E;
    const Eigen::MatrixXcd prod = (re * R.data.adjoint()) * F;
    e.data = prod / static_cast<double>(R.t_len);
    e.hermitian = false;
    e.lag = 0;
    e.spec = R.spec;
    return e;
}

// Heavy-tail normalization: R D(t) R^dagger * T^{-2/alpha} on raw stable entries.
inline EstimatorMatrix levy_estimator_normalization(const ReturnMatrix& R, double alpha,
                                                    int t) {
    const int T = R.t_len;
    if (t < 0 || t >= T) throw std::invalid_argument("lag must lie in [0, T)");
    EstimatorMatrix e;
    Eigen::MatrixXcd shifted(R.n, T);
    for (int a = 0; a < T; ++a) shifted.col(a) = R.data.col((a + t) % T);
    e.data = (R.data * shifted.adjoint()) * std::pow(static_cast<double>(T), -2.0 / alpha);
    e.hermitian = false;
    e.lag = t;
    e.spec = R.spec;
    return e;
}

}  // namespace rmt
