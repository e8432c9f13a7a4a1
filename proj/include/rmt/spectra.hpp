#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#define lapack_complex_float std::complex<float>
#define lapack_complex_double std::complex<double>
#define lapack_complex_float_real(z) ((z).real())
#define lapack_complex_float_imag(z) ((z).imag())
#define lapack_complex_double_real(z) ((z).real())
#define lapack_complex_double_imag(z) ((z).imag())
#include <lapacke.h>

#include "rmt/estimators.hpp"

namespace rmt {

inline std::vector<double> eig_hermitian(const Eigen::MatrixXcd& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("eig_hermitian: square matrix required");
    if (!a.allFinite()) throw std::invalid_argument("eig_hermitian: non-finite entries");
    const lapack_int n = static_cast<lapack_int>(a.rows());
    if (n == 0) return {};
    // zheevd overwrites its input; column-major storage matches Eigen's default.
    Eigen::MatrixXcd work = a;
    std::vector<double> evals(static_cast<size_t>(n));
    lapack_int info = LAPACKE_zheevd(LAPACK_COL_MAJOR, 'N', 'L', n,
                                     work.data(), n, evals.data());
    if (info != 0) throw std::runtime_error("eig_hermitian: zheevd failed, info=" + std::to_string(info));
    return evals;
}

inline std::vector<cdouble> eig_general(const Eigen::MatrixXcd& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("eig_general: square matrix required");
    if (!a.allFinite()) throw std::invalid_argument("eig_general: non-finite entries");
    const lapack_int n = static_cast<lapack_int>(a.rows());
    if (n == 0) return {};
    Eigen::MatrixXcd work = a;
    std::vector<cdouble> evals(static_cast<size_t>(n));
    lapack_int info = LAPACKE_zgeev(LAPACK_COL_MAJOR, 'N', 'N', n,
                                    work.data(), n, evals.data(),
                                    nullptr, 1, nullptr, 1);
    if (info != 0) throw std::runtime_error("eig_general: zgeev failed, info=" + std::to_string(info));
    return evals;
}

// Eigenvalues pooled over independent samples, plus zero-mode bookkeeping.
struct SpectrumSample {
    std::vector<cdouble> eigenvalues;  // nonzero modes only
    long zero_modes = 0;               // |lambda| below threshold, counted separately
    long total = 0;                    // zero_modes + eigenvalues.size()
    double spectral_radius = 0.0;

    void add(const std::vector<cdouble>& evals) {
        double rad = spectral_radius;
        for (const auto& z : evals) rad = std::max(rad, std::abs(z));
        spectral_radius = rad;
        const double thresh = 1e-9 * std::max(rad, 1e-300);
        for (const auto& z : evals) {
            ++total;
            if (std::abs(z) < thresh) ++zero_modes;
            else eigenvalues.push_back(z);
        }
    }
    void add_real(const std::vector<double>& evals) {
        std::vector<cdouble> tmp(evals.begin(), evals.end());
        add(tmp);
    }
    double zero_mode_fraction() const {
        return total > 0 ? static_cast<double>(zero_modes) / static_cast<double>(total) : 0.0;
    }
};

struct DensityCurve {
    std::vector<double> centers;
    std::vector<double> edges;    // size centers.size()+1
    std::vector<double> density;  // normalized so that sum(density*width) = in-range mass
    double mass = 0.0;            // fraction of nonzero modes inside [edges.front, edges.back]
    double beyond_fraction = 0.0; // fraction of nonzero modes outside the range
    double zero_mode_fraction = 0.0;

    double bin_width(size_t i) const { return edges[i + 1] - edges[i]; }
};

namespace detail {

inline DensityCurve histogram_1d(const std::vector<double>& values, double lo, double hi,
                                 int nbins, long total_nonzero, double zero_frac) {
    if (nbins <= 0 || !(hi > lo)) throw std::invalid_argument("histogram: bad range/bins");
    DensityCurve out;
    out.edges.resize(static_cast<size_t>(nbins) + 1);
    const double w = (hi - lo) / nbins;
    for (int i = 0; i <= nbins; ++i) out.edges[static_cast<size_t>(i)] = lo + w * i;
    out.centers.resize(static_cast<size_t>(nbins));
    for (int i = 0; i < nbins; ++i) out.centers[static_cast<size_t>(i)] = lo + w * (i + 0.5);
    std::vector<long> counts(static_cast<size_t>(nbins), 0);
    long inside = 0;
    for (double v : values) {
        if (v < lo || v >= hi) continue;
        int b = static_cast<int>((v - lo) / w);
        b = std::min(b, nbins - 1);
        ++counts[static_cast<size_t>(b)];
        ++inside;
    }
    out.density.resize(static_cast<size_t>(nbins), 0.0);
    const double denom = std::max<long>(total_nonzero, 1) * w;
    for (int i = 0; i < nbins; ++i)
        out.density[static_cast<size_t>(i)] = counts[static_cast<size_t>(i)] / denom;
    out.mass = static_cast<double>(inside) / std::max<long>(total_nonzero, 1);
    out.beyond_fraction = 1.0 - out.mass;
    out.zero_mode_fraction = zero_frac;
    return out;
}

}  // namespace detail

// Histogram of |lambda| over the nonzero modes, density normalized per unit radius.
inline DensityCurve radial_histogram(const SpectrumSample& s, double r_max, int nbins) {
    std::vector<double> radii;
    radii.reserve(s.eigenvalues.size());
    for (const auto& z : s.eigenvalues) radii.push_back(std::abs(z));
    return detail::histogram_1d(radii, 0.0, r_max, nbins,
                                static_cast<long>(s.eigenvalues.size()), s.zero_mode_fraction());
}

// Histogram of Re(lambda) over the nonzero modes.
inline DensityCurve real_histogram(const SpectrumSample& s, double lo, double hi, int nbins) {
    std::vector<double> parts;
    parts.reserve(s.eigenvalues.size());
    for (const auto& z : s.eigenvalues) parts.push_back(z.real());
    return detail::histogram_1d(parts, lo, hi, nbins,
                                static_cast<long>(s.eigenvalues.size()), s.zero_mode_fraction());
}

// Max absolute deviation of per-sector angular counts from uniformity, in units of
// the Poisson scale sqrt(count/nsectors); values well above ~5 indicate anisotropy.
struct AsymmetryStat {
    double statistic = 0.0;
    double threshold = 0.0;
    bool isotropic = true;
};

inline AsymmetryStat rotational_asymmetry(const SpectrumSample& s, int nsectors = 16) {
    if (nsectors <= 1) throw std::invalid_argument("rotational_asymmetry: nsectors > 1 required");
    std::vector<long> counts(static_cast<size_t>(nsectors), 0);
    for (const auto& z : s.eigenvalues) {
        double ang = std::arg(z);  // [-pi, pi]
        int b = static_cast<int>((ang + M_PI) / (2.0 * M_PI) * nsectors);
        b = std::clamp(b, 0, nsectors - 1);
        ++counts[static_cast<size_t>(b)];
    }
    const double n = static_cast<double>(s.eigenvalues.size());
    const double expect = n / nsectors;
    const double scale = std::sqrt(std::max(expect, 1.0));
    double worst = 0.0;
    for (long c : counts) worst = std::max(worst, std::abs(c - expect) / scale);
    AsymmetryStat out;
    out.statistic = worst;
    out.threshold = 5.0;
    out.isotropic = worst <= out.threshold;
    return out;
}

// Fractions of nonzero modes leaking beyond the external circle and into the
// internal hole (finite-size effects around the predicted annulus).
struct OccupancyStat {
    double outside_fraction = 0.0;
    double inside_hole_fraction = 0.0;
};

inline OccupancyStat borderline_occupancy(const SpectrumSample& s, double r_ext,
                                          double r_int = 0.0) {
    if (!(r_int < r_ext))
        throw std::invalid_argument("borderline_occupancy: need r_int < r_ext");
    OccupancyStat out;
    if (s.eigenvalues.empty()) return out;
    long outside = 0, hole = 0;
    for (const auto& z : s.eigenvalues) {
        double r = std::abs(z);
        if (r > r_ext) ++outside;
        else if (r < r_int) ++hole;
    }
    const double n = static_cast<double>(s.eigenvalues.size());
    out.outside_fraction = outside / n;
    out.inside_hole_fraction = hole / n;
    return out;
}

// Occupancy over a uniform 2-d grid in the complex plane (row-major, y outer).
struct Grid2d {
    double x_lo = 0, x_hi = 0, y_lo = 0, y_hi = 0;
    int nx = 0, ny = 0;
    std::vector<double> density;  // nx*ny, normalized per unit area over nonzero modes

    double cell_area() const { return (x_hi - x_lo) / nx * ((y_hi - y_lo) / ny); }
    double& at(int ix, int iy) { return density[static_cast<size_t>(iy) * nx + ix]; }
    double at(int ix, int iy) const { return density[static_cast<size_t>(iy) * nx + ix]; }
};

inline Grid2d occupancy_grid(const SpectrumSample& s, double x_lo, double x_hi,
                             double y_lo, double y_hi, int nx, int ny) {
    if (nx <= 0 || ny <= 0 || !(x_hi > x_lo) || !(y_hi > y_lo))
        throw std::invalid_argument("occupancy_grid: bad range/bins");
    Grid2d g;
    g.x_lo = x_lo; g.x_hi = x_hi; g.y_lo = y_lo; g.y_hi = y_hi;
    g.nx = nx; g.ny = ny;
    g.density.assign(static_cast<size_t>(nx) * ny, 0.0);
    const double wx = (x_hi - x_lo) / nx, wy = (y_hi - y_lo) / ny;
    for (const auto& z : s.eigenvalues) {
        if (z.real() < x_lo || z.real() >= x_hi || z.imag() < y_lo || z.imag() >= y_hi) continue;
        int ix = std::min(static_cast<int>((z.real() - x_lo) / wx), nx - 1);
        int iy = std::min(static_cast<int>((z.imag() - y_lo) / wy), ny - 1);
        g.at(ix, iy) += 1.0;
    }
    const double denom = std::max<size_t>(s.eigenvalues.size(), 1) * wx * wy;
    for (double& d : g.density) d /= denom;
    return g;
}

// L1 distance between a histogram and a reference density evaluated at bin centers,
// restricted to centers in [lo, hi]: sum |rho_hist - rho_ref| * width.
inline double l1_distance(const DensityCurve& h, const std::vector<double>& ref,
                          double lo, double hi) {
    if (ref.size() != h.centers.size()) throw std::invalid_argument("l1_distance: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < h.centers.size(); ++i) {
        if (h.centers[i] < lo || h.centers[i] > hi) continue;
        acc += std::abs(h.density[i] - ref[i]) * h.bin_width(i);
    }
    return acc;
}

}  // namespace rmt
