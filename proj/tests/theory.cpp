// Theoretical spectra: closed-form densities, enclosing-circle radii, radial
// master-equation solvers, cross-check routes (dual solvers, rotation map,
// Abel pair), finite-size edge factor, and heavy-tailed variants.
#include <catch2/catch_amalgamated.hpp>

#include <rmt/numerics.hpp>
#include <rmt/theory.hpp>

#include <cmath>
#include <complex>
#include <functional>
#include <vector>

using rmt::cdouble;

namespace {

// midpoint rule: robust to (integrable) endpoint kinks of radial profiles
double midpoint(const std::function<double(double)>& f, double a, double b, int n) {
    double acc = 0.0;
    const double h = (b - a) / n;
    for (int i = 0; i < n; ++i) acc += f(a + (i + 0.5) * h);
    return acc * h;
}

double simpson(const std::function<double(double)>& f, double a, double b, int n) {
    if (n % 2) ++n;
    const double h = (b - a) / n;
    double acc = f(a) + f(b);
    for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> xs(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) xs[static_cast<size_t>(i)] = a + (b - a) * i / (n - 1);
    return xs;
}

std::vector<cdouble> polymul(const std::vector<cdouble>& a, const std::vector<cdouble>& b) {
    std::vector<cdouble> out(a.size() + b.size() - 1, 0.0);
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
    return out;
}

}  // namespace

TEST_CASE("closed-form reference densities") {
    SECTION("Marchenko-Pastur point values and edges") {
        CHECK(rmt::mp_density(1.0, 1.0, 2.0) == Catch::Approx(1.0 / (2.0 * M_PI)).epsilon(1e-12));
        CHECK(rmt::mp_density(0.25, 1.0, 0.2) == 0.0);
        CHECK(rmt::mp_density(0.25, 1.0, 2.3) == 0.0);
        CHECK(rmt::mp_density(0.25, 1.0, 0.26) > 0.0);
        CHECK(rmt::mp_density(0.25, 1.0, 2.24) > 0.0);
        // continuous mass = min(1, 1/r)
        for (double r : {0.25, 2.0}) {
            double lo = std::pow(1.0 - std::sqrt(r), 2), hi = std::pow(1.0 + std::sqrt(r), 2);
            double mass = midpoint([r](double x) { return rmt::mp_density(r, 1.0, x); },
                                   lo, hi, 40000);
            CHECK(mass == Catch::Approx(std::min(1.0, 1.0 / r)).margin(2e-4));
        }
    }
    SECTION("semicircle and uniform-disc curves") {
        CHECK(rmt::semicircle_density(1.0, 0.0) == Catch::Approx(1.0 / M_PI));
        CHECK(rmt::semicircle_density(1.0, 2.5) == 0.0);
        CHECK(rmt::disc_radial_density(1.0, 0.5) == Catch::Approx(1.0));
        CHECK(rmt::disc_radial_density(1.0, 1.5) == 0.0);
        CHECK(simpson([](double x) { return rmt::semicircle_density(1.0, x); }, -2.0, 2.0, 4000)
              == Catch::Approx(1.0).margin(1e-4));
        CHECK(simpson([](double R) { return rmt::disc_radial_density(1.0, R); }, 0.0, 1.0, 4000)
              == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("lagged-estimator radii, iid returns") {
    SECTION("point values") {
        auto a = rmt::iid_lag_radii(0.5, 1.0);
        CHECK(a.r_ext == Catch::Approx(std::sqrt(0.75)).epsilon(1e-12));
        CHECK_FALSE(a.int_present);
        auto b = rmt::iid_lag_radii(10.0, 1.0);
        CHECK(b.r_ext == Catch::Approx(std::sqrt(110.0)).epsilon(1e-12));
        CHECK(b.r_int == Catch::Approx(std::sqrt(72.9)).epsilon(1e-12));
        CHECK(b.r_int < b.r_ext);
    }
    SECTION("radii scale as sigma^2") {
        auto u = rmt::iid_lag_radii(3.0, 1.0);
        auto s = rmt::iid_lag_radii(3.0, 1.7);
        CHECK(s.r_ext == Catch::Approx(1.7 * u.r_ext).epsilon(1e-12));
        CHECK(s.r_int == Catch::Approx(1.7 * u.r_int).epsilon(1e-12));
    }
}

TEST_CASE("iid radial density closed form") {
    SECTION("normalization") {
        // full-spectrum radial mass is min(1, 1/r); zero modes carry the rest
        for (double r : {0.5, 2.0}) {
            auto rad = rmt::iid_lag_radii(r, 1.0);
            double lo = rad.int_present ? rad.r_int : 0.0;
            double mass = midpoint([r](double R) { return rmt::iid_lag_radial_density(r, 1.0, R); },
                                   lo, rad.r_ext, 60000);
            CHECK(mass == Catch::Approx(std::min(1.0, 1.0 / r)).margin(1e-6));
        }
    }
    SECTION("dual route: density cubic versus M-cubic derivative") {
        const double r = 0.5, R = 0.6, h = 1e-5;
        double direct = rmt::iid_lag_radial_density(r, 1.0, R);
        double diff = (rmt::iid_lag_M_cubic(r, 1.0, R + h) -
                       rmt::iid_lag_M_cubic(r, 1.0, R - h)) / (2.0 * h);
        CHECK(direct == Catch::Approx(diff).margin(1e-4));
    }
    SECTION("zero outside the support") {
        CHECK(rmt::iid_lag_radial_density(0.5, 1.0, 0.9) == 0.0);
        CHECK(rmt::iid_lag_radial_density(10.0, 1.0, 8.0) == 0.0);
    }
}

TEST_CASE("radial master equation, general true covariance") {
    SECTION("iid reduction matches the cubic branch") {
        auto solver = rmt::RotSolver::general_cov(rmt::mtransform_point(1.0), 0.5);
        for (double R : {0.1, 0.3, 0.5, 0.7, 0.86}) {
            CHECK(solver.solve_M(R) ==
                  Catch::Approx(rmt::iid_lag_M_cubic(0.5, 1.0, R)).margin(1e-8));
        }
    }
    SECTION("boundary values") {
        auto s1 = rmt::RotSolver::general_cov(rmt::mtransform_point(1.0), 0.5);
        CHECK(std::abs(s1.solve_M(s1.r_ext())) < 1e-5);
        auto s2 = rmt::RotSolver::general_cov(rmt::mtransform_point(1.0), 2.0);
        CHECK(std::abs(s2.solve_M(s2.r_int()) + 0.5) < 1e-5);
    }
    SECTION("monotonicity of M on a 200-point grid") {
        struct Case { rmt::RotSolver s; const char* name; };
        std::vector<rmt::RotSolver> solvers;
        solvers.push_back(rmt::RotSolver::general_cov(rmt::mtransform_point(1.0), 0.5));
        solvers.push_back(rmt::RotSolver::general_cov(rmt::mtransform_point(1.0), 2.0));
        solvers.push_back(rmt::RotSolver::general_cov(
            rmt::mtransform_discrete({0.5, 0.5}, {1.0, 5.0}), 0.5));
        solvers.push_back(rmt::RotSolver::diag_weights(rmt::mtransform_exp_weights(2.0), 0.5));
        solvers.push_back(rmt::RotSolver::diag_weights(
            rmt::mtransform_inverse_gamma(10.0, std::sqrt(10.0)), 0.5));
        for (auto& s : solvers) {
            double prev = -2.0;
            for (double R : linspace(1e-3, s.r_ext() * (1.0 + 1e-9), 200)) {
                double M = s.solve_M(R);
                CHECK(M >= prev - 1e-10);
                prev = M;
            }
            CHECK(std::abs(s.solve_M(s.r_ext())) < 1e-5);
        }
    }
    SECTION("mass law from dM/dR") {
        auto s = rmt::RotSolver::general_cov(
            rmt::mtransform_discrete({0.5, 0.5}, {1.0, 5.0}), 0.5);
        auto radii = linspace(1e-4, s.r_ext() * (1.0 - 1e-9), 3001);
        auto rho = s.density_curve(radii);
        double mass = 0.0;
        for (size_t i = 0; i + 1 < radii.size(); ++i)
            mass += 0.5 * (rho[i] + rho[i + 1]) * (radii[i + 1] - radii[i]);
        CHECK(mass == Catch::Approx(1.0).margin(1e-4));
    }
}

TEST_CASE("circle radii with general covariance or weights") {
    SECTION("two-sector external radius") {
        auto c = rmt::mtransform_discrete({0.5, 0.5}, {1.0, 5.0});
        auto rad = rmt::circle_radii_general_cov(c, 0.5);
        CHECK(rad.r_ext * rad.r_ext == Catch::Approx(8.75).epsilon(1e-10));
        CHECK_FALSE(rad.int_present);
    }
    SECTION("single sector reduces to the iid radii") {
        auto rad = rmt::circle_radii_general_cov(rmt::mtransform_point(1.3), 3.0);
        auto iid = rmt::iid_lag_radii(3.0, 1.3);
        CHECK(rad.r_ext == Catch::Approx(iid.r_ext).epsilon(1e-10));
        CHECK(rad.r_int == Catch::Approx(iid.r_int).epsilon(1e-8));
    }
    SECTION("two-sector internal radius satisfies the f-equation") {
        auto c = rmt::mtransform_discrete({0.5, 0.5}, {1.0, 5.0});
        const double r = 2.0;
        double f = rmt::negative_axis_crossing(c, r);
        // defining property: sum_k p_k s_k^2/(f + s_k^2) = 1/r
        double lhs = 0.5 * 1.0 / (f + 1.0) + 0.5 * 5.0 / (f + 5.0);
        CHECK(lhs == Catch::Approx(1.0 / r).margin(1e-10));
        double rint2 = r * f * f * f *
                       (0.5 * 1.0 / std::pow(f + 1.0, 2) + 0.5 * 5.0 / std::pow(f + 5.0, 2));
        auto rad = rmt::circle_radii_general_cov(c, r);
        CHECK(rad.r_int * rad.r_int == Catch::Approx(rint2).epsilon(1e-8));
    }
    SECTION("exponential weights in closed form") {
        const double vt = 2.0, r = 0.5;
        auto rad = rmt::circle_radii_diag_weights(rmt::mtransform_exp_weights(vt), r);
        double m2 = 0.5 * vt / std::tanh(0.5 * vt);
        CHECK(rad.r_ext * rad.r_ext == Catch::Approx(r * (1.0 + r * m2)).epsilon(1e-8));
        const double r2 = 2.0, vt2 = 4.0;
        auto rad2 = rmt::circle_radii_diag_weights(rmt::mtransform_exp_weights(vt2), r2);
        double x = 0.5 * vt2;
        double rint2 = std::pow(r2 - 1.0, 3) * std::pow(x / std::sinh(x), 4) /
                       ((r2 - 1.0) * x / std::tanh(x) + 1.0);
        CHECK(rad2.r_int * rad2.r_int == Catch::Approx(rint2).epsilon(1e-6));
    }
    SECTION("exponential weights flatten to the iid radii") {
        auto rad = rmt::circle_radii_diag_weights(rmt::mtransform_exp_weights(1e-8), 2.0);
        auto iid = rmt::iid_lag_radii(2.0, 1.0);
        CHECK(rad.r_ext == Catch::Approx(iid.r_ext).epsilon(1e-6));
        CHECK(rad.r_int == Catch::Approx(iid.r_int).epsilon(1e-6));
    }
    SECTION("inverse-gamma variance profile (heavy-tailed returns, v2)") {
        const double mu = 10.0, th2 = 10.0, r = 0.5;
        auto rad = rmt::circle_radii_diag_weights(
            rmt::mtransform_inverse_gamma(mu, std::sqrt(th2)), r);
        double closed = r * th2 * th2 * ((r + 1.0) * mu - 2.0 * (r + 2.0)) /
                        (std::pow(mu - 2.0, 2) * (mu - 4.0));
        CHECK(rad.r_ext * rad.r_ext == Catch::Approx(closed).epsilon(1e-6));
        auto rad2 = rmt::circle_radii_diag_weights(
            rmt::mtransform_inverse_gamma(mu, std::sqrt(th2)), 2.0);
        // negative moments: m_{-1} = mu/theta^2, m_{-2} = mu(mu+2)/theta^4
        double rint2 = 1.0 / (1.0 + 1.0 * (mu + 2.0) / th2);
        CHECK(rad2.r_int * rad2.r_int == Catch::Approx(rint2).epsilon(1e-4));
    }
    SECTION("power-law spectrum: infinite external radius, finite internal one") {
        auto c = rmt::mtransform_power_law(0.35);
        auto rad = rmt::circle_radii_general_cov(c, 2.0);
        CHECK_FALSE(rad.ext_finite);
        CHECK(rad.int_present);
        CHECK(rad.r_int == Catch::Approx(rmt::power_law_internal_radius(0.35, 2.0)).epsilon(1e-6));
        // consistency: the f-root satisfies Re M_C(-f) = -1/r
        double f = rmt::negative_axis_crossing(c, 2.0);
        CHECK(c.M(cdouble(-f, 0.0)).real() == Catch::Approx(-0.5).margin(1e-8));
    }
}

TEST_CASE("power-law M-transform branch") {
    auto c = rmt::mtransform_power_law(0.35);
    const double l = 0.35;
    auto rho = [l](double lam) {
        return lam < l ? 0.0 : 2.0 * std::pow(1.0 - l, 2) / std::pow(lam + 1.0 - 2.0 * l, 3);
    };
    SECTION("closed form versus quadrature at 10 points") {
        std::vector<cdouble> zs = {{1.0, 0.5},  {2.0, 1.0},  {-1.0, 0.7}, {0.5, 2.0},
                                   {3.0, 0.2},  {-2.5, 1.5}, {0.2, 0.9},  {4.0, 3.0},
                                   {-0.4, 0.3}, {1.5, 0.05}};
        for (const auto& z : zs) {
            // M_C(z) = int rho(lam) lam/(z - lam) dlam, lam = l + s/(1-s)
            auto re = [&](double s) {
                double lam = l + s / (1.0 - s);
                cdouble v = rho(lam) * lam / (z - lam) / std::pow(1.0 - s, 2);
                return v.real();
            };
            auto im = [&](double s) {
                double lam = l + s / (1.0 - s);
                cdouble v = rho(lam) * lam / (z - lam) / std::pow(1.0 - s, 2);
                return v.imag();
            };
            cdouble quad(simpson(re, 0.0, 1.0 - 1e-9, 20000),
                         simpson(im, 0.0, 1.0 - 1e-9, 20000));
            CHECK(std::abs(c.M(z) - quad) < 1e-6);
        }
    }
    SECTION("Schwarz reflection below the axis") {
        cdouble z(1.3, 0.8);
        CHECK(std::abs(c.M(std::conj(z)) - std::conj(c.M(z))) < 1e-12);
    }
    SECTION("variance density normalization and moments") {
        CHECK(simpson([&rho](double s) {
                  double lam = l + s / (1.0 - s);
                  return rho(lam) / std::pow(1.0 - s, 2);
              }, 0.0, 1.0 - 1e-9, 20000) == Catch::Approx(1.0).margin(1e-8));
        CHECK(c.m1 == Catch::Approx(1.0).epsilon(1e-10));  // mean variance is 1
    }
    SECTION("domain guard") {
        CHECK_THROWS(rmt::mtransform_power_law(0.6));
        CHECK_THROWS(rmt::mtransform_power_law(0.0));
    }
}

TEST_CASE("equal-time solver with general covariance") {
    SECTION("identity covariance reduces to Marchenko-Pastur") {
        rmt::EqualTimeSolver s(rmt::mtransform_point(1.0), 0.25);
        for (double x : linspace(0.35, 2.15, 100)) {
            CHECK(s.density(x) == Catch::Approx(rmt::mp_density(0.25, 1.0, x)).margin(1e-8));
        }
    }
    SECTION("two-sector density: nonnegative, normalized, bimodal") {
        auto c = rmt::mtransform_discrete({0.5, 0.5}, {1.0, 5.0});
        rmt::EqualTimeSolver s(c, 0.1);
        auto xs = linspace(1e-3, 8.5, 3000);
        auto rho = s.density_curve(xs);
        double mass = 0.0;
        int sign_changes = 0;
        for (size_t i = 0; i < xs.size(); ++i) {
            CHECK(rho[i] >= 0.0);
            if (i) {
                mass += 0.5 * (rho[i] + rho[i - 1]) * (xs[i] - xs[i - 1]);
                if (i + 1 < xs.size()) {
                    bool up = rho[i] > rho[i - 1], dn = rho[i] > rho[i + 1];
                    if (up && dn && rho[i] > 0.05) ++sign_changes;
                }
            }
        }
        CHECK(mass == Catch::Approx(1.0).margin(2e-3));
        CHECK(sign_changes == 2);  // one lump per sector at r = 0.1
    }
    SECTION("two-sector fixed point versus the cleared polynomial") {
        // M = sum_k p_k s_k (rM+1) / (z - s_k (rM+1)) clears to a cubic in M
        const double r = 0.1, p1 = 0.5, p2 = 0.5, s1 = 1.0, s2 = 5.0;
        auto c = rmt::mtransform_discrete({p1, p2}, {s1, s2});
        rmt::EqualTimeSolver solver(c, r);
        for (double x : {0.8, 1.2, 4.0, 5.5, 6.2}) {
            cdouble z(x, 1e-6);
            cdouble M = solver.solve_M(z);
            std::vector<cdouble> lin = {1.0, r};  // rM + 1, ascending in M
            std::vector<cdouble> f1 = {z - s1, -s1 * r};
            std::vector<cdouble> f2 = {z - s2, -s2 * r};
            // M f1 f2 - (rM+1)[p1 s1 f2 + p2 s2 f1] = 0
            auto lhs = polymul(std::vector<cdouble>{0.0, 1.0}, polymul(f1, f2));
            auto mix = polymul(lin, {p1 * s1 * f2[0] + p2 * s2 * f1[0],
                                     p1 * s1 * f2[1] + p2 * s2 * f1[1]});
            for (size_t i = 0; i < mix.size(); ++i) lhs[i] -= mix[i];
            auto roots = rmt::poly_roots(rmt::Polynomial{lhs}).roots;
            double best = 1e300;
            for (const auto& root : roots) best = std::min(best, std::abs(root - M));
            CHECK(best < 1e-8);
        }
    }
}

TEST_CASE("rotation cross-check of the lagged radial solution") {
    SECTION("iid returns") {
        auto solver = rmt::RotSolver::general_cov(rmt::mtransform_point(1.0), 0.5);
        double direct = solver.solve_M(0.5);
        double crossed = rmt::rotation_crosscheck_M(rmt::mtransform_point(1.0), 0.5, 0.5);
        CHECK(std::abs(direct - crossed) < 1e-8);
    }
    SECTION("two sectors over 20 radii") {
        auto c = rmt::mtransform_discrete({0.5, 0.5}, {1.0, 5.0});
        auto solver = rmt::RotSolver::general_cov(c, 0.5);
        for (double R : linspace(0.2, solver.r_ext() * 0.98, 20)) {
            double direct = solver.solve_M(R);
            double crossed = rmt::rotation_crosscheck_M(c, 0.5, R);
            CHECK(std::abs(direct - crossed) < 1e-6);
        }
    }
    SECTION("degenerate radius at the external edge") {
        auto solver = rmt::RotSolver::general_cov(rmt::mtransform_point(1.0), 0.5);
        CHECK(solver.solve_M(solver.r_ext()) == 0.0);
        CHECK(std::abs(rmt::rotation_crosscheck_M(rmt::mtransform_point(1.0), 0.5,
                                                  solver.r_ext())) < 1e-6);
    }
}

TEST_CASE("incorrect multiplication shortcut") {
    SECTION("iid case: visibly different density, same external radius") {
        const double r = 0.5;
        auto c2 = rmt::mtransform_point(1.0);  // C = I implies C^2 = I
        auto solver = rmt::RotSolver::general_cov(rmt::mtransform_point(1.0), r);
        auto radii = linspace(0.05, solver.r_ext() * 0.999, 200);
        auto wrong = rmt::naive_product_law_density(c2, r, radii);
        auto correct = solver.density_curve(radii);
        double worst = 0.0;
        for (size_t i = 0; i < radii.size(); ++i)
            worst = std::max(worst, std::abs(wrong[i] - correct[i]));
        CHECK(worst > 1e-3);
        // shared boundary condition M(r_ext) = 0
        double m_edge = rmt::naive_product_law_M(c2, r, solver.r_ext(), -1e-6);
        CHECK(std::abs(m_edge) < 1e-3);
    }
    SECTION("five sectors: disagreement shrinks with r") {
        std::vector<double> p(5, 0.2), s2 = {1.0, 2.0, 4.0, 6.0, 8.0};
        std::vector<double> s4(5);
        for (int i = 0; i < 5; ++i) s4[static_cast<size_t>(i)] = s2[static_cast<size_t>(i)] *
                                                                 s2[static_cast<size_t>(i)];
        auto c = rmt::mtransform_discrete(p, s2);
        auto c2 = rmt::mtransform_discrete(p, s4);
        double l1[2];
        int k = 0;
        for (double r : {0.1, 0.5}) {
            auto solver = rmt::RotSolver::general_cov(c, r);
            auto radii = linspace(0.05, solver.r_ext() * 0.995, 120);
            auto wrong = rmt::naive_product_law_density(c2, r, radii);
            auto correct = solver.density_curve(radii);
            double acc = 0.0;
            for (size_t i = 0; i + 1 < radii.size(); ++i)
                acc += std::abs(wrong[i] - correct[i]) * (radii[i + 1] - radii[i]);
            l1[k++] = acc;
        }
        CHECK(l1[0] < l1[1]);  // smaller discrepancy at r = 0.1 than at r = 0.5
        CHECK(l1[1] > 1e-4);   // but resolvable at r = 0.5
    }
}

TEST_CASE("heavy-tailed variance mixture (per-sample volatility)") {
    SECTION("mass law") {
        const double r = 0.5, mu = 5.0, theta = std::sqrt(5.0);
        double mass = midpoint([&](double R) {
            return rmt::scale_mixture_radial_density(r, mu, theta, R);
        }, 1e-4, 60.0, 30000);
        CHECK(mass == Catch::Approx(1.0).margin(1e-3));
    }
    SECTION("Gaussian limit at large tail index") {
        const double mu = 1e4, theta = std::sqrt(mu);  // variance -> theta^2/mu = 1
        for (double R : {0.3, 0.5, 0.7}) {
            double mixed = rmt::scale_mixture_radial_density(0.5, mu, theta, R);
            double pure = rmt::iid_lag_radial_density(0.5, 1.0, R);
            CHECK(mixed == Catch::Approx(pure).epsilon(0.01));
        }
    }
    SECTION("power-law tail: R^{1+mu/2} rho bounded") {
        const double r = 0.5, mu = 5.0, theta = std::sqrt(5.0);
        double prev = 0.0;
        for (double R : {20.0, 40.0, 80.0}) {
            double v = std::pow(R, 1.0 + mu / 2.0) *
                       rmt::scale_mixture_radial_density(r, mu, theta, R);
            CHECK(v > 0.0);
            CHECK(v < 1e3);
            if (prev > 0.0) CHECK(v / prev < 2.0);  // no growth beyond the power law
            prev = v;
        }
    }
}

TEST_CASE("stable-law returns: radial master equation") {
    SECTION("alpha = 2 recovers the Gaussian branch") {
        const double r = 0.5;
        for (double R : {0.2, 0.4, 0.6, 0.8}) {
            double M = rmt::stable_lag_solve(2.0, 1.0, r, R).M;
            CHECK(M == Catch::Approx(rmt::iid_lag_M_cubic(r, 1.0, R)).margin(1e-6));
        }
    }
    SECTION("alpha = 3/2: positive density, unbounded support") {
        auto radii = linspace(0.3, 6.0, 40);
        auto rho = rmt::stable_lag_density_curve(1.5, 0.0, 1.0, 0.5, radii);
        int positive = 0;
        for (double v : rho)
            if (v > 0.0) ++positive;
        CHECK(positive == 40);  // no finite edge in this window
        CHECK(rho.back() < rho.front());
    }
    SECTION("zero-skew path agrees with the full system at tiny skew") {
        for (double R : {0.4, 0.8, 1.5}) {
            auto a = rmt::stable_lag_solve(1.5, 1.0, 0.5, R);
            auto b = rmt::stable_lag_solve_skew(1.5, 1e-9, 1.0, 0.5, R);
            CHECK(std::abs(a.M - b.M) < 1e-5);
            CHECK(std::abs(a.m - b.m) < 1e-5);
        }
    }
    SECTION("mass bookkeeping via M(R)") {
        // -M(R) is the eigenvalue fraction outside radius R; it sweeps from
        // min(1,1/r) near 0 to 0 at infinity
        const double r = 0.5;
        double inner = rmt::stable_lag_M(1.5, 0.0, 1.0, r, 0.05);
        double outer = rmt::stable_lag_M(1.5, 0.0, 1.0, r, 80.0);
        CHECK(inner == Catch::Approx(-1.0).margin(5e-3));
        CHECK(std::abs(outer) < 5e-3);
    }
}

TEST_CASE("finite-size edge factor") {
    SECTION("half value on the edge, decay beyond it") {
        CHECK(rmt::erfc_edge_factor(0.8, 0.8, 3.0, +1, 1000) == Catch::Approx(0.5));
        CHECK(rmt::erfc_edge_factor(1.2, 0.8, 3.0, +1, 1000) < 1e-10);
        CHECK(rmt::erfc_edge_factor(0.4, 0.8, 3.0, +1, 1000) == Catch::Approx(1.0).margin(1e-10));
        CHECK(rmt::erfc_edge_factor(0.4, 0.8, 3.0, -1, 1000) < 1e-10);  // internal edge flips
    }
    SECTION("q recovery on synthetic smoothed data") {
        const double r = 0.5, q_true = 2.0, n_dim = 1000.0;
        auto rad = rmt::iid_lag_radii(r, 1.0);
        auto theory = [r](double R) { return rmt::iid_lag_radial_density(r, 1.0, R); };
        const double amp = theory(rad.r_ext - 2.0 / std::sqrt(n_dim));
        std::vector<double> centers, widths, observed;
        for (double R = rad.r_ext - 0.25; R < rad.r_ext + 0.25; R += 0.004) {
            centers.push_back(R);
            widths.push_back(0.004);
            double base = R <= rad.r_ext ? theory(R) : amp;
            observed.push_back(base * rmt::erfc_edge_factor(R, rad.r_ext, q_true, +1, n_dim));
        }
        auto fit = rmt::fit_edge_width(centers, widths, observed, theory, rad.r_ext, +1, n_dim);
        CHECK(fit.q == Catch::Approx(q_true).epsilon(0.05));
        CHECK(fit.l1_smoothed < fit.l1_sharp);
    }
}

TEST_CASE("Abel transform pair") {
    SECTION("uniform disc maps onto the matching semicircle") {
        // normal-operator control: forward transform of the disc radial profile
        // equals sqrt(2) rho_real(sqrt(2) x) with the Hermitian counterpart
        double control = 0.0;
        for (double x : linspace(0.05, 0.9, 30)) {
            double lhs = rmt::abel_forward(
                [](double R) { return rmt::disc_radial_density(1.0, R); }, 1.0, x, 4000);
            double rhs = std::sqrt(2.0) * rmt::semicircle_density(0.5, std::sqrt(2.0) * x);
            control = std::max(control, std::abs(lhs - rhs));
        }
        CHECK(control < 1e-4);
    }
    SECTION("the lagged iid spectrum is not normal: relation fails") {
        const double r = 0.5;
        auto rad = rmt::iid_lag_radii(r, 1.0);
        auto xs = linspace(0.05, 0.55, 30);
        auto real_rho = rmt::iid_lag_real_part_density(r, [&] {
            std::vector<double> sx(xs.size());
            for (size_t i = 0; i < xs.size(); ++i) sx[i] = std::sqrt(2.0) * xs[i];
            return sx;
        }());
        double worst = 0.0;
        for (size_t i = 0; i < xs.size(); ++i) {
            double lhs = rmt::abel_forward(
                [r](double R) { return rmt::iid_lag_radial_density(r, 1.0, R); },
                rad.r_ext, xs[i], 4000);
            double rhs = std::sqrt(2.0) * real_rho[i];
            worst = std::max(worst, std::abs(lhs - rhs));
        }
        CHECK(worst > 10.0 * 1e-4);  // at least 10x the normal-operator control
    }
    SECTION("point mass on a ring") {
        // rho concentrated at R = 1 gives f(x) = 1/(pi sqrt(1 - x^2))
        const double w = 5e-4;
        auto ring = [w](double R) {
            return std::exp(-0.5 * std::pow((R - 1.0) / w, 2)) / (w * std::sqrt(2.0 * M_PI));
        };
        for (double x : {0.3, 0.5, 0.7}) {
            double got = rmt::abel_forward(ring, 1.0 + 8.0 * w, x, 40000);
            CHECK(got == Catch::Approx(1.0 / (M_PI * std::sqrt(1.0 - x * x))).epsilon(1e-3));
        }
    }
    SECTION("inverse transform recovers the disc profile") {
        auto f = [](double x) {
            return x >= 1.0 ? 0.0 : 2.0 * std::sqrt(1.0 - x * x) / M_PI;
        };
        for (double R : {0.3, 0.5, 0.8}) {
            CHECK(rmt::abel_inverse(f, 1.0, R, 4000) ==
                  Catch::Approx(rmt::disc_radial_density(1.0, R)).margin(2e-3));
        }
    }
}

TEST_CASE("real-part density of the lagged iid spectrum") {
    SECTION("even in x, normalized") {
        auto xs = linspace(-1.0, 1.0, 801);
        auto rho = rmt::iid_lag_real_part_density(0.5, xs);
        for (size_t i = 0; i < xs.size() / 2; ++i)
            CHECK(rho[i] == Catch::Approx(rho[xs.size() - 1 - i]).margin(1e-6));
        double mass = 0.0;
        for (size_t i = 0; i + 1 < xs.size(); ++i)
            mass += 0.5 * (rho[i] + rho[i + 1]) * (xs[i + 1] - xs[i]);
        CHECK(mass == Catch::Approx(1.0).margin(5e-3));
    }
}
