#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "crcterm/affine.hpp"

using namespace crcterm;

namespace {

AffineModel identity_model() {
    return AffineModel(
        "identity", 1, 1, {}, [](const CVec&, const CVec&) { return Complex(0.0, 0.0); },
        [](const CVec&, const CVec&) { return CVec{Complex(0.0, 0.0)}; });
}

// Vasicek flow by geometric sums, written independently of the library's loop.
std::pair<Complex, Complex> vasicek_geometric(double a, double b, double sigma, Complex u, int n) {
    const double q = 1.0 - a;
    const double s1 = a == 0.0 ? n : (1.0 - std::pow(q, n)) / a;
    const double s2 = q * q == 1.0 ? n : (1.0 - std::pow(q, 2 * n)) / (1.0 - q * q);
    return {b * u * s1 + 0.5 * sigma * sigma * u * u * s2, std::pow(q, n) * u};
}

// E[exp(-sum_{k<t} R_k)] for the Gaussian recursion R' = R + b - aR + sigma W.
double vasicek_bond(double a, double b, double sigma, double r0, int t) {
    const double q = 1.0 - a;
    double mean = 0.0, var = 0.0;
    for (int k = 0; k < t; ++k) {
        double mk = std::pow(q, k) * r0;
        for (int j = 0; j < k; ++j) mk += b * std::pow(q, j);
        mean += mk;
    }
    for (int j = 0; j < t - 1; ++j) {
        double coef = 0.0;
        for (int k = j + 1; k < t; ++k) coef += std::pow(q, k - 1 - j);
        var += sigma * sigma * coef * coef;
    }
    return std::exp(-mean + 0.5 * var);
}

HestonParams ref_heston() {
    HestonParams h;
    h.a = 2.0;
    h.b = 0.04;
    h.c = 0.3;
    h.rho = -0.7;
    h.dt = 1.0 / 252.0;
    h.substeps = 8;
    return h;
}

}  // namespace

TEST(RiccatiFlow, IdentityFlow) {
    const auto flow = riccati_flow(identity_model(), {Complex(0.0, 1.0)}, {Complex(0.3, -0.2)}, 5);
    for (std::size_t k = 0; k <= 5; ++k) {
        EXPECT_EQ(flow.phi[k], Complex(0.0, 0.0));
        EXPECT_EQ(flow.psi[k][0], Complex(0.3, -0.2));
    }
}

TEST(RiccatiFlow, VasicekPsiAndPhi) {
    const auto f1 = riccati_flow(vasicek(0.5, 0.0, 0.0), {}, {1.0}, 2);
    EXPECT_NEAR(std::abs(f1.psi[2][0] - 0.25), 0.0, 1e-15);
    const auto f2 = riccati_flow(vasicek(0.0, 0.0, 1.0), {}, {1.0}, 3);
    EXPECT_NEAR(std::abs(f2.phi[3] - 1.5), 0.0, 1e-15);
}

TEST(VasicekClosedForm, Examples) {
    auto [phi0, psi0] = vasicek_closed_form(0.3, 0.1, 0.2, Complex(0.5, 0.1), 4, 4);
    EXPECT_EQ(phi0, Complex(0.0, 0.0));
    EXPECT_EQ(psi0, Complex(0.5, 0.1));
    auto [phi, psi] = vasicek_closed_form(0.0, 1.0, 0.0, 1.0, 0, 4);
    EXPECT_NEAR(std::abs(phi - 4.0), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(psi - 1.0), 0.0, 1e-15);
}

TEST(VasicekClosedForm, MatchesRecursionAndGeometricSums) {
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> ua(0.01, 0.9), ub(-0.1, 0.1), us(0.0, 0.5), uu(-3.0, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
        const double a = ua(gen), b = ub(gen), s = us(gen);
        const Complex u(uu(gen), uu(gen));
        const auto flow = riccati_flow(vasicek(a, b, s), {}, {u}, 30);
        for (int t = 0; t <= 30; ++t) {
            auto [phi, psi] = vasicek_closed_form(a, b, s, u, 0, t);
            auto [gphi, gpsi] = vasicek_geometric(a, b, s, u, t);
            EXPECT_LT(std::abs(flow.phi[t] - phi), 1e-12);
            EXPECT_LT(std::abs(flow.psi[t][0] - psi), 1e-12);
            EXPECT_LT(std::abs(gphi - phi), 1e-11 * (1.0 + std::abs(phi)));
            EXPECT_LT(std::abs(gpsi - psi), 1e-12);
        }
    }
}

TEST(RiccatiFlow, OverflowAndDomainExit) {
    auto explode = vasicek(-5.0, 0.0, 0.0);  // psi grows by 6x per step
    explode.overflow_bound = 1e6;
    try {
        riccati_flow(explode, {}, {1.0}, 20);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Overflow);
    }
    const auto h = heston(ref_heston());
    try {
        riccati_flow(h, {Complex(0.0, 0.0)}, {Complex(100.0, 0.0)}, 3);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DomainExit);
    }
}

TEST(Heston, NormalizationPreserved) {
    auto [phi, psi] = heston_discrete_onestep(ref_heston(), 0.0, 0.0);
    EXPECT_EQ(phi, Complex(0.0, 0.0));
    EXPECT_EQ(psi, Complex(0.0, 0.0));
}

TEST(Heston, LinearCaseMatchesExponential) {
    HestonParams h = ref_heston();
    h.c = 1e-300;  // the constructor demands c > 0; this is c = 0 numerically
    h.rho = 0.0;
    const Complex v(-0.5, 0.3);
    auto [phi, psi] = heston_discrete_onestep(h, 0.0, v);
    EXPECT_LT(std::abs(psi - v * std::exp(-h.a * h.dt)), 1e-14);
    EXPECT_LT(std::abs(phi - h.b * v * (1.0 - std::exp(-h.a * h.dt))), 1e-14);
}

TEST(Heston, SubstepConvergence) {
    HestonParams h = ref_heston();
    auto coarse = heston_discrete_onestep(h, 1.0, -0.5);
    h.substeps *= 2;
    auto fine = heston_discrete_onestep(h, 1.0, -0.5);
    EXPECT_LT(std::abs(coarse.first - fine.first), 1e-10);
    EXPECT_LT(std::abs(coarse.second - fine.second), 1e-10);
}

TEST(Semiflow, TrivialAndVasicek) {
    const auto m = vasicek(0.37, 0.02, 0.15);
    auto [p0, f0] = semiflow_residual(m, {}, {Complex(0.0, 1.3)}, 4, 4, 4);
    EXPECT_EQ(p0, 0.0);
    EXPECT_EQ(f0, 0.0);
    auto [p1, f1] = semiflow_residual(m, {}, {Complex(0.0, 1.3)}, 0, 3, 7);
    EXPECT_LT(p1, 1e-12);
    EXPECT_LT(f1, 1e-12);
}

TEST(Semiflow, Heston) {
    const auto m = heston(ref_heston());
    auto [p, f] = semiflow_residual(m, {Complex(0.0, 2.0)}, {Complex(0.0, 0.0)}, 0, 2, 5);
    EXPECT_LT(p, 1e-9);
    EXPECT_LT(f, 1e-9);
}

TEST(ForwardSurface, ZeroWithoutRandomness) {
    const auto grid = make_grid(UGrid::symmetric_1d(2.0, 5));
    const auto s = affine_forward_surface(identity_model(), {0.0}, grid, 6);
    EXPECT_EQ(max_abs(s), 0.0);
}

TEST(ForwardSurface, VasicekBondPrices) {
    const double a = 0.1, b = 0.003, sigma = 0.006, r0 = 0.025;
    const auto grid = make_grid(UGrid::symmetric_1d(10.0, 11));
    const auto theta = affine_forward_surface(vasicek_short_rate(a, b, sigma), {r0}, grid, 15);
    const std::size_t gi = *grid->find_imag(1.0);
    for (std::size_t t = 1; t <= 15; ++t) {
        const double p = std::exp(cumulate(theta, t)[gi].real());
        EXPECT_NEAR(p, vasicek_bond(a, b, sigma, r0, static_cast<int>(t)), 1e-14);
        EXPECT_LT(std::abs(cumulate(theta, t)[gi].imag()), 1e-15);
    }
}

TEST(ForwardSurface, TelescopesToFlow) {
    const auto m = heston(ref_heston());
    const auto grid = make_grid(UGrid::symmetric_1d(5.0, 9));
    const RVec Y{0.05};
    const auto theta = affine_forward_surface(m, Y, grid, 12);
    for (std::size_t g = 0; g < grid->size(); ++g) {
        auto [u, v] = m.pins(grid->point(g));
        const auto flow = riccati_flow(m, u, v, 12);
        const Complex expect = flow.phi[12] + (flow.psi[12][0] - v[0]) * Y[0];
        EXPECT_LT(std::abs(cumulate(theta, 12)[g] - expect), 1e-13);
    }
    EXPECT_EQ(normalization_defect(theta), 0.0);
    EXPECT_LT(hermitian_defect(theta), 1e-12);
}

TEST(ForwardSurface, CharacteristicFunctionBoundedByOne) {
    const auto grid = make_grid(UGrid::symmetric_1d(20.0, 21));
    std::mt19937_64 gen(8);
    std::uniform_real_distribution<double> uy(0.0, 0.3);
    for (int trial = 0; trial < 10; ++trial) {
        const RVec Y{uy(gen)};
        const auto th = affine_forward_surface(heston(ref_heston()), Y, grid, 20);
        const auto tv = affine_forward_surface(vasicek_short_rate(0.2, 0.01, 0.02), Y, grid, 20);
        for (std::size_t t = 1; t <= 20; ++t) {
            const CVec ch = cumulate(th, t), cv = cumulate(tv, t);
            for (std::size_t g = 0; g < grid->n_real(); ++g) {
                EXPECT_LE(ch[g].real(), 1e-14);
                EXPECT_LE(cv[g].real(), 1e-14);
            }
        }
    }
}

TEST(OneStepLaw, MonteCarloMatchesAffineProperty) {
    // E[exp(<u,X_1> + <v,Y_1>)] against exp(F + <u,X_0> + <v + R_C, Y_0>) at
    // purely imaginary arguments, within 4 standard errors.
    const int N = 200000;
    struct Case {
        AffineModel model;
        RVec x0, y0;
    };
    HestonParams big = ref_heston();
    big.dt = 0.25;
    big.substeps = 200;
    std::vector<Case> cases{{vasicek_short_rate(0.2, 0.01, 0.02), {0.0}, {0.03}}, {heston(big), {0.0}, {0.05}}};
    for (const auto& cs : cases) {
        for (double s : {1.0, 3.0}) {
            const CVec u{Complex(0.0, s)}, v{Complex(0.0, -0.5 * s)};
            Complex mean(0.0, 0.0);
            double m2 = 0.0;
            for (int p = 0; p < N; ++p) {
                RVec x = cs.x0, y = cs.y0;
                rng::Stream st(99, static_cast<std::uint64_t>(p), 0);
                cs.model.step(x, y, st);
                const Complex z = std::exp(u[0] * x[0] + v[0] * y[0]);
                mean += z;
                m2 += std::norm(z);
            }
            mean /= N;
            const double se = std::sqrt(std::max(0.0, m2 / N - std::norm(mean)) / N);
            const Complex target =
                std::exp(cs.model.F(u, v) + u[0] * cs.x0[0] + (v[0] + cs.model.R(u, v)[0]) * cs.y0[0]);
            EXPECT_LT(std::abs(mean - target), 4.0 * se)
                << cs.model.family() << " s=" << s;
        }
    }
}
