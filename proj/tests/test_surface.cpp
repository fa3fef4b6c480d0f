#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "crcterm/surface.hpp"

using namespace crcterm;

namespace {

CharSurface random_surface(const GridPtr& grid, std::size_t horizon, unsigned seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> n01;
    return CharSurface::tabulate(grid, horizon, [&](std::size_t, std::size_t) { return Complex(n01(gen), n01(gen)); });
}

}  // namespace

TEST(UGrid, SymmetricFactoryHasZeroAndNegations) {
    const auto grid = UGrid::symmetric_1d(3.0, 7);
    EXPECT_EQ(grid.size(), 9u);
    EXPECT_EQ(grid.n_real(), 7u);
    EXPECT_EQ(grid.scalar(grid.zero_index()), Complex(0.0, 0.0));
    for (std::size_t g = 0; g < grid.n_real(); ++g) {
        EXPECT_EQ(grid.scalar(grid.negation_index(g)), -grid.scalar(g));
    }
    EXPECT_TRUE(grid.find_imag(1.0).has_value());
    EXPECT_TRUE(grid.find_imag(-1.0).has_value());
}

TEST(UGrid, RejectsEvenCountAndAsymmetry) {
    EXPECT_THROW(UGrid::symmetric_1d(1.0, 4), Error);
    EXPECT_THROW(UGrid(1, {{0.0}, {1.0}}, {}), Error);
    EXPECT_THROW(UGrid(1, {{1.0}, {-1.0}}, {}), Error);
}

TEST(ContinuousLog, Identity) {
    const CVec out = continuous_log(CVec{1.0, 1.0, 1.0});
    for (const auto& c : out) EXPECT_EQ(c, Complex(0.0, 0.0));
}

TEST(ContinuousLog, UnwrapsLinearPhase) {
    // exp(3iu) on a path fine enough to follow the phase to u = 1.
    CVec f;
    for (int k = 0; k <= 10; ++k) f.push_back(std::exp(kI * 3.0 * (k / 10.0)));
    const CVec lg = continuous_log(f);
    EXPECT_NEAR(lg.back().imag(), 3.0, 1e-13);
    EXPECT_NEAR(lg.back().real(), 0.0, 1e-13);
    for (std::size_t k = 0; k < f.size(); ++k) EXPECT_LT(std::abs(std::exp(lg[k]) - f[k]), 1e-12);
    for (std::size_t k = 1; k < f.size(); ++k) EXPECT_LT(std::abs(lg[k].imag() - lg[k - 1].imag()), 0.5);
}

TEST(ContinuousLog, RealPositiveGaussian) {
    CVec f;
    for (double u : {0.0, 1.0, 2.0}) f.push_back(std::exp(-u * u / 2.0));
    const CVec lg = continuous_log(f);
    EXPECT_NEAR(lg[0].real(), 0.0, 1e-15);
    EXPECT_NEAR(lg[1].real(), -0.5, 1e-15);
    EXPECT_NEAR(lg[2].real(), -2.0, 1e-15);
}

TEST(ContinuousLog, Errors) {
    try {
        continuous_log(CVec{1.0, 0.0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ZeroValue);
    }
    try {
        continuous_log(CVec{1.0, -1.0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::BranchJump);
    }
}

TEST(ContinuousLog, ExpRoundTripProperty) {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> step(-2.5, 2.5), mag(0.1, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
        CVec f{1.0};
        double phase = 0.0;
        for (int k = 0; k < 30; ++k) {
            phase += step(gen);
            f.push_back(mag(gen) * std::exp(kI * phase));
        }
        const CVec lg = continuous_log(f);
        for (std::size_t k = 0; k < f.size(); ++k) {
            EXPECT_LT(std::abs(std::exp(lg[k]) - f[k]) / std::abs(f[k]), 1e-12);
        }
        EXPECT_NEAR(lg.back().imag(), phase, 1e-9);
    }
}

TEST(ProcessCharacteristic, PointMass) {
    const auto grid = UGrid::symmetric_1d(1.0, 3, {});
    const auto law = IncrementLaw::finite_state({{1.0, {2.0}}});
    const CVec k = process_characteristic(law, grid);
    const std::size_t g1 = *grid.find(CVec{1.0});
    EXPECT_NEAR(std::abs(k[g1] - Complex(0.0, 2.0)), 0.0, 1e-13);
    EXPECT_EQ(k[grid.zero_index()], Complex(0.0, 0.0));
}

TEST(ProcessCharacteristic, SymmetricCoin) {
    const auto grid = UGrid::symmetric_1d(1.0, 3, {});
    const auto law = IncrementLaw::finite_state({{0.5, {1.0}}, {0.5, {-1.0}}});
    const CVec k = process_characteristic(law, grid);
    const std::size_t g1 = *grid.find(CVec{1.0});
    EXPECT_NEAR(k[g1].real(), std::log(std::cos(1.0)), 1e-15);
    EXPECT_NEAR(k[g1].imag(), 0.0, 1e-15);
}

TEST(ProcessCharacteristic, ClosedFormGaussian) {
    const auto grid = UGrid::symmetric_1d(1.0, 3, {});
    const auto law = IncrementLaw::closed_form(1, [](const CVec& u) { return -0.5 * u[0] * u[0]; });
    const CVec k = process_characteristic(law, grid);
    EXPECT_NEAR(std::abs(k[*grid.find(CVec{1.0})] - Complex(-0.5, 0.0)), 0.0, 1e-15);
}

TEST(ProcessCharacteristic, FiniteStateTracksPhaseBeyondPi) {
    // Point mass at 5 evaluated at u = 2: phase 10 must be followed along the ray.
    const auto grid = UGrid::symmetric_1d(2.0, 3, {});
    const auto law = IncrementLaw::finite_state({{1.0, {5.0}}});
    const CVec k = process_characteristic(law, grid);
    EXPECT_NEAR(k[*grid.find(CVec{2.0})].imag(), 10.0, 1e-12);
}

TEST(ProcessCharacteristic, SamplerOnlyUnsupported) {
    const auto grid = UGrid::symmetric_1d(1.0, 3, {});
    const auto law = IncrementLaw::sampler_only(1, [](rng::Stream& s) { return RVec{s.normal()}; });
    try {
        process_characteristic(law, grid);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Unsupported);
    }
}

TEST(ProcessCharacteristic, FiniteStateBoundedByOne) {
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<double> val(-3.0, 3.0), w(0.1, 1.0);
    const auto grid = UGrid::symmetric_1d(2.0, 21);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<IncrementLaw::Atom> atoms;
        double total = 0.0;
        for (int i = 0; i < 4; ++i) {
            atoms.push_back({w(gen), {val(gen)}});
            total += atoms.back().prob;
        }
        for (auto& a : atoms) a.prob /= total;
        double sum = 0.0;
        for (std::size_t i = 0; i + 1 < atoms.size(); ++i) sum += atoms[i].prob;
        atoms.back().prob = 1.0 - sum;
        try {
            const CVec k = process_characteristic(IncrementLaw::finite_state(atoms), grid);
            for (std::size_t g = 0; g < grid.n_real(); ++g) EXPECT_LE(k[g].real(), 1e-15);
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::ZeroValue);  // a vanishing characteristic function is rejected
        }
    }
}

TEST(Shift, ConstantSurfaceIsInvariant) {
    const auto grid = make_grid(UGrid::symmetric_1d(1.0, 5));
    const auto theta = CharSurface::tabulate(grid, 6, [&](std::size_t g, std::size_t) { return grid->scalar(g) * kI; });
    const auto s = shift(theta);
    EXPECT_EQ(s.horizon(), 5u);
    EXPECT_EQ(max_abs_diff(s, theta.truncated(5)), 0.0);
}

TEST(Shift, EvaluatesDefinition) {
    const auto grid = make_grid(UGrid::symmetric_1d(1.0, 5));
    const auto theta = CharSurface::tabulate(
        grid, 4, [&](std::size_t g, std::size_t x) { return kI * grid->scalar(g) * static_cast<double>(x); });
    const auto s = shift(theta);
    for (std::size_t g = 0; g < grid->size(); ++g) EXPECT_EQ(s(g, 0), kI * grid->scalar(g));
}

TEST(Shift, HorizonExhausted) {
    const auto grid = make_grid(UGrid::symmetric_1d(1.0, 3));
    try {
        shift(CharSurface::zeros(grid, 1));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::HorizonExhausted);
    }
}

TEST(Shift, CompositionAndLinearity) {
    const auto grid = make_grid(UGrid::symmetric_1d(2.0, 7));
    const auto a = random_surface(grid, 8, 1), b = random_surface(grid, 8, 2);
    const auto twice = shift(shift(a));
    for (std::size_t g = 0; g < grid->size(); ++g)
        for (std::size_t x = 0; x < twice.horizon(); ++x) EXPECT_EQ(twice(g, x), a(g, x + 2));
    const Complex ca(0.3, -1.2), cb(-2.0, 0.5);
    EXPECT_LT(max_abs_diff(shift(combine(ca, a, cb, b)), combine(ca, shift(a), cb, shift(b))), 1e-14);
}

TEST(Cumulate, EmptySumAndConstantRate) {
    const auto grid = make_grid(UGrid::symmetric_1d(1.0, 3));
    const double r = 0.03;
    const std::size_t gi = *grid->find_imag(1.0);
    const auto theta = CharSurface::tabulate(grid, 6, [&](std::size_t g, std::size_t) {
        return g == gi ? Complex(-r, 0.0) : Complex(0.0, 0.0);
    });
    for (const auto& c : cumulate(theta, 0)) EXPECT_EQ(c, Complex(0.0, 0.0));
    const CVec c5 = cumulate(theta, 5);
    EXPECT_NEAR(c5[gi].real(), -5.0 * r, 1e-15);
    EXPECT_NEAR(std::exp(c5[gi].real()), std::exp(-0.15), 1e-15);
}

TEST(Cumulate, IidAdditivity) {
    const auto grid = make_grid(UGrid::symmetric_1d(1.0, 5, {}));
    const auto kappa = process_characteristic(IncrementLaw::finite_state({{0.5, {1.0}}, {0.5, {-1.0}}}), *grid);
    const auto theta = CharSurface::tabulate(grid, 4, [&](std::size_t g, std::size_t) { return kappa[g]; });
    const CVec c3 = cumulate(theta, 3);
    for (std::size_t g = 0; g < grid->size(); ++g) EXPECT_NEAR(std::abs(c3[g] - 3.0 * kappa[g]), 0.0, 1e-15);
    EXPECT_EQ(normalization_defect(theta), 0.0);
    EXPECT_LT(hermitian_defect(theta), 1e-15);
}
