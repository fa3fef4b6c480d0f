#pragma once

// Structural checks: short end and drift conditions, Monte Carlo martingale
// and bond consistency, exponential martingale pins, projection onto the
// affine leaf, and a brute-force oracle for small finite-state chains.

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crcterm/affine.hpp"
#include "crcterm/crc.hpp"
#include "crcterm/hull_white.hpp"
#include "crcterm/surface.hpp"
#include "crcterm/types.hpp"

namespace crcterm {

struct PinResult {
    std::string label;
    double residual = 0.0;
    double se = 0.0;  // Monte Carlo standard error, 0 for deterministic checks
    bool informative = true;
};

struct CheckReport {
    std::string name;
    double max_residual = 0.0;
    double tolerance = 0.0;
    bool monte_carlo = false;
    bool pass = true;
    std::vector<PinResult> pins;
    std::string note;

    explicit CheckReport(std::string n = {}) : name(std::move(n)) {}

    std::string line() const {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%-28s residual=%.3e %s=%.3e %s", name.c_str(), max_residual,
                      monte_carlo ? "band" : "tol", tolerance, pass ? "PASS" : "FAIL");
        return std::string(buf) + (note.empty() ? "" : "  # " + note);
    }
};

inline CheckReport merge_reports(std::string name, const std::vector<CheckReport>& parts) {
    CheckReport r{std::move(name)};
    for (const auto& p : parts) {
        r.pass = r.pass && p.pass;
        r.monte_carlo = r.monte_carlo || p.monte_carlo;
        if (p.max_residual >= r.max_residual) {
            r.max_residual = p.max_residual;
            r.tolerance = p.tolerance;
        }
        r.pins.insert(r.pins.end(), p.pins.begin(), p.pins.end());
    }
    return r;
}

namespace detail {

inline std::string pin_label(const UGrid& grid, std::size_t g, std::size_t x) {
    char buf[96];
    const Complex u = grid.scalar(g);
    std::snprintf(buf, sizeof buf, "u=%.4g%+.4gi x=%zu", u.real(), u.imag(), x);
    return buf;
}

/// Imaginary part reduced to (-pi, pi]: logs agree only modulo 2 pi i.
inline Complex wrap_log_difference(Complex d) {
    double im = std::remainder(d.imag(), 2.0 * std::numbers::pi);
    return Complex(d.real(), im);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Deterministic checks
// ---------------------------------------------------------------------------

/// |kappa^X(u) - theta(u, 0)| over the grid.
inline CheckReport short_end_residual(const CharSurface& theta, const CVec& kappa, double tolerance = 1e-12) {
    require(kappa.size() == theta.grid().size(), ErrorCode::InvalidArgument, "short_end_residual: size mismatch");
    CheckReport r{"short_end"};
    r.tolerance = tolerance;
    for (std::size_t g = 0; g < kappa.size(); ++g) {
        const double d = std::abs(detail::wrap_log_difference(kappa[g] - theta(g, 0)));
        r.pins.push_back({detail::pin_label(theta.grid(), g, 0), d});
        r.max_residual = std::max(r.max_residual, d);
    }
    r.pass = r.max_residual <= tolerance;
    return r;
}

/// Joint one-step cumulant kappa^{(X, eps)}(g, v): grid frequency index g and
/// a complex vector v paired with d eps.
using JointCumulant = std::function<Complex(std::size_t g, const CVec& v)>;

/// kappa^X(u) - sum_{k<=x} alpha(u,k) = kappa^{(X,eps)}(u, -i sum_{k<=x} sigma(u,k)),
/// for every grid point and x = 0..horizon-1 (up to multiples of 2 pi i).
inline CheckReport drift_residual(const DecompositionTriple& decomp, const JointCumulant& joint,
                                  double tolerance = 1e-9) {
    require(static_cast<bool>(joint), ErrorCode::Unsupported, "drift_residual: no joint cumulant available");
    const auto& alpha = decomp.alpha;
    const UGrid& grid = alpha.grid();
    const std::size_t d = decomp.sigmas.size();
    CheckReport r{"drift_condition"};
    r.tolerance = tolerance;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const Complex kx = joint(g, CVec(d, Complex(0.0, 0.0)));
        Complex alpha_sum(0.0, 0.0);
        CVec sig_sum(d, Complex(0.0, 0.0));
        for (std::size_t x = 0; x < alpha.horizon(); ++x) {
            alpha_sum += alpha(g, x);
            CVec v(d);
            for (std::size_t i = 0; i < d; ++i) {
                sig_sum[i] += decomp.sigmas[i](g, x);
                v[i] = -kI * sig_sum[i];
            }
            const double res = std::abs(detail::wrap_log_difference(kx - alpha_sum - joint(g, v)));
            r.pins.push_back({detail::pin_label(grid, g, x), res});
            r.max_residual = std::max(r.max_residual, res);
            if (decomp.locally_independent) {
                // kappa^X - sum alpha = kappa^X + kappa^eps(-i sum sigma)
                Complex keps = joint(g, v) - kx;
                const double res2 = std::abs(detail::wrap_log_difference(-alpha_sum - keps));
                r.max_residual = std::max(r.max_residual, res2);
            }
        }
    }
    r.pass = r.max_residual <= tolerance;
    return r;
}

/// max_x |theta(-i, x)|: zero iff exp(X) is a martingale.
inline CheckReport exp_martingale_check(const CharSurface& theta, double tolerance = 1e-12) {
    const auto pin = theta.grid().find_imag(-1.0);
    require(pin.has_value(), ErrorCode::PinMissing, "exp_martingale_check: pin -i not on the grid");
    CheckReport r{"exp_martingale"};
    r.tolerance = tolerance;
    for (std::size_t x = 0; x < theta.horizon(); ++x) {
        const double d = std::abs(theta(*pin, x));
        r.pins.push_back({detail::pin_label(theta.grid(), *pin, x), d});
        r.max_residual = std::max(r.max_residual, d);
    }
    r.pass = r.max_residual <= tolerance;
    return r;
}

/// Affine decomposition triple of the CRC update at (model, Y):
/// alpha from second differences, sigma from psi_C first differences.
inline DecompositionTriple affine_decomposition(const FlowTable& table, const RVec& Y, std::size_t horizon) {
    return DecompositionTriple{alpha_drift(table, Y, horizon), sigma_fields(table, horizon), std::nullopt, false};
}

/// kappa^{(X, Y)}(u, v) of one step of the (extended) affine model, v paired
/// with dY:
///   XBlock: F(iu, iv) + <R_C(iu, iv), Y> + mu(iu, 0)
///   State:  F(., iu + iv) + <R_C(., iu + iv), Y> + mu(iu + iv, 0)
inline JointCumulant affine_joint_cumulant(const AffineModel& model, const UGrid& grid, const RVec& Y,
                                           const ExtensionCumulant& mu = ExtensionCumulant::zero(0)) {
    return [&model, &grid, Y, mu](std::size_t g, const CVec& v) {
        auto [pu, pv] = model.pins(grid.point(g));
        CVec w = pv;
        for (std::size_t i = 0; i < w.size() && i < v.size(); ++i) w[i] += kI * v[i];
        const CVec r = model.R(pu, w);
        Complex k = model.F(pu, w);
        for (std::size_t i = 0; i < Y.size(); ++i) k += r[i] * Y[i];
        k += mu(model.mode() == ObservableMode::XBlock ? pu : w, 0);
        return k;
    };
}

/// Projects theta_t - A_t onto the real span of the sigma-fields and reports
/// the largest L2 norm of the orthogonal remainder over t.
inline CheckReport fdr_projection_residual(const std::vector<CharSurface>& thetas,
                                           const std::vector<const FlowTable*>& tables,
                                           const std::vector<ExtensionCumulant>& mus, double tolerance = 1e-9) {
    require(thetas.size() == tables.size() && thetas.size() == mus.size(), ErrorCode::InvalidArgument,
            "fdr_projection_residual: inconsistent path lengths");
    CheckReport r{"fdr_projection"};
    r.tolerance = tolerance;
    for (std::size_t t = 0; t < thetas.size(); ++t) {
        const auto& theta = thetas[t];
        const auto& table = *tables[t];
        const std::size_t H = theta.horizon();
        const std::size_t m = table.psi.empty() ? 0 : table.psi[0][0].size();
        const CharSurface A = extended_forward_surface(table, RVec(m, 0.0), mus[t], H);
        const auto sig = sigma_fields(table, H);
        const std::size_t N = theta.values().size();
        Eigen::VectorXd rhs(2 * N);
        Eigen::MatrixXd basis(2 * N, m);
        for (std::size_t j = 0; j < N; ++j) {
            const Complex d = theta.values()[j] - A.values()[j];
            rhs(2 * j) = d.real();
            rhs(2 * j + 1) = d.imag();
            for (std::size_t i = 0; i < m; ++i) {
                basis(2 * j, i) = sig[i].values()[j].real();
                basis(2 * j + 1, i) = sig[i].values()[j].imag();
            }
        }
        Eigen::VectorXd remainder = rhs;
        if (m > 0) remainder = rhs - basis * basis.colPivHouseholderQr().solve(rhs);
        const double res = remainder.norm();
        r.pins.push_back({"t=" + std::to_string(t), res});
        r.max_residual = std::max(r.max_residual, res);
    }
    r.pass = r.max_residual <= tolerance;
    return r;
}

// ---------------------------------------------------------------------------
// Monte Carlo checks
// ---------------------------------------------------------------------------

namespace detail {

struct ComplexMean {
    Complex mean;
    double se_re = 0.0;
    double se_im = 0.0;
    std::size_t n = 0;
};

// Welford updates: a constant sample yields its value exactly and zero spread.
inline ComplexMean complex_mean(const std::function<std::optional<Complex>(std::size_t)>& sample, std::size_t count) {
    double mre = 0.0, mim = 0.0, m2re = 0.0, m2im = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < count; ++p) {
        auto z = sample(p);
        if (!z) continue;
        ++n;
        const double dre = z->real() - mre, dim = z->imag() - mim;
        mre += dre / static_cast<double>(n);
        mim += dim / static_cast<double>(n);
        m2re += dre * (z->real() - mre);
        m2im += dim * (z->imag() - mim);
    }
    ComplexMean out;
    out.n = n;
    if (n < 2) return out;
    const double dn = static_cast<double>(n);
    out.mean = Complex(mre, mim);
    out.se_re = std::sqrt(m2re / (dn - 1.0) / dn);
    out.se_im = std::sqrt(m2im / (dn - 1.0) / dn);
    return out;
}

}  // namespace detail

/// Per grid pin, mean of exp(i u (Z_t - Z_0)) over surviving paths against
/// exp(cumulate(theta0, t)); real and imaginary parts each within `bands`
/// standard errors. Pins whose band exceeds |target| are reported as
/// uninformative; if no pin is informative the check cannot be decided.
inline CheckReport martingale_mc(const PathEnsemble& ens, const CharSurface& theta0, std::size_t t,
                                 double bands = 4.0) {
    require(t <= ens.n_steps && t <= theta0.horizon(), ErrorCode::HorizonExhausted, "martingale_mc: t too large");
    const UGrid& grid = theta0.grid();
    const CVec cum = cumulate(theta0, t);
    CheckReport r{"martingale_mc t=" + std::to_string(t)};
    r.monte_carlo = true;
    r.tolerance = bands;
    std::size_t informative = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        if (g == grid.zero_index()) continue;
        const Complex u = grid.scalar(g);
        const auto est = detail::complex_mean(
            [&](std::size_t p) -> std::optional<Complex> {
                const auto& path = ens.paths[p];
                if (path.failed) return std::nullopt;
                return std::exp(kI * u * (ens.Z(p, t) - ens.Z(p, 0)));
            },
            ens.paths.size());
        const Complex target = std::exp(cum[g]);
        const double zre = est.se_re > 0 ? std::abs(est.mean.real() - target.real()) / est.se_re
                                         : (std::abs(est.mean.real() - target.real()) > 1e-12 ? INFINITY : 0.0);
        const double zim = est.se_im > 0 ? std::abs(est.mean.imag() - target.imag()) / est.se_im
                                         : (std::abs(est.mean.imag() - target.imag()) > 1e-12 ? INFINITY : 0.0);
        const double z = std::max(zre, zim);
        const double se = std::max(est.se_re, est.se_im);
        const bool inf = t == 0 || bands * se <= std::abs(target);
        informative += inf ? 1 : 0;
        r.pins.push_back({detail::pin_label(grid, g, t), z, se, inf});
        if (inf) r.max_residual = std::max(r.max_residual, z);
    }
    require(informative > 0 || grid.size() <= 1, ErrorCode::InsufficientPaths,
            "martingale_mc: standard errors exceed every target");
    r.pass = r.max_residual <= bands;
    r.note = std::to_string(informative) + " informative pins, residual in standard errors";
    return r;
}

/// Bond prices E[exp(-sum_{k<T} R_k)] with R_k = Z_{k+1} - Z_k (the model's
/// X-block integrates the short rate) against exp(cumulate(theta0, T)) at u = i.
inline CheckReport bond_consistency(const PathEnsemble& ens, const CharSurface& theta0, std::size_t T,
                                    double bands = 4.0) {
    const auto pin = theta0.grid().find_imag(1.0);
    require(pin.has_value(), ErrorCode::PinMissing, "bond_consistency: pin i not on the grid");
    require(T <= ens.n_steps && T <= theta0.horizon(), ErrorCode::HorizonExhausted, "bond_consistency: T too large");
    const auto est = detail::complex_mean(
        [&](std::size_t p) -> std::optional<Complex> {
            if (ens.paths[p].failed) return std::nullopt;
            double integral = 0.0;
            for (std::size_t k = 0; k < T; ++k) integral += ens.Z(p, k + 1) - ens.Z(p, k);
            return Complex(std::exp(-integral), 0.0);
        },
        ens.paths.size());
    const double target = std::exp(cumulate(theta0, T)[*pin].real());
    CheckReport r{"bond_consistency T=" + std::to_string(T)};
    r.monte_carlo = true;
    r.tolerance = bands;
    const double diff = std::abs(est.mean.real() - target);
    r.max_residual = est.se_re > 0 ? diff / est.se_re : (diff > 1e-12 ? INFINITY : 0.0);
    r.pins.push_back({"T=" + std::to_string(T), r.max_residual, est.se_re});
    r.pass = r.max_residual <= bands;
    char buf[96];
    std::snprintf(buf, sizeof buf, "P_mc=%.10f P=%.10f", est.mean.real(), target);
    r.note = buf;
    return r;
}

// ---------------------------------------------------------------------------
// Finite-state oracle
// ---------------------------------------------------------------------------

/// Markov chain on finitely many factor states; each step moves X by a
/// lattice increment jointly with the factor transition.
struct FiniteStateModel {
    struct Outcome {
        double prob;
        double dx;
        std::size_t next;
    };
    using Kernel = std::vector<std::vector<Outcome>>;  // [state] -> outcomes

    std::size_t n_states = 1;
    std::vector<Kernel> kernels;  // kernels[t]; the last one repeats

    const Kernel& kernel(std::size_t t) const { return kernels[std::min(t, kernels.size() - 1)]; }

    void validate() const {
        require(!kernels.empty(), ErrorCode::InvalidArgument, "finite-state model without kernels");
        for (const auto& k : kernels) {
            require(k.size() == n_states, ErrorCode::InvalidArgument, "kernel has wrong number of rows");
            for (const auto& row : k) {
                double s = 0.0;
                for (const auto& o : row) {
                    require(o.prob >= 0.0 && o.next < n_states, ErrorCode::InvalidArgument, "invalid outcome");
                    s += o.prob;
                }
                require(std::abs(s - 1.0) <= 1e-14, ErrorCode::InvalidArgument, "kernel row does not sum to 1");
            }
        }
    }
};

/// Forward characteristics at time s from state y by enumerating every path.
inline CharSurface oracle_forward_characteristics(const FiniteStateModel& fs, std::size_t s, std::size_t y,
                                                  const GridPtr& grid, std::size_t horizon,
                                                  double max_paths = 1e7) {
    fs.validate();
    require(grid->dim() == 1, ErrorCode::InvalidArgument, "oracle: 1-d grids only");
    double count = 1.0;
    std::size_t widest = 0;
    for (std::size_t k = 0; k < horizon; ++k) {
        for (const auto& row : fs.kernel(s + k)) widest = std::max(widest, row.size());
        count *= static_cast<double>(std::max<std::size_t>(widest, 1));
        require(count <= max_paths, ErrorCode::TooLarge, "oracle: enumeration exceeds the path budget");
    }
    // atoms[k]: law of X_{s+k+1} - X_s as (prob, value) pairs.
    std::vector<std::map<double, double>> atoms(horizon);  // merged by value
    std::function<void(std::size_t, std::size_t, double, double)> walk = [&](std::size_t k, std::size_t state,
                                                                             double prob, double x) {
        if (k == horizon) return;
        for (const auto& o : fs.kernel(s + k)[state]) {
            if (o.prob == 0.0) continue;
            atoms[k][x + o.dx] += prob * o.prob;
            walk(k + 1, o.next, prob * o.prob, x + o.dx);
        }
    };
    walk(0, y, 1.0, 0.0);
    CVec prev(grid->size(), Complex(0.0, 0.0));
    CVec values(grid->size() * horizon);
    for (std::size_t k = 0; k < horizon; ++k) {
        // Tiny rounding in the path probabilities is renormalized away.
        double total = 0.0;
        for (const auto& [x, p] : atoms[k]) total += p;
        std::vector<IncrementLaw::Atom> merged;
        for (const auto& [x, p] : atoms[k]) merged.push_back({p / total, {x}});
        const auto law = IncrementLaw::finite_state(std::move(merged));
        const CVec cur = process_characteristic(law, *grid);
        for (std::size_t g = 0; g < grid->size(); ++g) values[g * horizon + k] = cur[g] - prev[g];
        prev = cur;
    }
    return CharSurface(grid, horizon, std::move(values), static_cast<double>(s));
}

/// E[exp(iu (X_{s+k} - X_s)) | Y_s = state] for every state, by products of
/// transfer matrices M_t(u)[y, y'] = sum p exp(iu dx) over outcomes y -> y'.
inline std::vector<CVec> transfer_characteristics(const FiniteStateModel& fs, std::size_t s, std::size_t k,
                                                  Complex u) {
    Eigen::VectorXcd v = Eigen::VectorXcd::Ones(static_cast<Eigen::Index>(fs.n_states));
    for (std::size_t j = k; j-- > 0;) {
        Eigen::MatrixXcd M = Eigen::MatrixXcd::Zero(fs.n_states, fs.n_states);
        const auto& ker = fs.kernel(s + j);
        for (std::size_t a = 0; a < fs.n_states; ++a)
            for (const auto& o : ker[a]) M(a, o.next) += o.prob * std::exp(kI * u * o.dx);
        v = M * v;
    }
    std::vector<CVec> out(fs.n_states, CVec(1));
    for (std::size_t a = 0; a < fs.n_states; ++a) out[a][0] = v(a);
    return out;
}

/// log E[exp(iu (X_{s+k} - X_s)) | Y_s = state], continued along the ray from u = 0.
inline Complex transfer_log_characteristic(const FiniteStateModel& fs, std::size_t s, std::size_t k, std::size_t state,
                                           Complex u) {
    if (k == 0) return Complex(0.0, 0.0);
    return log_along_ray([&](double r) { return transfer_characteristics(fs, s, k, r * u)[state][0]; });
}

/// Theta_s(u, x)(y) = L(s, x+1, y) - L(s, x, y) from the transfer-matrix route.
inline CharSurface transfer_forward_surface(const FiniteStateModel& fs, std::size_t s, std::size_t y,
                                            const GridPtr& grid, std::size_t horizon) {
    return CharSurface::tabulate(
        grid, horizon,
        [&](std::size_t g, std::size_t x) {
            if (g == grid->zero_index()) return Complex(0.0, 0.0);
            const Complex u = grid->scalar(g);
            return transfer_log_characteristic(fs, s, x + 1, y, u) - transfer_log_characteristic(fs, s, x, y, u);
        },
        static_cast<double>(s));
}

/// Decomposition with eps = one-hot(Y): with Theta_s(x)(y) the surface seen
/// from state y at time s,
///   alpha(x)  = Theta_{s+1}(x)(Y_s) - Theta_s(x+1)(Y_s),
///   sigma^y(x) = Theta_{s+1}(x)(y).
inline DecompositionTriple finite_state_decomposition(const FiniteStateModel& fs, std::size_t s, std::size_t y,
                                                      const GridPtr& grid, std::size_t horizon) {
    const auto now = transfer_forward_surface(fs, s, y, grid, horizon + 1);
    std::vector<CharSurface> next;
    for (std::size_t z = 0; z < fs.n_states; ++z) next.push_back(transfer_forward_surface(fs, s + 1, z, grid, horizon));
    auto alpha = CharSurface::tabulate(grid, horizon, [&](std::size_t g, std::size_t x) {
        return next[y](g, x) - now(g, x + 1);
    });
    return DecompositionTriple{std::move(alpha), std::move(next), std::nullopt, false};
}

/// kappa^{(X, eps)}(u, v) = log E[exp(iu dX + i <v, e_{Y_{s+1}} - e_{Y_s}>) | Y_s = y].
inline JointCumulant finite_state_joint_cumulant(const FiniteStateModel& fs, std::size_t s, std::size_t y,
                                                 const GridPtr& grid) {
    return [&fs, s, y, grid](std::size_t g, const CVec& v) {
        const Complex u = grid->scalar(g);
        Complex e(0.0, 0.0);
        for (const auto& o : fs.kernel(s)[y]) {
            Complex arg = kI * u * o.dx;
            if (!v.empty()) arg += kI * (v[o.next] - v[y]);
            e += o.prob * std::exp(arg);
        }
        require(std::abs(e) > 0.0, ErrorCode::ZeroValue, "joint cumulant: characteristic function vanishes");
        return std::log(e);
    };
}

/// One-step cumulant kappa^X from the outcome table.
inline CVec finite_state_short_end(const FiniteStateModel& fs, std::size_t s, std::size_t y, const UGrid& grid) {
    std::vector<IncrementLaw::Atom> atoms;
    for (const auto& o : fs.kernel(s)[y]) atoms.push_back({o.prob, {o.dx}});
    return process_characteristic(IncrementLaw::finite_state(atoms), grid);
}

// Fixtures --------------------------------------------------------------------

inline FiniteStateModel fixture_deterministic(double step = 0.7) {
    return FiniteStateModel{1, {{{{1.0, step, 0}}}}};
}

inline FiniteStateModel fixture_coin() {
    FiniteStateModel::Kernel k{{{0.5, 1.0, 0}, {0.5, -1.0, 1}}, {{0.5, 1.0, 0}, {0.5, -1.0, 1}}};
    return FiniteStateModel{2, {k}};
}

/// Three volatility regimes; moves are more likely up when volatility falls.
inline FiniteStateModel fixture_vol_regimes() {
    const double vol[3] = {0.5, 1.0, 2.0};
    const double P[3][3] = {{0.7, 0.2, 0.1}, {0.25, 0.5, 0.25}, {0.1, 0.3, 0.6}};
    FiniteStateModel::Kernel k(3);
    for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = 0; b < 3; ++b) {
            const double up = b < a ? 0.6 : (b > a ? 0.4 : 0.5);
            k[a].push_back({P[a][b] * up, vol[a], b});
            k[a].push_back({P[a][b] * (1.0 - up), -vol[a], b});
        }
    }
    return FiniteStateModel{3, {k}};
}

/// Time-dependent two-regime chain with a drifting lattice.
inline FiniteStateModel fixture_time_dependent() {
    std::vector<FiniteStateModel::Kernel> ks;
    for (int t = 0; t < 6; ++t) {
        const double d = 0.1 * t;
        ks.push_back({{{0.3, 1.0 + d, 0}, {0.3, -1.0 + d, 1}, {0.4, d, 0}},
                      {{0.2, 2.0 - d, 1}, {0.5, -0.5, 0}, {0.3, 0.5 * d, 1}}});
    }
    return FiniteStateModel{2, ks};
}

}  // namespace crcterm
