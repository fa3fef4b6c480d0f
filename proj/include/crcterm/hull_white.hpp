#pragma once

// Hull-White extensions: a time-dependent cumulant mu(w, k) added to the
// constant part F of an affine model so that it reproduces a given initial
// forward-characteristic surface exactly.
//
// mu follows the cumulant convention of F: the extension increment D_k on the
// observed block contributes E[exp(<w, D_k>)] = exp(mu(w, k)), evaluated at
// w = iu for X-block models and at the transported arguments psi_C(iu, j) for
// state-observed models.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "crcterm/affine.hpp"
#include "crcterm/surface.hpp"
#include "crcterm/types.hpp"

namespace crcterm {

/// mu(w, k) = c(k) w + q(k) w^2 / 2: a Gaussian increment with mean c(k) and
/// variance q(k); q = 0 is a pure drift shift.
struct ParametricShift {
    RVec c;
    RVec q;
};

/// mu(iu_g, k) stored at every grid point; other arguments are reached by
/// linear interpolation along the imaginary axis (from real grid points) or
/// the real axis (from imaginary pins and 0).
struct TabulatedCumulant {
    GridPtr grid;
    std::vector<CVec> values;  // [k][g]
};

class ExtensionCumulant {
public:
    ExtensionCumulant() : rep_(ParametricShift{}) {}
    explicit ExtensionCumulant(ParametricShift p) : rep_(std::move(p)) {
        auto& s = std::get<ParametricShift>(rep_);
        if (s.q.size() < s.c.size()) s.q.resize(s.c.size(), 0.0);
    }
    explicit ExtensionCumulant(TabulatedCumulant t) : rep_(std::move(t)) {}

    static ExtensionCumulant zero(std::size_t length) {
        return ExtensionCumulant(ParametricShift{RVec(length, 0.0), RVec(length, 0.0)});
    }

    bool parametric() const noexcept { return std::holds_alternative<ParametricShift>(rep_); }
    const ParametricShift& shift_law() const { return std::get<ParametricShift>(rep_); }
    const TabulatedCumulant& table() const { return std::get<TabulatedCumulant>(rep_); }

    std::size_t length() const {
        return parametric() ? shift_law().c.size() : table().values.size();
    }

    /// mu(w, k); times beyond the stored length contribute nothing.
    Complex operator()(const CVec& w, std::size_t k) const {
        if (k >= length()) return Complex(0.0, 0.0);
        if (parametric()) {
            const auto& p = shift_law();
            return p.c[k] * w[0] + 0.5 * p.q[k] * w[0] * w[0];
        }
        return interpolate(w, k);
    }

    /// The extension seen one period later: mu'(w, k) = mu(w, k + 1).
    ExtensionCumulant advanced() const {
        if (parametric()) {
            ParametricShift p = shift_law();
            if (!p.c.empty()) {
                p.c.erase(p.c.begin());
                p.q.erase(p.q.begin());
            }
            return ExtensionCumulant(std::move(p));
        }
        TabulatedCumulant t = table();
        if (!t.values.empty()) t.values.erase(t.values.begin());
        return ExtensionCumulant(std::move(t));
    }

private:
    Complex interpolate(const CVec& w, std::size_t k) const {
        const auto& t = table();
        const UGrid& grid = *t.grid;
        require(grid.dim() == 1, ErrorCode::Unsupported, "tabulated extension: only 1-d grids are supported");
        if (auto g = grid.find(CVec{-kI * w[0]}, 1e-13)) return t.values[k][*g];
        const Complex z = w[0];
        const double scale = 1e-12 * (1.0 + std::abs(z));
        // Nodes (coordinate, value) along the axis that contains z.
        std::vector<std::pair<double, Complex>> nodes;
        double coord = 0.0;
        if (std::abs(z.real()) <= scale) {
            coord = z.imag();
            for (std::size_t g = 0; g < grid.n_real(); ++g) nodes.emplace_back(grid.scalar(g).real(), t.values[k][g]);
        } else if (std::abs(z.imag()) <= scale) {
            coord = z.real();
            nodes.emplace_back(0.0, Complex(0.0, 0.0));
            for (std::size_t g = grid.n_real(); g < grid.size(); ++g) {
                nodes.emplace_back(-grid.scalar(g).imag(), t.values[k][g]);
            }
        } else {
            fail(ErrorCode::ExtrapolationNeeded, "tabulated extension: argument off both axes");
        }
        std::sort(nodes.begin(), nodes.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        require(nodes.size() >= 2 && coord >= nodes.front().first - scale && coord <= nodes.back().first + scale,
                ErrorCode::ExtrapolationNeeded, "tabulated extension: argument outside the tabulated hull");
        for (std::size_t i = 1; i < nodes.size(); ++i) {
            if (coord <= nodes[i].first || i + 1 == nodes.size()) {
                const auto& [x0, y0] = nodes[i - 1];
                const auto& [x1, y1] = nodes[i];
                const double lam = std::clamp((coord - x0) / (x1 - x0), 0.0, 1.0);
                return (1.0 - lam) * y0 + lam * y1;
            }
        }
        return nodes.back().second;
    }

    std::variant<ParametricShift, TabulatedCumulant> rep_;
};

struct HullWhiteExtension {
    std::string family;
    ParamVec params;
    RVec anchor;  // factor state Y the extension is attached to
    ExtensionCumulant mu;
    double start_time = 0.0;
};

// ---------------------------------------------------------------------------
// Forward generation
// ---------------------------------------------------------------------------

/// sum_{k<t} theta(u_g, k) for the extended model:
///   phi(t) + <psi_C(t) - psi_C(0), Y> + sum_{k<t} mu(arg_{t-1-k}, k).
inline Complex extended_cumulant(const FlowTable& table, const std::vector<CVec>& args, std::size_t g, const RVec& Y,
                                 const ExtensionCumulant& mu, std::size_t t) {
    Complex s = table.phi[g][t] - table.phi[g][0];
    for (std::size_t i = 0; i < Y.size(); ++i) s += (table.psi[g][t][i] - table.psi[g][0][i]) * Y[i];
    for (std::size_t k = 0; k < t; ++k) s += mu(args[t - 1 - k], k);
    return s;
}

inline CharSurface extended_forward_surface(const FlowTable& table, const RVec& Y, const ExtensionCumulant& mu,
                                            std::size_t horizon, double time_stamp = 0.0) {
    require(horizon <= table.horizon, ErrorCode::HorizonExhausted, "extended_forward_surface: flow table too short");
    const UGrid& grid = *table.grid;
    CVec values(grid.size() * horizon, Complex(0.0, 0.0));
    for (std::size_t g = 0; g < grid.size(); ++g) {
        if (g == grid.zero_index()) continue;
        const auto args = table.ext_arg(g);
        Complex prev(0.0, 0.0);
        for (std::size_t x = 0; x < horizon; ++x) {
            const Complex cur = extended_cumulant(table, args, g, Y, mu, x + 1);
            values[g * horizon + x] = cur - prev;
            prev = cur;
        }
    }
    return CharSurface(table.grid, horizon, std::move(values), time_stamp);
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

/// Solve for a parametric extension from the pins `pins` (grid indices of
/// imaginary points), one period at a time. With `with_variance` the pair
/// (c, q) is fitted (needs two pins), otherwise q = 0 and only c is fitted.
inline HullWhiteExtension extract_mu_parametric(const AffineModel& model, const FlowTable& table,
                                                const CharSurface& nu0, const RVec& y,
                                                const std::vector<std::size_t>& pins, bool with_variance = false) {
    require(nu0.horizon() >= 1, ErrorCode::HorizonExhausted, "extract_mu_parametric: empty surface");
    require(nu0.horizon() <= table.horizon, ErrorCode::HorizonExhausted, "extract_mu_parametric: flow table too short");
    require(table.grid->dim() == 1, ErrorCode::Unsupported, "extract_mu_parametric: 1-d grids only");
    require(!pins.empty(), ErrorCode::PinMissing, "extract_mu_parametric: no pins given");
    require(!with_variance || pins.size() >= 2, ErrorCode::Unsolvable,
            "extract_mu_parametric: a variance layer needs two pins");
    const std::size_t H = nu0.horizon();
    std::vector<std::vector<CVec>> args;
    for (auto g : pins) args.push_back(table.ext_arg(g));
    ParametricShift law{RVec(H, 0.0), RVec(H, 0.0)};
    const int unknowns = with_variance ? 2 : 1;
    for (std::size_t t = 1; t <= H; ++t) {
        ExtensionCumulant partial(law);
        Eigen::MatrixXd A(2 * pins.size(), unknowns);
        Eigen::VectorXd rhs(2 * pins.size());
        for (std::size_t p = 0; p < pins.size(); ++p) {
            const std::size_t g = pins[p];
            Complex target(0.0, 0.0);
            for (std::size_t x = 0; x < t; ++x) target += nu0(g, x);
            // law has c(t-1) = q(t-1) = 0 here, so this is the known part.
            const Complex r = target - extended_cumulant(table, args[p], g, y, partial, t);
            const Complex w0 = args[p][0][0];
            A(2 * p, 0) = w0.real();
            A(2 * p + 1, 0) = w0.imag();
            if (with_variance) {
                A(2 * p, 1) = 0.5 * (w0 * w0).real();
                A(2 * p + 1, 1) = 0.5 * (w0 * w0).imag();
            }
            rhs(2 * p) = r.real();
            rhs(2 * p + 1) = r.imag();
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
        qr.setThreshold(1e-12);
        require(qr.rank() == unknowns, ErrorCode::Unsolvable,
                "extract_mu_parametric: coefficient of the new unknown vanishes at t=" + std::to_string(t));
        const Eigen::VectorXd sol = qr.solve(rhs);
        law.c[t - 1] = sol(0);
        if (with_variance) law.q[t - 1] = sol(1);
    }
    return HullWhiteExtension{model.family(), model.params(), y, ExtensionCumulant(std::move(law)), nu0.time_stamp()};
}

/// Grid-wide extraction: the whole residual at horizon t is assigned to
/// mu(iu, t-1); lagged terms use already-fixed values.
inline HullWhiteExtension extract_mu_tabulated(const AffineModel& model, const FlowTable& table,
                                               const CharSurface& nu0, const RVec& y) {
    require(nu0.horizon() >= 1, ErrorCode::HorizonExhausted, "extract_mu_tabulated: empty surface");
    require(nu0.horizon() <= table.horizon, ErrorCode::HorizonExhausted, "extract_mu_tabulated: flow table too short");
    const std::size_t H = nu0.horizon();
    const UGrid& grid = *table.grid;
    TabulatedCumulant tab{table.grid, std::vector<CVec>(H, CVec(grid.size(), Complex(0.0, 0.0)))};
    std::vector<std::vector<CVec>> args(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) args[g] = table.ext_arg(g);
    for (std::size_t t = 1; t <= H; ++t) {
        ExtensionCumulant partial(tab);  // mu(., t-1) still zero
        for (std::size_t g = 0; g < grid.size(); ++g) {
            if (g == grid.zero_index()) continue;
            Complex target(0.0, 0.0);
            for (std::size_t x = 0; x < t; ++x) target += nu0(g, x);
            tab.values[t - 1][g] = target - extended_cumulant(table, args[g], g, y, partial, t);
        }
    }
    return HullWhiteExtension{model.family(), model.params(), y, ExtensionCumulant(std::move(tab)), nu0.time_stamp()};
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct ValidityReport {
    bool valid = true;
    double min_eigenvalue = std::numeric_limits<double>::infinity();
    RVec min_eigenvalue_per_time;
    double normalization_defect = 0.0;
    double hermitian_defect = 0.0;
    double tolerance = -1e-8;
    std::string note;
};

namespace detail {

/// Index sets {0, u_s, u_2s, ...} of p nonnegative real grid points with
/// stride s, as sorted coordinates.
inline std::vector<RVec> bochner_point_sets(const UGrid& grid, std::size_t p) {
    RVec pos;
    for (std::size_t g = 0; g < grid.n_real(); ++g) {
        const double u = grid.scalar(g).real();
        if (u > 0.0) pos.push_back(u);
    }
    std::sort(pos.begin(), pos.end());
    std::vector<RVec> sets;
    if (pos.empty()) return sets;
    p = std::min(p, pos.size() + 1);
    for (std::size_t s = 1; (p - 1) * s <= pos.size(); ++s) {
        RVec set{0.0};
        for (std::size_t j = 1; j < p; ++j) set.push_back(pos[j * s - 1]);
        sets.push_back(std::move(set));
    }
    return sets;
}

inline double min_hermitian_eigenvalue(const Eigen::MatrixXcd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

}  // namespace detail

/// Necessary conditions for mu(., k) to be a log-characteristic function:
/// mu(0) = 0, Hermitian symmetry, and positive semidefinite Bochner matrices
/// [exp(mu(i(u_a - u_b), k))] of order p over strided grid subsets.
inline ValidityReport validate_inc(const ExtensionCumulant& mu, const UGrid& grid, std::size_t order = 8,
                                   double tolerance = -1e-8) {
    require(order >= 2, ErrorCode::InvalidArgument, "validate_inc: order must be >= 2");
    ValidityReport rep;
    rep.tolerance = tolerance;
    if (grid.dim() != 1) {
        rep.note = "Bochner test skipped: grid is not 1-d";
        return rep;
    }
    const auto sets = detail::bochner_point_sets(grid, order);
    for (std::size_t k = 0; k < mu.length(); ++k) {
        double kmin = std::numeric_limits<double>::infinity();
        if (mu.parametric()) {
            const double q = mu.shift_law().q[k];
            rep.normalization_defect = std::max(rep.normalization_defect, 0.0);
            if (!std::isfinite(mu.shift_law().c[k]) || !std::isfinite(q)) {
                kmin = -std::numeric_limits<double>::infinity();
            } else if (q == 0.0) {
                kmin = 0.0;  // point mass: all-ones Gram matrix, exactly singular
            } else {
                // exp(i u c) factors are a unitary similarity; only q matters.
                for (const auto& set : sets) {
                    Eigen::MatrixXcd m(set.size(), set.size());
                    for (std::size_t a = 0; a < set.size(); ++a)
                        for (std::size_t b = 0; b < set.size(); ++b)
                            m(a, b) = std::exp(-0.5 * q * (set[a] - set[b]) * (set[a] - set[b]));
                    kmin = std::min(kmin, set.size() == 2 ? 1.0 - std::real(m(0, 1)) : detail::min_hermitian_eigenvalue(m));
                }
            }
        } else {
            const auto& vals = mu.table().values[k];
            rep.normalization_defect = std::max(rep.normalization_defect, std::abs(vals[grid.zero_index()]));
            for (std::size_t g = 0; g < grid.n_real(); ++g) {
                rep.hermitian_defect =
                    std::max(rep.hermitian_defect, std::abs(vals[grid.negation_index(g)] - std::conj(vals[g])));
            }
            for (const auto& set : sets) {
                Eigen::MatrixXcd m(set.size(), set.size());
                bool ok = true;
                for (std::size_t a = 0; a < set.size() && ok; ++a) {
                    for (std::size_t b = 0; b < set.size() && ok; ++b) {
                        try {
                            m(a, b) = std::exp(mu(CVec{kI * (set[a] - set[b])}, k));
                        } catch (const Error&) {
                            ok = false;
                        }
                    }
                }
                if (!ok) continue;
                const double ev = set.size() == 2 ? 1.0 - std::abs(m(0, 1)) : detail::min_hermitian_eigenvalue(m);
                kmin = std::min(kmin, ev);
            }
        }
        if (!std::isfinite(kmin) && kmin > 0) kmin = 0.0;  // nothing testable
        rep.min_eigenvalue_per_time.push_back(kmin);
        rep.min_eigenvalue = std::min(rep.min_eigenvalue, kmin);
    }
    if (!std::isfinite(rep.min_eigenvalue) && rep.min_eigenvalue > 0) rep.min_eigenvalue = 0.0;
    rep.valid = rep.min_eigenvalue >= tolerance && rep.normalization_defect <= 1e-10 && rep.hermitian_defect <= 1e-10;
    return rep;
}

// ---------------------------------------------------------------------------
// Membership in I(a, y) and J(y, theta)
// ---------------------------------------------------------------------------

struct MembershipOptions {
    std::size_t bochner_order = 8;
    double eigen_tolerance = -1e-8;
    double reproduce_tolerance = 1e-9;
};

inline std::vector<std::size_t> imaginary_pins(const UGrid& grid) {
    std::vector<std::size_t> pins;
    for (std::size_t g = grid.n_real(); g < grid.size(); ++g) pins.push_back(g);
    return pins;
}

/// A samplable (parametric) witness that reproduces theta on the whole grid.
inline std::optional<HullWhiteExtension> parametric_witness(const AffineModel& model, const FlowTable& table,
                                                            const CharSurface& theta, const RVec& y,
                                                            const MembershipOptions& opt = {}) {
    const auto pins = imaginary_pins(theta.grid());
    if (pins.empty() || theta.grid().dim() != 1) return std::nullopt;
    try {
        auto ext = extract_mu_parametric(model, table, theta, y, pins, pins.size() >= 2);
        const auto rebuilt = extended_forward_surface(table, y, ext.mu, theta.horizon(), theta.time_stamp());
        const double scale = 1.0 + max_abs(theta);
        if (max_abs_diff(rebuilt, theta) > opt.reproduce_tolerance * scale) return std::nullopt;
        if (!validate_inc(ext.mu, theta.grid(), opt.bochner_order, opt.eigen_tolerance).valid) return std::nullopt;
        return ext;
    } catch (const Error&) {
        return std::nullopt;
    }
}

inline std::pair<bool, std::optional<HullWhiteExtension>> membership_I(const AffineModel& model,
                                                                       const FlowTable& table, const RVec& y,
                                                                       const CharSurface& theta,
                                                                       const MembershipOptions& opt = {}) {
    if (auto ext = parametric_witness(model, table, theta, y, opt)) return {true, std::move(ext)};
    try {
        auto ext = extract_mu_tabulated(model, table, theta, y);
        if (validate_inc(ext.mu, theta.grid(), opt.bochner_order, opt.eigen_tolerance).valid) {
            return {true, std::move(ext)};
        }
    } catch (const Error&) {
    }
    return {false, std::nullopt};
}

inline std::pair<bool, std::optional<HullWhiteExtension>> membership_I(const AffineModel& model, const RVec& y,
                                                                       const CharSurface& theta,
                                                                       const MembershipOptions& opt = {}) {
    const auto table = make_flow_table(model, theta.grid_ptr(), theta.horizon());
    return membership_I(model, table, y, theta, opt);
}

inline bool membership_J(const RVec& y, const CharSurface& theta, const AffineModel& candidate,
                         const MembershipOptions& opt = {}) {
    try {
        return membership_I(candidate, y, theta, opt).first;
    } catch (const Error&) {
        return false;
    }
}

/// Smallest order-2 Bochner eigenvalue, 1 - |exp(mu(iu, k))|, over the grid
/// and all times of the witness: 0 on the boundary (no extra randomness),
/// positive when the surface carries more dispersion than the model.
inline double lies_above_margin(const HullWhiteExtension& ext, const UGrid& grid) {
    return validate_inc(ext.mu, grid, 2).min_eigenvalue;
}

}  // namespace crcterm
