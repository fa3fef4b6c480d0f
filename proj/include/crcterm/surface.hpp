#pragma once

// Forward-characteristic surfaces on finite frequency grids.
//
// A CharSurface stores theta(u, x) for every grid frequency u and every
// time-to-maturity x = 0 .. horizon-1 (Musiela parametrization). The running
// sum over x of theta(u, .) is the log of the conditional characteristic
// function of the increment over that many periods.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "crcterm/rng.hpp"
#include "crcterm/types.hpp"

namespace crcterm {

/// Frequency lattice: symmetric real points (containing 0) followed by
/// designated purely imaginary pins u = i*s.
class UGrid {
public:
    UGrid(std::size_t dim, std::vector<RVec> real_points, std::vector<RVec> imag_points)
        : dim_(dim), n_real_(real_points.size()) {
        require(dim_ >= 1, ErrorCode::InvalidArgument, "UGrid: dimension must be >= 1");
        points_.reserve(real_points.size() + imag_points.size());
        for (const auto& p : real_points) {
            require(p.size() == dim_, ErrorCode::InvalidArgument, "UGrid: real point has wrong dimension");
            CVec u(dim_);
            for (std::size_t j = 0; j < dim_; ++j) u[j] = Complex(p[j], 0.0);
            points_.push_back(std::move(u));
        }
        for (const auto& p : imag_points) {
            require(p.size() == dim_, ErrorCode::InvalidArgument, "UGrid: imaginary pin has wrong dimension");
            bool nonzero = false;
            CVec u(dim_);
            for (std::size_t j = 0; j < dim_; ++j) {
                u[j] = Complex(0.0, p[j]);
                nonzero = nonzero || p[j] != 0.0;
            }
            require(nonzero, ErrorCode::InvalidArgument, "UGrid: imaginary pin must be nonzero");
            points_.push_back(std::move(u));
        }
        zero_ = find_exact(CVec(dim_, Complex(0.0, 0.0))).value_or(size());
        require(zero_ < n_real_, ErrorCode::InvalidArgument, "UGrid: 0 must be a real grid point");
        negation_.assign(n_real_, 0);
        for (std::size_t g = 0; g < n_real_; ++g) {
            CVec neg = points_[g];
            for (auto& c : neg) c = -c;
            auto idx = find_exact(neg);
            require(idx.has_value() && *idx < n_real_, ErrorCode::InvalidArgument,
                    "UGrid: real points must be symmetric about 0");
            negation_[g] = *idx;
        }
    }

    /// Equally spaced 1-d grid on [-u_max, u_max] with an odd number of points.
    static UGrid symmetric_1d(double u_max, std::size_t n_points, const RVec& imag_pins = {1.0, -1.0}) {
        require(n_points % 2 == 1, ErrorCode::InvalidArgument, "UGrid: n_points must be odd");
        require(u_max > 0.0 || n_points == 1, ErrorCode::InvalidArgument, "UGrid: u_max must be positive");
        std::vector<RVec> real;
        const long half = static_cast<long>(n_points / 2);
        for (long k = -half; k <= half; ++k) {
            real.push_back({half == 0 ? 0.0 : u_max * static_cast<double>(k) / static_cast<double>(half)});
        }
        real[static_cast<std::size_t>(half)][0] = 0.0;
        std::vector<RVec> imag;
        for (double s : imag_pins) imag.push_back({s});
        return UGrid(1, std::move(real), std::move(imag));
    }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return points_.size(); }
    std::size_t n_real() const noexcept { return n_real_; }
    bool is_real(std::size_t g) const noexcept { return g < n_real_; }
    const CVec& point(std::size_t g) const { return points_.at(g); }
    /// First coordinate of grid point g (the whole point on 1-d grids).
    Complex scalar(std::size_t g) const { return points_.at(g)[0]; }
    std::size_t zero_index() const noexcept { return zero_; }
    std::size_t negation_index(std::size_t g) const { return negation_.at(g); }

    std::optional<std::size_t> find(const CVec& u, double tol = 1e-12) const {
        for (std::size_t g = 0; g < points_.size(); ++g) {
            if (u.size() == dim_ && max_abs_diff(points_[g], u) <= tol) return g;
        }
        return std::nullopt;
    }

    /// Index of the imaginary pin u = i*s on a 1-d grid.
    std::optional<std::size_t> find_imag(double s, double tol = 1e-12) const {
        return find(CVec{Complex(0.0, s)}, tol);
    }

    bool operator==(const UGrid& other) const {
        if (dim_ != other.dim_ || n_real_ != other.n_real_ || points_.size() != other.points_.size()) return false;
        for (std::size_t g = 0; g < points_.size(); ++g) {
            if (points_[g] != other.points_[g]) return false;
        }
        return true;
    }

private:
    std::optional<std::size_t> find_exact(const CVec& u) const {
        for (std::size_t g = 0; g < points_.size(); ++g) {
            if (points_[g] == u) return g;
        }
        return std::nullopt;
    }

    std::size_t dim_;
    std::size_t n_real_;
    std::vector<CVec> points_;
    std::size_t zero_ = 0;
    std::vector<std::size_t> negation_;
};

using GridPtr = std::shared_ptr<const UGrid>;

inline GridPtr make_grid(UGrid grid) { return std::make_shared<const UGrid>(std::move(grid)); }

/// Immutable snapshot theta(u, x); every transformation returns a new value.
class CharSurface {
public:
    CharSurface(GridPtr grid, std::size_t horizon, CVec values, double time_stamp = 0.0)
        : grid_(std::move(grid)), horizon_(horizon), values_(std::move(values)), time_stamp_(time_stamp) {
        require(grid_ != nullptr, ErrorCode::InvalidArgument, "CharSurface: null grid");
        require(values_.size() == grid_->size() * horizon_, ErrorCode::InvalidArgument,
                "CharSurface: value count does not match grid x horizon");
    }

    static CharSurface zeros(GridPtr grid, std::size_t horizon, double time_stamp = 0.0) {
        const std::size_t n = grid->size() * horizon;
        return CharSurface(std::move(grid), horizon, CVec(n, Complex(0.0, 0.0)), time_stamp);
    }

    /// Build from a generator f(g, x).
    template <typename F>
    static CharSurface tabulate(GridPtr grid, std::size_t horizon, F&& f, double time_stamp = 0.0) {
        CVec v(grid->size() * horizon);
        for (std::size_t g = 0; g < grid->size(); ++g) {
            for (std::size_t x = 0; x < horizon; ++x) v[g * horizon + x] = f(g, x);
        }
        return CharSurface(std::move(grid), horizon, std::move(v), time_stamp);
    }

    const UGrid& grid() const noexcept { return *grid_; }
    const GridPtr& grid_ptr() const noexcept { return grid_; }
    std::size_t horizon() const noexcept { return horizon_; }
    double time_stamp() const noexcept { return time_stamp_; }
    const CVec& values() const noexcept { return values_; }

    Complex operator()(std::size_t g, std::size_t x) const { return values_[g * horizon_ + x]; }
    std::span<const Complex> row(std::size_t g) const {
        return std::span<const Complex>(values_).subspan(g * horizon_, horizon_);
    }

    CharSurface with_time_stamp(double t) const { return CharSurface(grid_, horizon_, values_, t); }

    /// First `h` maturities only.
    CharSurface truncated(std::size_t h) const {
        require(h <= horizon_, ErrorCode::HorizonExhausted, "truncated: horizon too short");
        return tabulate(grid_, h, [&](std::size_t g, std::size_t x) { return (*this)(g, x); }, time_stamp_);
    }

private:
    GridPtr grid_;
    std::size_t horizon_;
    CVec values_;
    double time_stamp_;
};

inline void require_same_layout(const CharSurface& a, const CharSurface& b) {
    require(a.horizon() == b.horizon() && (a.grid_ptr() == b.grid_ptr() || a.grid() == b.grid()),
            ErrorCode::InvalidArgument, "surfaces live on different grids or horizons");
}

/// Elementwise a*p + b*q.
inline CharSurface combine(Complex a, const CharSurface& p, Complex b, const CharSurface& q) {
    require_same_layout(p, q);
    CVec v(p.values().size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a * p.values()[i] + b * q.values()[i];
    return CharSurface(p.grid_ptr(), p.horizon(), std::move(v), p.time_stamp());
}

inline CharSurface operator+(const CharSurface& p, const CharSurface& q) { return combine(1.0, p, 1.0, q); }
inline CharSurface operator-(const CharSurface& p, const CharSurface& q) { return combine(1.0, p, -1.0, q); }
inline CharSurface operator*(Complex a, const CharSurface& p) {
    CVec v(p.values());
    for (auto& c : v) c *= a;
    return CharSurface(p.grid_ptr(), p.horizon(), std::move(v), p.time_stamp());
}

inline double max_abs_diff(const CharSurface& a, const CharSurface& b) {
    require_same_layout(a, b);
    return max_abs_diff(a.values(), b.values());
}

inline double max_abs(const CharSurface& a) {
    double m = 0.0;
    for (const auto& c : a.values()) m = std::max(m, std::abs(c));
    return m;
}

/// (S_1 theta)(u, x) = theta(u, x + 1); the horizon shrinks by one.
inline CharSurface shift(const CharSurface& theta) {
    require(theta.horizon() >= 2, ErrorCode::HorizonExhausted, "shift needs horizon >= 2");
    return CharSurface::tabulate(
        theta.grid_ptr(), theta.horizon() - 1, [&](std::size_t g, std::size_t x) { return theta(g, x + 1); },
        theta.time_stamp() + 1.0);
}

/// Per grid point, sum_{x < t} theta(u, x).
inline CVec cumulate(const CharSurface& theta, std::size_t t) {
    require(t <= theta.horizon(), ErrorCode::HorizonExhausted, "cumulate: t exceeds horizon");
    CVec out(theta.grid().size(), Complex(0.0, 0.0));
    for (std::size_t g = 0; g < out.size(); ++g) {
        Complex s(0.0, 0.0);
        for (std::size_t x = 0; x < t; ++x) s += theta(g, x);
        out[g] = s;
    }
    return out;
}

/// max_x |theta(0, x)|; zero for every well-formed surface.
inline double normalization_defect(const CharSurface& theta) {
    double m = 0.0;
    const std::size_t g0 = theta.grid().zero_index();
    for (std::size_t x = 0; x < theta.horizon(); ++x) m = std::max(m, std::abs(theta(g0, x)));
    return m;
}

/// max over real points of |theta(-u, x) - conj(theta(u, x))|.
inline double hermitian_defect(const CharSurface& theta) {
    double m = 0.0;
    const auto& grid = theta.grid();
    for (std::size_t g = 0; g < grid.n_real(); ++g) {
        const std::size_t ng = grid.negation_index(g);
        for (std::size_t x = 0; x < theta.horizon(); ++x) {
            m = std::max(m, std::abs(theta(ng, x) - std::conj(theta(g, x))));
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Complex logarithms
// ---------------------------------------------------------------------------

/// Logarithm of f along a path anchored at f[0] (normally 1), with the phase
/// unwrapped step by step. Rejects zeros and steps whose phase change cannot
/// be resolved (|arg(f[k+1]/f[k])| reaching pi).
inline CVec continuous_log(std::span<const Complex> f) {
    CVec out(f.size());
    if (f.empty()) return out;
    for (std::size_t k = 0; k < f.size(); ++k) {
        require(std::abs(f[k]) > 0.0 && std::isfinite(f[k].real()) && std::isfinite(f[k].imag()),
                ErrorCode::ZeroValue, "continuous_log: value " + std::to_string(k) + " is zero or not finite");
    }
    out[0] = std::log(f[0]);
    constexpr double kMaxStep = std::numbers::pi * (1.0 - 1e-12);
    for (std::size_t k = 1; k < f.size(); ++k) {
        const Complex ratio = f[k] / f[k - 1];
        const double step = std::arg(ratio);
        require(std::abs(step) < kMaxStep, ErrorCode::BranchJump,
                "continuous_log: phase step at index " + std::to_string(k) + " reaches pi");
        out[k] = Complex(std::log(std::abs(f[k])), out[k - 1].imag() + step);
    }
    return out;
}

inline CVec continuous_log(const CVec& f) { return continuous_log(std::span<const Complex>(f)); }

/// log f(u) continued along the straight segment s*u, s in [0,1], from
/// f(0) = 1. The segment is refined until every phase step is below pi/8.
inline Complex log_along_ray(const std::function<Complex(double)>& f_on_ray) {
    for (std::size_t n = 8; n <= (std::size_t{1} << 20); n *= 2) {
        CVec vals(n + 1);
        for (std::size_t k = 0; k <= n; ++k) vals[k] = f_on_ray(static_cast<double>(k) / static_cast<double>(n));
        bool fine = true;
        for (std::size_t k = 1; k <= n && fine; ++k) {
            require(std::abs(vals[k]) > 0.0, ErrorCode::ZeroValue, "log_along_ray: characteristic function vanishes");
            fine = std::abs(std::arg(vals[k] / vals[k - 1])) < std::numbers::pi / 8.0;
        }
        if (fine) return continuous_log(vals).back();
    }
    fail(ErrorCode::BranchJump, "log_along_ray: phase could not be resolved");
}

// ---------------------------------------------------------------------------
// Increment laws and process characteristics
// ---------------------------------------------------------------------------

/// Law of one increment Delta in R^d.
class IncrementLaw {
public:
    enum class Support { FiniteState, Continuous };
    /// kappa(u) = log E[exp(i <u, Delta>)], for real or complex u.
    using Cumulant = std::function<Complex(const CVec&)>;
    using Sampler = std::function<RVec(rng::Stream&)>;
    struct Atom {
        double prob;
        RVec value;
    };

    static IncrementLaw closed_form(std::size_t dim, Cumulant kappa, Sampler sampler = {}) {
        IncrementLaw law(dim, Support::Continuous);
        law.cumulant_ = std::move(kappa);
        law.sampler_ = std::move(sampler);
        return law;
    }

    static IncrementLaw finite_state(std::vector<Atom> atoms) {
        require(!atoms.empty(), ErrorCode::InvalidArgument, "finite_state: no atoms");
        const std::size_t dim = atoms.front().value.size();
        double total = 0.0;
        for (const auto& a : atoms) {
            require(a.prob >= 0.0, ErrorCode::InvalidArgument, "finite_state: negative probability");
            require(a.value.size() == dim, ErrorCode::InvalidArgument, "finite_state: inconsistent dimension");
            total += a.prob;
        }
        require(std::abs(total - 1.0) <= 1e-14 * static_cast<double>(atoms.size()), ErrorCode::InvalidArgument,
                "finite_state: probabilities do not sum to 1");
        IncrementLaw law(dim, Support::FiniteState);
        law.atoms_ = std::move(atoms);
        return law;
    }

    static IncrementLaw sampler_only(std::size_t dim, Sampler sampler) {
        IncrementLaw law(dim, Support::Continuous);
        law.sampler_ = std::move(sampler);
        return law;
    }

    std::size_t dim() const noexcept { return dim_; }
    Support support() const noexcept { return support_; }
    bool has_closed_form() const noexcept { return static_cast<bool>(cumulant_); }
    bool has_sampler() const noexcept { return static_cast<bool>(sampler_) || support_ == Support::FiniteState; }
    const std::vector<Atom>& atoms() const noexcept { return atoms_; }

    /// Exactly enumerated E[exp(i <u, Delta>)] (finite-state laws only).
    Complex enumerate_char(const CVec& u) const {
        require(support_ == Support::FiniteState, ErrorCode::Unsupported, "enumerate_char: law is not finite-state");
        Complex s(0.0, 0.0);
        for (const auto& a : atoms_) {
            Complex dot(0.0, 0.0);
            for (std::size_t j = 0; j < dim_; ++j) dot += u[j] * a.value[j];
            s += a.prob * std::exp(kI * dot);
        }
        return s;
    }

    Complex closed_cumulant(const CVec& u) const {
        require(has_closed_form(), ErrorCode::Unsupported, "closed_cumulant: no closed form");
        return cumulant_(u);
    }

    RVec sample(rng::Stream& s) const {
        if (sampler_) return sampler_(s);
        require(support_ == Support::FiniteState, ErrorCode::Unsupported, "sample: law has no sampler");
        double r = s.uniform();
        for (const auto& a : atoms_) {
            if (r < a.prob) return a.value;
            r -= a.prob;
        }
        return atoms_.back().value;
    }

private:
    IncrementLaw(std::size_t dim, Support support) : dim_(dim), support_(support) {}

    std::size_t dim_;
    Support support_;
    Cumulant cumulant_;
    Sampler sampler_;
    std::vector<Atom> atoms_;
};

/// kappa(u) at every grid point. Finite-state laws are enumerated exactly
/// and their logarithm is continued along the ray from 0 to u.
inline CVec process_characteristic(const IncrementLaw& law, const UGrid& grid) {
    require(law.dim() == grid.dim(), ErrorCode::InvalidArgument, "process_characteristic: dimension mismatch");
    CVec out(grid.size());
    if (law.has_closed_form()) {
        for (std::size_t g = 0; g < grid.size(); ++g) out[g] = law.closed_cumulant(grid.point(g));
        out[grid.zero_index()] = Complex(0.0, 0.0);
        return out;
    }
    require(law.support() == IncrementLaw::Support::FiniteState, ErrorCode::Unsupported,
            "process_characteristic: sampler-only laws have no exact characteristic");
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const CVec& u = grid.point(g);
        out[g] = log_along_ray([&](double s) {
            CVec v(u);
            for (auto& c : v) c *= s;
            return law.enumerate_char(v);
        });
    }
    out[grid.zero_index()] = Complex(0.0, 0.0);
    return out;
}

// ---------------------------------------------------------------------------
// Decomposition of surface increments
// ---------------------------------------------------------------------------

/// theta_{s+1}(u, x) - theta_s(u, x + 1) = alpha(u, x) + sum_i sigma^i(u, x) d eps^i,
/// in Musiela coordinates (index x = 0 is the first maturity after s + 1).
struct DecompositionTriple {
    CharSurface alpha;
    std::vector<CharSurface> sigmas;
    std::optional<IncrementLaw> epsilon_law;
    bool locally_independent = false;

    double normalization_defect() const {
        double m = crcterm::normalization_defect(alpha);
        for (const auto& s : sigmas) m = std::max(m, crcterm::normalization_defect(s));
        return m;
    }
};

}  // namespace crcterm
