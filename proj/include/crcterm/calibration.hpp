#pragma once

// Calibration from one observed trajectory (X_t, theta_t): realized-variance
// factor path, B-fields from first differences of theta, A by subtraction,
// then the remaining level parameter and an instantaneous extension per t.
// The parametric shape fit covers the Heston family.

#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "crcterm/affine.hpp"
#include "crcterm/hull_white.hpp"
#include "crcterm/surface.hpp"
#include "crcterm/types.hpp"

namespace crcterm {

struct ObservationSet {
    RVec X;                          // X_0..X_T
    std::vector<CharSurface> theta;  // theta_0..theta_T, one grid
    double dt = 1.0 / 252.0;

    std::size_t length() const { return X.size(); }

    void validate() const {
        require(X.size() == theta.size(), ErrorCode::InvalidArgument, "observations: X and theta lengths differ");
        require(X.size() >= 2, ErrorCode::TooShort, "observations: need at least two times");
        require(dt > 0.0, ErrorCode::InvalidArgument, "observations: dt must be positive");
        for (const auto& th : theta) {
            require(th.grid() == theta.front().grid() && th.horizon() == theta.front().horizon(),
                    ErrorCode::InvalidArgument, "observations: surfaces do not share one grid and horizon");
        }
    }
};

// ---------------------------------------------------------------------------
// Factor path
// ---------------------------------------------------------------------------

/// Y_hat_t = sum_{j=t-w+1}^{t} (dX_j - mean)^2 / (w dt), dX_j = X_j - X_{j-1},
/// floored at 0. Entries t < w have no full window and are NaN.
inline RVec extract_Y(const RVec& X, std::size_t window, double dt) {
    require(window >= 2, ErrorCode::InvalidArgument, "extract_Y: window must be at least 2");
    require(X.size() > window, ErrorCode::TooShort, "extract_Y: path not longer than the window");
    RVec out(X.size(), std::numeric_limits<double>::quiet_NaN());
    const double w = static_cast<double>(window);
    for (std::size_t t = window; t < X.size(); ++t) {
        double mean = 0.0;
        for (std::size_t j = t + 1 - window; j <= t; ++j) mean += X[j] - X[j - 1];
        mean /= w;
        double ss = 0.0;
        for (std::size_t j = t + 1 - window; j <= t; ++j) {
            const double d = X[j] - X[j - 1] - mean;
            ss += d * d;
        }
        out[t] = std::max(0.0, ss / (w * dt));
    }
    return out;
}

// ---------------------------------------------------------------------------
// B-fields
// ---------------------------------------------------------------------------

struct BEstimate {
    CharSurface B;                  // B_hat(u, x)
    std::size_t ref_g = 0;          // reference grid point for the ratios
    double ref_scale = 0.0;         // B_hat(ref, 0)
    double ratio_residual = 0.0;    // RMS of Delta theta not explained by the ratios
};

/// Ratios B(u,x)/B(ref,0) from the covariation of demeaned first differences
/// of theta with those at the reference point; the scale B(ref,0) from the
/// regression of Y_hat_t on the window average of theta(ref,0) that Y_hat_t
/// averages over (a reverse regression, so noise in Y_hat does not attenuate).
/// Uses times [first, last].
inline BEstimate estimate_B(const std::vector<CharSurface>& theta, const RVec& Y_hat, std::size_t window,
                            std::size_t first, std::size_t last, std::optional<std::size_t> ref = std::nullopt) {
    require(theta.size() == Y_hat.size(), ErrorCode::InvalidArgument, "estimate_B: lengths differ");
    require(first >= window && last < theta.size() && last > first + 1, ErrorCode::TooShort,
            "estimate_B: not enough observations in range");
    const auto& grid = theta.front().grid_ptr();
    const std::size_t H = theta.front().horizon();
    std::size_t rg = 0;
    if (ref) {
        rg = *ref;
    } else if (auto pin = grid->find_imag(1.0)) {
        rg = *pin;
    } else {
        for (std::size_t g = 0; g < grid->n_real(); ++g)
            if (std::abs(grid->scalar(g)) > std::abs(grid->scalar(rg))) rg = g;
    }
    const std::size_t n = last - first;  // differences t = first..last-1
    // Reference series.
    Eigen::VectorXcd r(n);
    for (std::size_t k = 0; k < n; ++k) r(k) = theta[first + k + 1](rg, 0) - theta[first + k](rg, 0);
    r.array() -= r.mean();
    const double rr = r.squaredNorm();
    require(rr > 1e-300, ErrorCode::Degenerate, "estimate_B: reference differences have no variation");

    CVec vals(grid->size() * H);
    double resid = 0.0;
    for (std::size_t g = 0; g < grid->size(); ++g) {
        for (std::size_t x = 0; x < H; ++x) {
            Eigen::VectorXcd d(n);
            for (std::size_t k = 0; k < n; ++k) d(k) = theta[first + k + 1](g, x) - theta[first + k](g, x);
            d.array() -= d.mean();
            const Complex ratio = r.dot(d) / rr;  // conj(r) . d
            vals[g * H + x] = ratio;
            resid += (d - ratio * r).squaredNorm();
        }
    }

    // Scale: Y_hat_t = alpha + beta * mean_{j=t-w}^{t-1} theta_j(ref, 0).
    const std::size_t m = last - first + 1;
    Eigen::MatrixXd design(m, 2);
    Eigen::VectorXd yv(m);
    for (std::size_t k = 0; k < m; ++k) {
        const std::size_t t = first + k;
        double avg = 0.0;
        for (std::size_t j = t - window; j < t; ++j) avg += theta[j](rg, 0).real();
        design(k, 0) = 1.0;
        design(k, 1) = avg / static_cast<double>(window);
        yv(k) = Y_hat[t];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-12);
    require(qr.rank() == 2, ErrorCode::Degenerate, "estimate_B: reference level has no variation");
    const Eigen::VectorXd coef = qr.solve(yv);
    require(std::abs(coef(1)) > 0.0, ErrorCode::Degenerate, "estimate_B: factor path unrelated to theta");
    const double scale = 1.0 / coef(1);
    for (auto& v : vals) v *= scale;

    BEstimate out{CharSurface(grid, H, std::move(vals)), rg, scale,
                  std::sqrt(resid / static_cast<double>(n * grid->size() * H))};
    return out;
}

/// A_t = theta_t - B_hat * Y_hat_t.
inline CharSurface solve_A(const CharSurface& theta, const CharSurface& B_hat, double y_hat) {
    return theta - Complex(y_hat, 0.0) * B_hat;
}

// ---------------------------------------------------------------------------
// Shape fit (a, c, rho) for the Heston family
// ---------------------------------------------------------------------------

/// psi_C(iu, x+1) - psi_C(iu, x) for x < horizon.
inline CharSurface b_field_shape(const AffineModel& model, const GridPtr& grid, std::size_t horizon) {
    const auto table = make_flow_table(model, grid, horizon);
    return CharSurface::tabulate(grid, horizon, [&](std::size_t g, std::size_t x) {
        return table.psi[g][x + 1][0] - table.psi[g][x][0];
    });
}

struct ShapeFit {
    HestonParams params;
    double profiled_scale = 1.0;  // s in B_hat ~ s * shape
    double residual = 0.0;        // RMS misfit after scaling
    int lm_status = 0;
};

namespace detail {

struct ShapeFunctor {
    using Scalar = double;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;

    const CharSurface* target;
    HestonParams base;

    int inputs() const { return 3; }
    int values() const { return static_cast<int>(2 * target->values().size()); }

    static HestonParams decode(const Eigen::VectorXd& p, HestonParams h) {
        h.a = std::exp(p(0));
        h.c = std::exp(p(1));
        h.rho = std::tanh(p(2));
        if (!(h.b > 0.0)) h.b = 1.0;  // B does not depend on b
        return h;
    }

    /// Residuals of target - s * shape with s profiled out (real least squares).
    std::pair<Eigen::VectorXd, double> residuals(const Eigen::VectorXd& p) const {
        const auto& tv = target->values();
        Eigen::VectorXd out(2 * tv.size());
        CharSurface shape = CharSurface::zeros(target->grid_ptr(), target->horizon());
        try {
            shape = b_field_shape(heston(decode(p, base)), target->grid_ptr(), target->horizon());
        } catch (const Error&) {
            out.setConstant(1e3);
            return {out, 0.0};
        }
        const auto& sv = shape.values();
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < tv.size(); ++j) {
            num += (std::conj(sv[j]) * tv[j]).real();
            den += std::norm(sv[j]);
        }
        const double s = den > 0.0 ? num / den : 0.0;
        for (std::size_t j = 0; j < tv.size(); ++j) {
            const Complex d = tv[j] - s * sv[j];
            out(2 * j) = d.real();
            out(2 * j + 1) = d.imag();
        }
        return {out, s};
    }

    int operator()(const Eigen::VectorXd& p, Eigen::VectorXd& f) const {
        f = residuals(p).first;
        return 0;
    }
};

}  // namespace detail

/// Least-squares fit of B_hat against s * shape(a, c, rho), parametrized by
/// (log a, log c, atanh rho); each start is tried and the best kept.
inline ShapeFit fit_shape_heston(const CharSurface& B_hat, HestonParams base,
                                 const std::vector<HestonParams>& starts) {
    require(!starts.empty(), ErrorCode::InvalidArgument, "fit_shape_heston: no starting points");
    ShapeFit best;
    best.residual = std::numeric_limits<double>::infinity();
    for (const auto& st : starts) {
        detail::ShapeFunctor f{&B_hat, base};
        Eigen::NumericalDiff<detail::ShapeFunctor> nd(f);
        Eigen::LevenbergMarquardt<Eigen::NumericalDiff<detail::ShapeFunctor>> lm(nd);
        lm.parameters.maxfev = 2000;
        lm.parameters.xtol = 1e-12;
        lm.parameters.ftol = 1e-14;
        Eigen::VectorXd p(3);
        p << std::log(st.a), std::log(st.c), std::atanh(std::clamp(st.rho, -0.999, 0.999));
        const int status = lm.minimize(p);
        auto [res, s] = f.residuals(p);
        const double rms = std::sqrt(res.squaredNorm() / static_cast<double>(res.size()));
        if (rms < best.residual) {
            best.params = detail::ShapeFunctor::decode(p, base);
            best.profiled_scale = s;
            best.residual = rms;
            best.lm_status = status;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Level parameter and extension
// ---------------------------------------------------------------------------

struct LevelFit {
    double b = 0.0;
    double residual = 0.0;  // RMS after projection
};

/// Fits the level parameter `level_name` of `model` to A. phi differences
/// are affine in the level, so two evaluations (level 1 and 2) span them; directions that noise in Y_hat (span of the
/// B-field) or a drift-shift extension (iu at a single x) can produce are
/// projected out first.
inline LevelFit fit_level(const CharSurface& A, const AffineModel& model, const std::string& level_name) {
    const auto& grid = A.grid_ptr();
    const std::size_t H = A.horizon();
    const RVec zero(model.m(), 0.0);
    const auto base = affine_forward_surface(with_params(model, {{level_name, 1.0}}), zero, grid, H);
    const auto unit = affine_forward_surface(with_params(model, {{level_name, 2.0}}), zero, grid, H);
    const auto B = b_field_shape(model, grid, H);
    const std::size_t N = A.values().size();
    const std::size_t cols = 2 + H;
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(2 * N, cols);
    Eigen::VectorXd rhs(2 * N);
    for (std::size_t g = 0; g < grid->size(); ++g) {
        const Complex iu = kI * grid->scalar(g);
        for (std::size_t x = 0; x < H; ++x) {
            const std::size_t j = g * H + x;
            const Complex d = unit.values()[j] - base.values()[j];
            const Complex r = A.values()[j] - base.values()[j];
            const Complex bb = B.values()[j];
            M(2 * j, 0) = d.real();
            M(2 * j + 1, 0) = d.imag();
            M(2 * j, 1) = bb.real();
            M(2 * j + 1, 1) = bb.imag();
            M(2 * j, 2 + x) = iu.real();
            M(2 * j + 1, 2 + x) = iu.imag();
            rhs(2 * j) = r.real();
            rhs(2 * j + 1) = r.imag();
        }
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
    qr.setThreshold(1e-12);
    require(qr.rank() == static_cast<Eigen::Index>(cols), ErrorCode::Degenerate,
            "fit_level: level parameter not identifiable on this grid");
    const Eigen::VectorXd sol = qr.solve(rhs);
    LevelFit out;
    out.b = 1.0 + sol(0);
    out.residual = std::sqrt((rhs - M * sol).squaredNorm() / static_cast<double>(rhs.size()));
    return out;
}

/// Extension witness of theta_t under model at y, drift shift fitted at u = i
/// (or drift plus Gaussian layer from the pins +-i), with its order-2 margin.
inline std::pair<HullWhiteExtension, double> extension_and_margin(const AffineModel& model, const FlowTable& table,
                                                                 const CharSurface& theta, const RVec& y,
                                                                 bool gaussian_layer) {
    const UGrid& grid = theta.grid();
    const auto pi = grid.find_imag(1.0);
    require(pi.has_value(), ErrorCode::PinMissing, "extension_and_margin: pin i not on the grid");
    std::vector<std::size_t> pins{*pi};
    if (gaussian_layer) {
        const auto mi = grid.find_imag(-1.0);
        require(mi.has_value(), ErrorCode::PinMissing, "extension_and_margin: pin -i not on the grid");
        pins.push_back(*mi);
    }
    auto ext = extract_mu_parametric(model, table, theta, y, pins, gaussian_layer);
    const double margin = lies_above_margin(ext, grid);
    return {std::move(ext), margin};
}

/// Margin of theta with respect to (model, y): the smallest order-2 Bochner
/// eigenvalue of the witnessing extension (drift shift plus Gaussian layer).
inline double lies_above_margin(const CharSurface& theta, const AffineModel& model, const RVec& y) {
    const auto table = make_flow_table(model, theta.grid_ptr(), theta.horizon());
    return extension_and_margin(model, table, theta, y, true).second;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct CalibrationOptions {
    std::size_t y_window = 20;
    std::size_t estimation_window = 0;  // 0: one window over the whole sample
    int substeps = 8;
    bool gaussian_layer = false;        // witness family used for the margins
    bool keep_surfaces = false;         // retain A_hat for every t
    std::vector<HestonParams> starts;   // empty: a small default set
};

struct WindowEstimate {
    std::size_t first = 0, last = 0;  // inclusive time range
    HestonParams params;
    double ref_scale = 0.0;
    double profiled_scale = 0.0;
    double ratio_residual = 0.0;
    double shape_residual = 0.0;
    double level_residual = 0.0;
    double min_margin = 0.0;
    bool feller = false;
};

struct CalibrationResult {
    RVec Y_hat;
    std::vector<CharSurface> B_hat;  // one per window
    std::vector<CharSurface> A_hat;  // per t from first_t, when kept
    std::vector<WindowEstimate> windows;
    RVec margins;                    // per t, NaN before first_t
    RVec shift_c0;                   // fitted c(0) of the witness, per t
    std::size_t first_t = 0;
};

inline std::vector<HestonParams> default_starts(double dt, int substeps) {
    std::vector<HestonParams> out;
    for (double a : {0.5, 3.0})
        for (double rho : {-0.5, 0.5}) {
            HestonParams h;
            h.a = a;
            h.b = 0.0;
            h.c = 0.5;
            h.rho = rho;
            h.dt = dt;
            h.substeps = substeps;
            out.push_back(h);
        }
    return out;
}

inline CalibrationResult calibrate_heston(const ObservationSet& obs, const CalibrationOptions& opt = {}) {
    obs.validate();
    const std::size_t T = obs.length();
    const std::size_t w = opt.y_window;
    require(T > w + 2, ErrorCode::TooShort, "calibrate: path too short for the variance window");
    CalibrationResult res;
    res.Y_hat = extract_Y(obs.X, w, obs.dt);
    res.first_t = w;
    res.margins = RVec(T, std::numeric_limits<double>::quiet_NaN());
    res.shift_c0 = RVec(T, std::numeric_limits<double>::quiet_NaN());
    const std::size_t span = T - w;
    const std::size_t est = opt.estimation_window == 0 ? span : std::min(opt.estimation_window, span);
    require(est >= 3, ErrorCode::TooShort, "calibrate: estimation window too short");
    const auto starts = opt.starts.empty() ? default_starts(obs.dt, opt.substeps) : opt.starts;
    const auto& grid = obs.theta.front().grid_ptr();
    const std::size_t H = obs.theta.front().horizon();

    for (std::size_t first = w; first + est <= T; first += est) {
        const std::size_t last = first + est - 1;
        WindowEstimate win;
        win.first = first;
        win.last = last;
        const auto Bfit = estimate_B(obs.theta, res.Y_hat, w, first, last);
        win.ref_scale = Bfit.ref_scale;
        win.ratio_residual = Bfit.ratio_residual;

        HestonParams base;
        base.dt = obs.dt;
        base.substeps = opt.substeps;
        const auto shape = fit_shape_heston(Bfit.B, base, starts);
        win.profiled_scale = shape.profiled_scale;
        win.shape_residual = shape.residual;

        // Level: average A over the window, then the projected fit.
        HestonParams hp = shape.params;
        hp.b = 1.0;  // placeholder, B does not depend on b
        CVec acc(grid->size() * H, Complex(0.0, 0.0));
        for (std::size_t t = first; t <= last; ++t) {
            const auto A = solve_A(obs.theta[t], Bfit.B, res.Y_hat[t]);
            for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += A.values()[j];
            if (opt.keep_surfaces) res.A_hat.push_back(A);
        }
        for (auto& v : acc) v /= static_cast<double>(est);
        const auto level = fit_level(CharSurface(grid, H, std::move(acc)), heston(hp), "b");
        require(level.b > 0.0, ErrorCode::Degenerate, "calibrate: fitted long-run variance is not positive");
        hp.b = level.b;
        win.level_residual = level.residual;
        win.params = hp;
        win.feller = hp.feller();

        // Instantaneous extension and margin per t.
        const auto model = heston(hp);
        const auto table = make_flow_table(model, grid, H);
        win.min_margin = std::numeric_limits<double>::infinity();
        for (std::size_t t = first; t <= last; ++t) {
            auto [ext, margin] = extension_and_margin(model, table, obs.theta[t], {res.Y_hat[t]}, opt.gaussian_layer);
            res.margins[t] = margin;
            res.shift_c0[t] = ext.mu.shift_law().c[0];
            win.min_margin = std::min(win.min_margin, margin);
        }
        res.B_hat.push_back(Bfit.B);
        res.windows.push_back(win);
    }
    return res;
}

}  // namespace crcterm
