#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "hilbert.hpp"

namespace catsyn {

// ---------------------------------------------------------------------------
// Pulse envelopes

struct ConstantPulse {
    double value = 1.0;
};
/// (pi/2) chi0 sin(pi t / T) on [0, T].
struct SinePulse {
    double chi0 = 0.0;
    double T = 1.0;
};
/// (chi0 / sqrt(pi)) exp(-t^2 / T^2) on [-3T, 3T].
struct GaussianPulse {
    double chi0 = 0.0;
    double T = 1.0;
};

class PulseShape {
public:
    using Variant = std::variant<ConstantPulse, SinePulse, GaussianPulse>;

    PulseShape() : v_(ConstantPulse{1.0}) {}
    PulseShape(ConstantPulse p) : v_(p) {}
    PulseShape(SinePulse p) : v_(p) {}
    PulseShape(GaussianPulse p) : v_(p) {}

    static PulseShape constant(double v) { return ConstantPulse{v}; }
    static PulseShape sine(double chi0, double T) { return SinePulse{chi0, T}; }
    static PulseShape gaussian(double chi0, double T) { return GaussianPulse{chi0, T}; }

    const Variant& variant() const { return v_; }
    bool is_constant() const { return std::holds_alternative<ConstantPulse>(v_); }

    double operator()(double t) const {
        return std::visit(
            [t](const auto& p) -> double {
                using P = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<P, ConstantPulse>) {
                    return p.value;
                } else if constexpr (std::is_same_v<P, SinePulse>) {
                    if (t < 0.0 || t > p.T) return 0.0;
                    return 0.5 * kPi * p.chi0 * std::sin(kPi * t / p.T);
                } else {
                    if (std::abs(t) > 3.0 * p.T) return 0.0;
                    return p.chi0 / std::sqrt(kPi) * std::exp(-t * t / (p.T * p.T));
                }
            },
            v_);
    }

    /// Support of the pulse; infinite for constants.
    std::pair<double, double> window() const {
        return std::visit(
            [](const auto& p) -> std::pair<double, double> {
                using P = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<P, ConstantPulse>)
                    return {-INFINITY, INFINITY};
                else if constexpr (std::is_same_v<P, SinePulse>)
                    return {0.0, p.T};
                else
                    return {-3.0 * p.T, 3.0 * p.T};
            },
            v_);
    }

    /// Closed-form integral over the window (constants: per unit time).
    double integral() const {
        return std::visit(
            [](const auto& p) -> double {
                using P = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<P, ConstantPulse>)
                    return p.value;
                else if constexpr (std::is_same_v<P, SinePulse>)
                    return p.chi0 * p.T;
                else
                    return p.chi0 * p.T * std::erf(3.0);
            },
            v_);
    }

    /// Closed-form integral of the squared envelope over the window.
    double integral_of_square() const {
        return std::visit(
            [](const auto& p) -> double {
                using P = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<P, ConstantPulse>)
                    return p.value * p.value;
                else if constexpr (std::is_same_v<P, SinePulse>)
                    return kPi * kPi * p.chi0 * p.chi0 * p.T / 8.0;
                else
                    return p.chi0 * p.chi0 * p.T / std::sqrt(2.0 * kPi) * std::erf(3.0 * std::sqrt(2.0));
            },
            v_);
    }

    double peak() const {
        return std::visit(
            [](const auto& p) -> double {
                using P = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<P, ConstantPulse>)
                    return p.value;
                else if constexpr (std::is_same_v<P, SinePulse>)
                    return 0.5 * kPi * p.chi0;
                else
                    return p.chi0 / std::sqrt(kPi);
            },
            v_);
    }

    std::string name() const {
        switch (v_.index()) {
            case 0: return "constant";
            case 1: return "sine";
            default: return "gaussian";
        }
    }

private:
    Variant v_;
};

// ---------------------------------------------------------------------------
// Problem description

struct HamiltonianTerm {
    Operator op;
    PulseShape coefficient;
};

struct CollapseTerm {
    Operator op;
    double rate = 0.0;
};

/// Population gate on the two highest levels of one Fock mode.
struct TailGate {
    std::size_t mode = 0;
    double tol = 1e-9;
};

struct EvolutionProblem {
    ModeLayout layout;
    std::vector<HamiltonianTerm> h_terms;
    std::vector<CollapseTerm> collapse_terms;
    double t0 = 0.0;
    double t1 = 0.0;
    std::vector<double> sample_times;
    std::vector<std::pair<std::string, Operator>> observables;
    std::vector<TailGate> tail_gates;

    void add_h(const Operator& op, PulseShape c = PulseShape()) { h_terms.push_back({op, c}); }
    void add_collapse(const Operator& op, double rate) {
        if (rate < 0.0) throw ValidityError("collapse rate must be non-negative");
        if (rate > 0.0) collapse_terms.push_back({op, rate});
    }
    void observe(const std::string& name, const Operator& op) { observables.emplace_back(name, op); }

    /// Gate every Fock mode of the layout at the given tolerance.
    void gate_all_fock(double tol = 1e-9) {
        for (std::size_t i = 0; i < layout.size(); ++i)
            if (layout[i].kind == Mode::Kind::Fock) tail_gates.push_back({i, tol});
    }

    void validate() const {
        for (const auto& h : h_terms) require_same_layout(layout, h.op.layout, "EvolutionProblem h_term");
        for (const auto& c : collapse_terms) {
            require_same_layout(layout, c.op.layout, "EvolutionProblem collapse_term");
            if (c.rate < 0.0) throw ValidityError("negative collapse rate");
        }
        for (const auto& o : observables) require_same_layout(layout, o.second.layout, "EvolutionProblem observable");
        if (!(t1 >= t0)) throw ValidityError("t_span must satisfy t0 <= t1");
        for (double s : sample_times)
            if (s < t0 - 1e-12 || s > t1 + 1e-12) throw ValidityError("sample time outside t_span");
        if (!std::is_sorted(sample_times.begin(), sample_times.end()))
            throw ValidityError("sample_times must be ordered");
    }
};

/// Uniform grid of n points on [t0, t1].
inline std::vector<double> linspace(double t0, double t1, int n) {
    std::vector<double> v;
    if (n == 1) return {t1};
    for (int i = 0; i < n; ++i) v.push_back(t0 + (t1 - t0) * double(i) / double(n - 1));
    return v;
}

struct Trajectory {
    std::vector<double> sample_times;
    std::vector<QuantumState> states;
    std::map<std::string, std::vector<cplx>> observables;
    long steps_accepted = 0;
    long steps_rejected = 0;
    double max_trace_drift = 0.0;
};

struct IntegratorOptions {
    double rtol = 1e-8;
    double atol = 1e-10;
    long max_steps = 50'000'000;
    double h_max = INFINITY;
    double trace_gate = 1e-7;
    bool retain_states = false;
    enum class Norm { Rms, Max };
    Norm error_norm = Norm::Max;
};

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4)

/// Adaptive embedded Runge-Kutta 5(4) on an Eigen dense matrix state.
class DormandPrince {
public:
    using Rhs = std::function<void(double, const CMat&, CMat&)>;
    /// Called at every stop time; return value ignored.
    using StopCallback = std::function<void(double, const CMat&)>;

    explicit DormandPrince(IntegratorOptions opt = {}) : opt_(opt) {}

    long accepted() const { return accepted_; }
    long rejected() const { return rejected_; }

    /// Integrate from t0 to the last stop; `stops` must be sorted and >= t0.
    /// Breakpoints are hit exactly but not reported.
    void integrate(const Rhs& f, CMat& y, double t0, const std::vector<double>& stops,
                   const std::vector<double>& breakpoints, const StopCallback& on_stop) {
        std::vector<std::pair<double, bool>> marks;
        for (double s : stops) marks.emplace_back(s, true);
        for (double b : breakpoints)
            if (std::isfinite(b) && b > t0 && (stops.empty() || b < stops.back())) marks.emplace_back(b, false);
        std::sort(marks.begin(), marks.end());

        double t = t0;
        const int r = int(y.rows()), c = int(y.cols());
        for (auto* k : {&k1_, &k2_, &k3_, &k4_, &k5_, &k6_, &k7_, &ytmp_, &ynew_}) k->resize(r, c);
        bool have_k1 = false;
        double h = -1.0;

        for (const auto& [target, report] : marks) {
            if (target < t - 1e-13) throw ValidityError("integrator stop times must be non-decreasing");
            while (target - t > 1e-13 * std::max(1.0, std::abs(target))) {
                if (!have_k1) {
                    f(t, y, k1_);
                    have_k1 = true;
                }
                if (h <= 0.0) h = initial_step(f, y, t, target - t);
                bool last = false;
                double hs = std::min(h, opt_.h_max);
                if (hs >= target - t) {
                    hs = target - t;
                    last = true;
                }
                const double err = step(f, y, t, hs);
                if (!std::isfinite(err)) throw StiffnessError("non-finite error estimate at t = " + std::to_string(t), t);
                if (err <= 1.0) {
                    ++accepted_;
                    t = last ? target : t + hs;
                    y.swap(ynew_);
                    k1_.swap(k7_);  // FSAL
                    const double fac = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
                    if (!last || hs * fac > h) h = hs * fac;
                } else {
                    ++rejected_;
                    h = hs * std::clamp(0.9 * std::pow(err, -0.2), 0.1, 1.0);
                }
                if (accepted_ + rejected_ > opt_.max_steps)
                    throw StiffnessError("step budget exhausted at t = " + std::to_string(t), t);
                if (h < 1e-13 * std::max(1.0, std::abs(t)))
                    throw StiffnessError("step size underflow at t = " + std::to_string(t), t);
            }
            t = target;
            if (report) on_stop(t, y);
        }
    }

private:
    double error_norm(const CMat& e, const CMat& y0, const CMat& y1) const {
        const Eigen::Index n = e.size();
        double acc = 0.0, mx = 0.0;
        const cplx* pe = e.data();
        const cplx* p0 = y0.data();
        const cplx* p1 = y1.data();
        for (Eigen::Index i = 0; i < n; ++i) {
            const double sc = opt_.atol + opt_.rtol * std::sqrt(std::max(std::norm(p0[i]), std::norm(p1[i])));
            const double r = std::norm(pe[i]) / (sc * sc);
            acc += r;
            mx = std::max(mx, r);
        }
        return std::sqrt(opt_.error_norm == IntegratorOptions::Norm::Max ? mx : acc / double(n));
    }

    double initial_step(const Rhs& f, const CMat& y, double t, double span) {
        const double d0 = y.norm() / std::sqrt(double(y.size()));
        const double d1 = k1_.norm() / std::sqrt(double(y.size()));
        double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
        h0 = std::min(h0, span);
        ytmp_ = y + h0 * k1_;
        f(t + h0, ytmp_, k2_);
        const double d2 = (k2_ - k1_).norm() / std::sqrt(double(y.size())) / h0;
        const double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                                    : std::pow(0.01 / std::max(d1, d2), 0.2);
        return std::min({100.0 * h0, h1, span});
    }

    double step(const Rhs& f, const CMat& y, double t, double h) {
        static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
        static constexpr double a21 = 1.0 / 5;
        static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
        static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
        static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                                a54 = -212.0 / 729;
        static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                                a65 = -5103.0 / 18656;
        static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                                b6 = 11.0 / 84;
        static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                                e6 = 22.0 / 525, e7 = -1.0 / 40;

        ytmp_ = y + (h * a21) * k1_;
        f(t + c2 * h, ytmp_, k2_);
        ytmp_ = y + h * (a31 * k1_ + a32 * k2_);
        f(t + c3 * h, ytmp_, k3_);
        ytmp_ = y + h * (a41 * k1_ + a42 * k2_ + a43 * k3_);
        f(t + c4 * h, ytmp_, k4_);
        ytmp_ = y + h * (a51 * k1_ + a52 * k2_ + a53 * k3_ + a54 * k4_);
        f(t + c5 * h, ytmp_, k5_);
        ytmp_ = y + h * (a61 * k1_ + a62 * k2_ + a63 * k3_ + a64 * k4_ + a65 * k5_);
        f(t + h, ytmp_, k6_);
        ynew_ = y + h * (b1 * k1_ + b3 * k3_ + b4 * k4_ + b5 * k5_ + b6 * k6_);
        f(t + h, ynew_, k7_);
        ytmp_ = h * (e1 * k1_ + e3 * k3_ + e4 * k4_ + e5 * k5_ + e6 * k6_ + e7 * k7_);
        return error_norm(ytmp_, y, ynew_);
    }

    IntegratorOptions opt_;
    CMat k1_, k2_, k3_, k4_, k5_, k6_, k7_, ytmp_, ynew_;
    long accepted_ = 0, rejected_ = 0;
};

// ---------------------------------------------------------------------------
// Lindblad right-hand sides

namespace detail {

/// out (+)= scale * S * X, column by column; avoids the strided access of Eigen's row-major product.
template <class XT, class OutT>
inline void spmm(const SpMat& S, const XT& X, OutT& out, cplx scale, bool accumulate) {
    const int n = int(S.rows());
    const int m = int(X.cols());
    const int* outer = S.outerIndexPtr();
    const int* inner = S.innerIndexPtr();
    const cplx* val = S.valuePtr();
    const double sr = scale.real(), si = scale.imag();
    for (int j = 0; j < m; ++j) {
        const cplx* x = X.data() + Eigen::Index(j) * X.outerStride();
        cplx* o = out.data() + Eigen::Index(j) * out.outerStride();
        for (int i = 0; i < n; ++i) {
            double re = 0.0, im = 0.0;
            for (int q = outer[i]; q < outer[i + 1]; ++q) {
                const double ar = val[q].real(), ai = val[q].imag();
                const double xr = x[inner[q]].real(), xi = x[inner[q]].imag();
                re += ar * xr - ai * xi;
                im += ar * xi + ai * xr;
            }
            const double vr = sr * re - si * im, vi = sr * im + si * re;
            if (accumulate)
                o[i] += cplx(vr, vi);
            else
                o[i] = cplx(vr, vi);
        }
    }
}

struct TimeTerm {
    SpMat op;
    PulseShape c;
};

/// Split a problem into a static effective Hamiltonian and pulsed terms.
struct Generator {
    SpMat heff_static;  // H_static - (i/2) sum rate L^dag L
    std::vector<TimeTerm> pulsed;
    std::vector<std::pair<SpMat, double>> jumps;
    std::vector<double> breakpoints;
    int dim = 0;

    explicit Generator(const EvolutionProblem& p) {
        dim = p.layout.total_dim();
        heff_static = SpMat(dim, dim);
        for (const auto& h : p.h_terms) {
            if (h.coefficient.is_constant())
                heff_static += h.coefficient(0.0) * h.op.data;
            else {
                pulsed.push_back({h.op.data, h.coefficient});
                auto w = h.coefficient.window();
                breakpoints.push_back(w.first);
                breakpoints.push_back(w.second);
            }
        }
        for (const auto& c : p.collapse_terms) {
            heff_static -= (0.5 * I1 * c.rate) * SpMat(c.op.data.adjoint() * c.op.data);
            jumps.emplace_back(c.op.data, c.rate);
        }
        heff_static.makeCompressed();
    }

    /// out = scale * H_eff(t) * x
    template <class XT, class OutT>
    void apply(double t, const XT& x, OutT& out, cplx scale = 1.0) const {
        spmm(heff_static, x, out, scale, false);
        for (const auto& term : pulsed) {
            const double v = term.c(t);
            if (v != 0.0) spmm(term.op, x, out, scale * v, true);
        }
    }
};

}  // namespace detail

/// Population of the two highest levels of `mode`, summed over all other modes.
inline std::vector<int> tail_indices(const ModeLayout& layout, std::size_t mode) {
    const auto dims = layout.dims();
    int stride = 1;
    for (std::size_t i = mode + 1; i < dims.size(); ++i) stride *= dims[i];
    std::vector<int> idx;
    for (int i = 0; i < layout.total_dim(); ++i)
        if ((i / stride) % dims[mode] >= dims[mode] - 2) idx.push_back(i);
    return idx;
}

/// Integrate the Schrodinger or Lindblad equation of `problem` from `initial`.
inline Trajectory evolve(const EvolutionProblem& problem, const QuantumState& initial, IntegratorOptions opt = {}) {
    problem.validate();
    require_same_layout(problem.layout, initial.layout, "evolve");
    const detail::Generator gen(problem);
    const bool density = !problem.collapse_terms.empty() || !initial.is_pure();
    const int n = gen.dim;

    CMat y = density ? initial.density_matrix() : CMat(initial.psi);
    CMat work(n, density ? n : 1), a(n, n), b(n, n), herm(n, n);

    DormandPrince::Rhs rhs;
    if (density) {
        rhs = [&](double t, const CMat& rho, CMat& d) {
            // The shortcuts below need a Hermitian argument; with both L and L^dag among the jumps
            // the rounding-level anti-Hermitian part would otherwise grow exponentially.
            herm = 0.5 * (rho + rho.adjoint());
            gen.apply(t, herm, work, -I1);
            d = work + work.adjoint();
            // L rho L^dag = L (L rho)^dag
            for (const auto& [L, rate] : gen.jumps) {
                detail::spmm(L, herm, a, 1.0, false);
                b = a.adjoint();
                detail::spmm(L, b, d, rate, true);
            }
        };
    } else {
        rhs = [&](double t, const CMat& psi, CMat& d) { gen.apply(t, psi, d, -I1); };
    }

    std::vector<std::vector<int>> gates;
    for (const auto& g : problem.tail_gates) gates.push_back(tail_indices(problem.layout, g.mode));

    Trajectory traj;
    traj.sample_times = problem.sample_times;
    for (const auto& o : problem.observables) traj.observables[o.first] = {};

    auto on_stop = [&](double t, const CMat& st) {
        const double tr = density ? st.trace().real() : st.squaredNorm();
        const double drift = std::abs(tr - 1.0);
        traj.max_trace_drift = std::max(traj.max_trace_drift, drift);
        if (drift > opt.trace_gate)
            throw AccuracyError("trace drift " + std::to_string(drift) + " at t = " + std::to_string(t), drift);
        for (std::size_t g = 0; g < gates.size(); ++g) {
            double pop = 0.0;
            for (int i : gates[g]) pop += density ? st(i, i).real() : std::norm(st(i, 0));
            if (pop > problem.tail_gates[g].tol)
                throw TruncationError("tail population " + std::to_string(pop) + " in mode " +
                                          std::to_string(problem.tail_gates[g].mode) + " at t = " + std::to_string(t),
                                      pop);
        }
        QuantumState s = density ? QuantumState::density(problem.layout, st)
                                 : QuantumState::pure(problem.layout, CVec(st.col(0)));
        for (const auto& o : problem.observables) traj.observables[o.first].push_back(expectation(o.second, s));
        if (opt.retain_states) traj.states.push_back(std::move(s));
    };

    DormandPrince dp(opt);
    std::vector<double> stops = problem.sample_times;
    if (stops.empty() || stops.back() < problem.t1) stops.push_back(problem.t1);
    // The final stop is reported only if it is a requested sample.
    if (problem.sample_times.empty() || problem.sample_times.back() < problem.t1) {
        std::vector<double> bps = gen.breakpoints;
        bps.push_back(problem.t1);
        dp.integrate(rhs, y, problem.t0, problem.sample_times, bps, on_stop);
        if (!problem.sample_times.empty() || problem.t1 > problem.t0) {
            // advance the remaining stretch after the last sample
            double tlast = problem.sample_times.empty() ? problem.t0 : problem.sample_times.back();
            if (problem.t1 > tlast) {
                DormandPrince tail(opt);
                tail.integrate(rhs, y, tlast, {problem.t1}, gen.breakpoints, [](double, const CMat&) {});
                traj.steps_accepted += tail.accepted();
                traj.steps_rejected += tail.rejected();
            }
        }
    } else {
        dp.integrate(rhs, y, problem.t0, problem.sample_times, gen.breakpoints, on_stop);
    }
    traj.steps_accepted += dp.accepted();
    traj.steps_rejected += dp.rejected();
    return traj;
}

// ---------------------------------------------------------------------------
// Block-conditional evolution

/// A Hamiltonian term whose strength depends on a conserved control label j:
/// H_j(t) = H_base(t) + sum_k c_k(t) * lambda[j][k] * V_k.
struct ConditionalTerm {
    Operator op;
    PulseShape coefficient;
};

struct ConditionalProblem {
    EvolutionProblem base;  ///< layout, shared H terms, collapses, times, gates
    std::vector<ConditionalTerm> terms;
    std::vector<std::vector<double>> lambda;  ///< lambda[branch][term]
    std::vector<double> weights;              ///< branch populations used by the tail gates; empty = all 1
};

/// Result blocks rho_jk (j <= k) or branch vectors psi_j at each sample time.
struct ConditionalTrajectory {
    std::vector<double> sample_times;
    bool density = false;
    std::vector<std::pair<int, int>> pairs;   ///< block index -> (j, k)
    std::vector<std::vector<CMat>> blocks;    ///< [sample][block] (density) or [sample][branch] column vectors
    long steps_accepted = 0;

    /// rho_jk at a sample; for k < j returns the adjoint of rho_kj.
    CMat block(std::size_t sample, int j, int k) const {
        if (!density) {
            const CMat& a = blocks[sample][j];
            const CMat& b = blocks[sample][k];
            return a * b.adjoint();
        }
        const bool swap = j > k;
        const int lo = swap ? k : j, hi = swap ? j : k;
        for (std::size_t b = 0; b < pairs.size(); ++b)
            if (pairs[b].first == lo && pairs[b].second == hi)
                return swap ? CMat(blocks[sample][b].adjoint()) : blocks[sample][b];
        throw DimensionError("block not found");
    }
};

/// Evolve every block rho_jk of a state sum_jk c_j c_k^* |j><k| (x) rho_jk where all
/// branches start from the same `initial`. Exact when H is block diagonal in the control label
/// and the collapse operators act only on the evolved factor.
inline ConditionalTrajectory evolve_conditional(const ConditionalProblem& cp, const QuantumState& initial,
                                                IntegratorOptions opt = {}) {
    const EvolutionProblem& p = cp.base;
    p.validate();
    require_same_layout(p.layout, initial.layout, "evolve_conditional");
    for (const auto& t : cp.terms) require_same_layout(p.layout, t.op.layout, "evolve_conditional term");
    const int nbr = int(cp.lambda.size());
    for (const auto& l : cp.lambda)
        if (l.size() != cp.terms.size()) throw DimensionError("lambda table width must match number of terms");
    if (!cp.weights.empty() && int(cp.weights.size()) != nbr) throw DimensionError("one weight per branch");

    const detail::Generator gen(p);
    std::vector<double> bps = gen.breakpoints;
    for (const auto& t : cp.terms) {
        auto w = t.coefficient.window();
        bps.push_back(w.first);
        bps.push_back(w.second);
    }
    const int n = gen.dim;
    const bool density = !p.collapse_terms.empty() || !initial.is_pure();

    ConditionalTrajectory out;
    out.sample_times = p.sample_times;
    out.density = density;

    std::vector<std::vector<int>> gates;
    for (const auto& g : p.tail_gates) gates.push_back(tail_indices(p.layout, g.mode));

    CMat y;
    DormandPrince::Rhs rhs;
    const std::size_t nt = cp.terms.size();
    std::vector<double> cval(nt);
    std::vector<CMat> z(nt);
    CMat x, w, a, radj, la;

    if (!density) {
        y.resize(n, nbr);
        for (int j = 0; j < nbr; ++j) y.col(j) = initial.psi;
        rhs = [&](double t, const CMat& psi, CMat& d) {
            gen.apply(t, psi, d);
            for (std::size_t k = 0; k < nt; ++k) {
                const double c = cp.terms[k].coefficient(t);
                if (c == 0.0) continue;
                z[k].noalias() = cp.terms[k].op.data * psi;
                for (int j = 0; j < nbr; ++j) d.col(j) += (c * cp.lambda[j][k]) * z[k].col(j);
            }
            d *= -I1;
        };
    } else {
        for (int j = 0; j < nbr; ++j)
            for (int k = j; k < nbr; ++k) out.pairs.emplace_back(j, k);
        const int nb = int(out.pairs.size());
        const CMat rho0 = initial.density_matrix();
        y.resize(n, n * nb);
        for (int b = 0; b < nb; ++b) y.middleCols(b * n, n) = rho0;
        x.resize(n, n);
        w.resize(n, n);
        a.resize(n, n);
        radj.resize(n, n);
        la.resize(n, n);
        rhs = [&, nb](double t, const CMat& r, CMat& d) {
            for (std::size_t k = 0; k < nt; ++k) cval[k] = cp.terms[k].coefficient(t);
            for (int b = 0; b < nb; ++b) {
                const auto [j, k] = out.pairs[b];
                const auto rb = r.middleCols(b * n, n);
                auto db = d.middleCols(b * n, n);
                // left: H_j rho
                gen.apply(t, rb, x);
                for (std::size_t q = 0; q < nt; ++q)
                    if (cval[q] != 0.0) detail::spmm(cp.terms[q].op.data, rb, x, cval[q] * cp.lambda[j][q], true);
                // right: rho H_k^dag = (H_k rho^dag)^dag
                radj = rb.adjoint();
                gen.apply(t, radj, w);
                for (std::size_t q = 0; q < nt; ++q)
                    if (cval[q] != 0.0) detail::spmm(cp.terms[q].op.data, radj, w, cval[q] * cp.lambda[k][q], true);
                db = -I1 * x + I1 * w.adjoint();
                // L rho L^dag = (L (L rho^dag)^dag)
                for (const auto& [L, rate] : gen.jumps) {
                    detail::spmm(L, radj, a, 1.0, false);
                    la = a.adjoint();
                    detail::spmm(L, la, db, rate, true);
                }
            }
        };
    }

    auto on_stop = [&](double t, const CMat& st) {
        std::vector<CMat> snap;
        if (!density) {
            for (int j = 0; j < nbr; ++j) {
                const double drift = std::abs(st.col(j).squaredNorm() - 1.0);
                if (drift > opt.trace_gate) throw AccuracyError("branch norm drift at t = " + std::to_string(t), drift);
                snap.push_back(st.col(j));
            }
        } else {
            for (std::size_t b = 0; b < out.pairs.size(); ++b) {
                CMat blk = st.middleCols(b * n, n);
                if (out.pairs[b].first == out.pairs[b].second) {
                    const double drift = std::abs(blk.trace().real() - 1.0);
                    if (drift > opt.trace_gate)
                        throw AccuracyError("block trace drift at t = " + std::to_string(t), drift);
                }
                snap.push_back(std::move(blk));
            }
        }
        for (std::size_t g = 0; g < gates.size(); ++g) {
            double pop = 0.0;
            for (std::size_t s = 0; s < snap.size(); ++s) {
                if (density && out.pairs[s].first != out.pairs[s].second) continue;
                const int j = density ? out.pairs[s].first : int(s);
                const double wj = cp.weights.empty() ? 1.0 : cp.weights[j];
                for (int i : gates[g]) pop += wj * (density ? snap[s](i, i).real() : std::norm(snap[s](i, 0)));
            }
            if (cp.weights.empty()) pop /= double(nbr);
            if (pop > p.tail_gates[g].tol)
                throw TruncationError("tail population " + std::to_string(pop) + " at t = " + std::to_string(t), pop);
        }
        out.blocks.push_back(std::move(snap));
    };

    DormandPrince dp(opt);
    std::vector<double> stops = p.sample_times;
    if (stops.empty()) throw ValidityError("evolve_conditional needs at least one sample time");
    dp.integrate(rhs, y, p.t0, stops, bps, on_stop);
    out.steps_accepted = dp.accepted();
    return out;
}

// ---------------------------------------------------------------------------
// Sector-block evolution

/// Density-matrix evolution for problems whose Hamiltonian is block diagonal in a labelling of
/// basis states (for example a conserved parity) and whose jumps map each sector into a single
/// sector. Only the diagonal blocks are stored, so a state with no inter-sector coherence stays exact.
struct SectorTrajectory {
    std::vector<double> sample_times;
    std::vector<CMat> states;  ///< full density matrix per sample
    long steps_accepted = 0;
};

inline SectorTrajectory evolve_sectors(const EvolutionProblem& p, const QuantumState& initial,
                                       const std::vector<int>& sector, IntegratorOptions opt = {}) {
    p.validate();
    require_same_layout(p.layout, initial.layout, "evolve_sectors");
    const int n = p.layout.total_dim();
    if (int(sector.size()) != n) throw DimensionError("evolve_sectors: one sector label per basis state");
    if (p.sample_times.empty()) throw ValidityError("evolve_sectors needs at least one sample time");
    const int ns = *std::max_element(sector.begin(), sector.end()) + 1;
    std::vector<std::vector<int>> members(ns);
    std::vector<int> local(n);
    for (int i = 0; i < n; ++i) {
        if (sector[i] < 0) throw DimensionError("evolve_sectors: negative sector label");
        local[i] = int(members[sector[i]].size());
        members[sector[i]].push_back(i);
    }
    int width = 0, rows = 0;
    std::vector<int> offset(ns);
    for (int s = 0; s < ns; ++s) {
        offset[s] = width;
        width += int(members[s].size());
        rows = std::max(rows, int(members[s].size()));
    }

    auto sub = [&](const SpMat& m, int to, int from) {
        std::vector<Eigen::Triplet<cplx>> tr;
        for (int r = 0; r < m.outerSize(); ++r)
            for (SpMat::InnerIterator it(m, r); it; ++it)
                if (sector[it.row()] == to && sector[it.col()] == from)
                    tr.emplace_back(local[it.row()], local[it.col()], it.value());
        SpMat out(members[to].size(), members[from].size());
        out.setFromTriplets(tr.begin(), tr.end());
        out.makeCompressed();
        return out;
    };
    auto check_diagonal = [&](const SpMat& m, const char* what) {
        for (int r = 0; r < m.outerSize(); ++r)
            for (SpMat::InnerIterator it(m, r); it; ++it)
                if (sector[it.row()] != sector[it.col()] && std::abs(it.value()) > 0.0)
                    throw ValidityError(std::string("evolve_sectors: ") + what + " couples sectors");
    };

    const detail::Generator gen(p);
    check_diagonal(gen.heff_static, "Hamiltonian");
    for (const auto& term : gen.pulsed) check_diagonal(term.op, "pulsed term");

    struct Block {
        SpMat heff;
        std::vector<std::pair<SpMat, double>> pulsed;
    };
    std::vector<Block> blocks(ns);
    for (int s = 0; s < ns; ++s) {
        blocks[s].heff = sub(gen.heff_static, s, s);
        for (const auto& term : gen.pulsed) blocks[s].pulsed.emplace_back(sub(term.op, s, s), 0.0);
    }
    struct Jump {
        int from, to;
        SpMat op;
        double rate;
    };
    std::vector<Jump> jumps;
    for (const auto& [L, rate] : gen.jumps) {
        std::vector<int> target(ns, -1);
        for (int r = 0; r < L.outerSize(); ++r)
            for (SpMat::InnerIterator it(L, r); it; ++it) {
                if (it.value() == 0.0) continue;
                int& tg = target[sector[it.col()]];
                if (tg >= 0 && tg != sector[it.row()])
                    throw ValidityError("evolve_sectors: a jump splits a sector");
                tg = sector[it.row()];
            }
        for (int s = 0; s < ns; ++s)
            if (target[s] >= 0) jumps.push_back({s, target[s], sub(L, target[s], s), rate});
    }

    const CMat rho0 = initial.density_matrix();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (sector[i] != sector[j] && std::abs(rho0(i, j)) > 1e-12)
                throw ValidityError("evolve_sectors: initial state has inter-sector coherence");

    CMat y = CMat::Zero(rows, width);
    for (int s = 0; s < ns; ++s)
        for (std::size_t a = 0; a < members[s].size(); ++a)
            for (std::size_t b = 0; b < members[s].size(); ++b) y(a, offset[s] + b) = rho0(members[s][a], members[s][b]);

    std::vector<CMat> work(ns), herm(ns), tmp2(ns);
    for (int s = 0; s < ns; ++s) {
        const int m = int(members[s].size());
        work[s].resize(m, m);
        herm[s].resize(m, m);
    }
    for (const auto& jmp : jumps) tmp2[jmp.to].resize(members[jmp.to].size(), members[jmp.from].size());

    auto rhs = [&](double t, const CMat& r, CMat& d) {
        d.setZero();
        for (int s = 0; s < ns; ++s) {
            const int m = int(members[s].size());
            if (m == 0) continue;
            const auto rb = r.block(0, offset[s], m, m);
            herm[s] = 0.5 * (rb + rb.adjoint());
            const CMat& rs = herm[s];
            detail::spmm(blocks[s].heff, rs, work[s], -I1, false);
            for (std::size_t q = 0; q < gen.pulsed.size(); ++q) {
                const double v = gen.pulsed[q].c(t);
                if (v != 0.0) detail::spmm(blocks[s].pulsed[q].first, rs, work[s], -I1 * v, true);
            }
            d.block(0, offset[s], m, m) += work[s] + work[s].adjoint();
        }
        for (const auto& jmp : jumps) {
            const int mt = int(members[jmp.to].size());
            const CMat& rs = herm[jmp.from];
            CMat& a = tmp2[jmp.to];
            detail::spmm(jmp.op, rs, a, 1.0, false);  // L rho (mt x mf)
            CMat b = a.adjoint();                      // rho L^dag (mf x mt)
            auto db = d.block(0, offset[jmp.to], mt, mt);
            detail::spmm(jmp.op, b, db, jmp.rate, true);
        }
    };

    std::vector<std::vector<int>> gates;
    for (const auto& g : p.tail_gates) gates.push_back(tail_indices(p.layout, g.mode));

    SectorTrajectory out;
    out.sample_times = p.sample_times;
    auto on_stop = [&](double t, const CMat& st) {
        CMat full = CMat::Zero(n, n);
        for (int s = 0; s < ns; ++s)
            for (std::size_t a = 0; a < members[s].size(); ++a)
                for (std::size_t b = 0; b < members[s].size(); ++b)
                    full(members[s][a], members[s][b]) = st(a, offset[s] + b);
        const double drift = std::abs(full.trace().real() - 1.0);
        if (drift > opt.trace_gate)
            throw AccuracyError("trace drift " + std::to_string(drift) + " at t = " + std::to_string(t), drift);
        for (std::size_t g = 0; g < gates.size(); ++g) {
            double pop = 0.0;
            for (int i : gates[g]) pop += full(i, i).real();
            if (pop > p.tail_gates[g].tol)
                throw TruncationError("tail population " + std::to_string(pop) + " at t = " + std::to_string(t), pop);
        }
        out.states.push_back(std::move(full));
    };
    DormandPrince dp(opt);
    dp.integrate(rhs, y, p.t0, p.sample_times, gen.breakpoints, on_stop);
    out.steps_accepted = dp.accepted();
    return out;
}

// ---------------------------------------------------------------------------
// Conditional-unitary fidelity

/// |Tr(P U^dag U_target P)| / Tr(P) with U_target = local * ((1+S)/2 + (1-S)/2 * flip).
inline double conditional_unitary_check(const Operator& U, const Operator& stabilizer, const Operator& flip,
                                        const Operator& code_space_projector,
                                        const std::optional<Operator>& local_rotation = std::nullopt) {
    require_same_layout(U.layout, stabilizer.layout, "conditional_unitary_check");
    require_same_layout(U.layout, flip.layout, "conditional_unitary_check");
    require_same_layout(U.layout, code_space_projector.layout, "conditional_unitary_check");
    const int n = U.dim();
    const CMat u = U.dense();
    const CMat pr = code_space_projector.dense();
    const CMat id = CMat::Identity(n, n);
    const double defect = (pr * (u.adjoint() * u - id) * pr).cwiseAbs().maxCoeff();
    if (defect > 1e-8) throw ValidityError("conditional_unitary_check: U is not unitary on the support");
    const CMat s = stabilizer.dense();
    CMat target = 0.5 * (id + s) + 0.5 * (id - s) * flip.dense();
    if (local_rotation) target = local_rotation->dense() * target;
    const double tr_p = pr.trace().real();
    return std::abs((pr * u.adjoint() * target * pr).trace()) / tr_p;
}

}  // namespace catsyn
