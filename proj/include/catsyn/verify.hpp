#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "protocols.hpp"

namespace catsyn::verify {

struct Check {
    std::string label;
    double measured = 0.0;
    std::string expected;
    bool pass = false;
};

struct CriterionReport {
    int id = 0;
    std::string title;
    std::vector<Check> checks;
    std::string error;
    double seconds = 0.0;

    bool pass() const {
        if (!error.empty() || checks.empty()) return false;
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }

    void abs_close(const std::string& label, double m, double target, double tol) {
        checks.push_back({label, m, fmt(target) + " +/- " + fmt(tol), std::abs(m - target) <= tol});
    }
    void rel_close(const std::string& label, double m, double target, double rel) {
        checks.push_back({label, m, fmt(target) + " +/- " + fmt(100.0 * rel) + "%",
                          std::abs(m - target) <= rel * std::abs(target)});
    }
    void in_range(const std::string& label, double m, double lo, double hi) {
        checks.push_back({label, m, "[" + fmt(lo) + ", " + fmt(hi) + "]", m >= lo && m <= hi});
    }
    void below(const std::string& label, double m, double bound) {
        checks.push_back({label, m, "< " + fmt(bound), m < bound});
    }
    void at_most(const std::string& label, double m, double bound) {
        checks.push_back({label, m, "<= " + fmt(bound), m <= bound});
    }
    void at_least(const std::string& label, double m, double bound) {
        checks.push_back({label, m, ">= " + fmt(bound), m >= bound});
    }
    void above(const std::string& label, double m, double bound) {
        checks.push_back({label, m, "> " + fmt(bound), m > bound});
    }
    void holds(const std::string& label, bool ok, double m = NAN) { checks.push_back({label, m, "true", ok}); }

    static std::string fmt(double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", v);
        return buf;
    }
};

struct Criterion {
    int id;
    std::string title;
    bool quick;
    std::function<void(CriterionReport&)> run;
};

namespace detail {

inline double dist(const CMat& a, const CMat& b) { return (a - b).cwiseAbs().maxCoeff(); }

inline void energy_gap_criterion(CriterionReport& r) {
    const double g0 = energy_gap(PccParams{1.0, 0.0, 0});
    r.abs_close("gap(beta=0) / K", g0, 2.0, 1e-10);
    const double r3 = energy_gap(PccParams::from_beta(3.0)) / (4.0 * 9.0);
    const double r1 = energy_gap(PccParams::from_beta(1.0)) / 4.0;
    r.in_range("gap(beta=3) / 36K", r3, 0.85, 1.0);
    r.holds("|1 - ratio(beta=3)| < |1 - ratio(beta=1)|", std::abs(1.0 - r3) < std::abs(1.0 - r1), r1);
}

inline void effective_me_criterion(CriterionReport& r) {
    const double kappa = 0.01;
    const std::vector<double> t = linspace(0.0, 2.0 / kappa, 41);
    const double betas[3] = {1.0, std::sqrt(2.0), 2.0};
    const double quoted[3] = {0.018, 0.0067, 5e-7};
    const double tol[3] = {0.2, 0.2, 0.5};
    const char* names[3] = {"1", "sqrt2", "2"};
    for (int i = 0; i < 3; ++i) {
        const PccParams p = PccParams::from_beta(betas[i]);
        NoiseSpec n;
        n.kappa_1 = kappa;
        const CatBasis basis = cat_basis(betas[i], p.resolved_dim());
        const FlipSeries eff = effective_flip_series(basis, n, t);
        const FlipSeries fock = fock_flip_series(p, n, t);
        const std::string b = std::string("beta=") + names[i];
        r.below(b + " max |bit-flip eff - fock|", max_abs_gap(eff.bit_flip, fock.bit_flip), 1e-3);
        r.below(b + " max |phase-flip eff - fock|", max_abs_gap(eff.phase_flip, fock.phase_flip), 1e-3);
        r.rel_close(b + " phase-flip at kappa t = 2", eff.phase_flip.back(), quoted[i], tol[i]);
    }
}

inline void toric_criterion(CriterionReport& r) {
    for (Parity par : {Parity::Odd, Parity::Even}) {
        const std::string ps = to_string(par);
        ToricConfig c;
        c.parity_init = par;
        c.kappa_1 = 0.0;
        SyndromeOutcome o = toric_z_experiment(c);
        r.at_least(ps + " kappa=0 syndrome probability", o.p_syndrome, 0.999);
        r.at_least(ps + " kappa=0 data intact", o.p_data_intact, 0.999);
        c.kappa_1 = 1.0 / 200.0;
        o = toric_z_experiment(c);
        r.abs_close(ps + " kappa=K/200 syndrome probability", o.p_syndrome, 0.93, 0.02);
        r.at_least(ps + " kappa=K/200 data intact", o.p_data_intact, 0.999);
        c.kappa_1 = 1.0 / 10.0;
        o = toric_z_experiment(c);
        r.abs_close(ps + " kappa=K/10 syndrome probability", o.p_syndrome, 0.52, 0.03);
        r.at_least(ps + " kappa=K/10 data intact", o.p_data_intact, 0.999);
    }
}

inline void majority_criterion(CriterionReport& r) {
    r.abs_close("majority_vote(0.93, 5)", majority_vote(0.93, 5), 0.9969, 0.0005);
}

inline void cat_parity_criterion(CriterionReport& r) {
    for (Parity par : {Parity::Odd, Parity::Even}) {
        const std::string ps = to_string(par);
        CatCodeConfig c;
        c.parity_init = par;
        SyndromeOutcome o = cat_parity_experiment(c);
        r.at_least(ps + " kappa=0 syndrome probability", o.p_syndrome, 0.999);
        r.at_least(ps + " kappa=0 storage intact", o.p_data_intact, 0.999);
        c.kappa_1 = 1.0 / 200.0;
        o = cat_parity_experiment(c);
        r.abs_close(ps + " kappa=K/200 syndrome probability", o.p_syndrome, 0.90, 0.02);
        r.at_least(ps + " kappa=K/200 storage intact", o.p_data_intact, 0.999);
    }
}

inline void phase_diffusion_criterion(CriterionReport& r) {
    const std::vector<double> small = {0.005, 0.01, 0.02};
    const std::vector<double> grid = {0.005, 0.01, 0.02, 0.03};
    struct Case {
        DiffusionProtocol proto;
        const char* name;
        double threshold_ratio;
    };
    for (const Case& c : {Case{DiffusionProtocol::Toric, "toric", 0.04}, Case{DiffusionProtocol::CatParity, "cat", 0.018}}) {
        const auto rep = phase_diffusion_experiment(c.proto, "gaussian", grid);
        std::vector<double> x, e;
        for (const auto& p : rep) {
            r.in_range(std::string(c.name) + " theory/numeric at chi'/Kb^2=" + CriterionReport::fmt(p.chi_ratio),
                       p.E_theory / p.E_numeric, 0.5, 2.0);
            for (double s : small)
                if (p.chi_ratio == s) {
                    x.push_back(p.chi_peak);
                    e.push_back(p.E_numeric);
                }
        }
        r.abs_close(std::string(c.name) + " log-log slope of E vs chi'", loglog_slope(x, e), 2.0, 0.1);
        const auto at = phase_diffusion_experiment(c.proto, "gaussian", {c.threshold_ratio});
        r.below(std::string(c.name) + " E at chi'/Kb^2=" + CriterionReport::fmt(c.threshold_ratio),
                at.front().E_numeric, 1e-4);
    }
}

inline void gkp_criterion(CriterionReport& r) {
    const HolevoReport h = holevo_variance(gkp_state(1.4, 120));
    r.abs_close("gkp_state(1.4) V_q", h.V_q, 1.25, 0.05);
    r.abs_close("gkp_state(1.4) V_p", h.V_p, 0.48, 0.05);

    GkpConfig base;
    const GkpRoundReport k0 = gkp_ape_round(base);
    r.below("kappa=0 V'_p - V0_p", k0.dV_p(), 0.0);
    r.below("kappa=0 |V'_q - V0_q|", std::abs(k0.dV_q()), 1e-3);

    const std::vector<double> betas = {1.0, 1.5, 2.0, 2.5};
    const auto sweep = gkp_beta_sweep(base, betas);
    bool shrinking = true;
    for (std::size_t i = 1; i < sweep.size(); ++i) shrinking = shrinking && sweep[i].difference() < sweep[i - 1].difference();
    for (const auto& s : sweep)
        r.checks.push_back({"beta=" + CriterionReport::fmt(s.beta) + " |dV'_p(pcc) - dV'_p(ideal)|", s.difference(),
                            "(reported)", true});
    r.holds("beta sweep difference strictly decreasing", shrinking);

    GkpConfig lossy = base;
    lossy.kappa_1 = 1.0 / base.T();
    const GkpRoundReport k1 = gkp_ape_round(lossy);
    r.below("kappa T=1 V_m,q - V0_q", k1.v_m.V_q - k1.v0.V_q, 1e-4);
    r.below("kappa T=1 V_m,p - V0_p", k1.v_m.V_p - k1.v0.V_p, 1e-4);

    IdealQubitConfig iq;
    iq.gamma = 1.0 / iq.T_ideal();
    const GkpRoundReport q = gkp_ideal_qubit_round(iq);
    r.abs_close("ideal qubit gamma T=1 V_m,q - V0_q", q.v_m.V_q - q.v0.V_q, 9.82, 0.5);
    r.below("ideal qubit gamma T=1 |V_m,p - V0_p|", std::abs(q.v_m.V_p - q.v0.V_p), 1e-2);
}

inline void two_photon_criterion(CriterionReport& r) {
    const PccParams p = PccParams::from_beta(1.0);
    BathCavitySpec bath;
    bath.g = 0.05;
    bath.kappa_bc = 8.0;
    bath.n_bc = 0.1;
    const std::vector<double> t = linspace(0.0, 400.0, 81);
    const auto with = two_photon_autocorrect_experiment(p, bath, 0.05, CatInit::CatPlus, t);
    const auto without = two_photon_autocorrect_experiment(p, bath, 0.0, CatInit::CatPlus, t);
    const auto& lw = with.series.at("leakage");
    const auto& l0 = without.series.at("leakage");
    r.in_range("leakage with kappa_2ph=0.05K at t=400/K", lw.back(), 1.5e-4, 6e-4);
    bool below = true;
    for (std::size_t i = 0; i < t.size(); ++i)
        if (t[i] >= 20.0) below = below && lw[i] < l0[i];
    r.holds("leakage below the kappa_2ph=0 curve for t >= 20/K", below, l0.back());
    const GainTwoPhotonDecomposition d = gain_then_two_photon(2.0);
    r.below("decomposition residual", d.residual, 1e-10);
    r.abs_close("out-of-span fraction vs 1/(b + 2/b^2)", d.fraction(), 1.0 / (2.0 + 2.0 / 4.0), 1e-10);
    r.below("out-of-span fraction vs 1/b", d.fraction(), 0.5);
}

inline void dephasing_criterion(CriterionReport& r) {
    const double kphi = 0.0005;
    const std::vector<double> t = {0.0, 1.0 / kphi};
    NoiseSpec n;
    n.kappa_phi = kphi;
    double prev = INFINITY;
    bool monotone = true;
    for (double b : {0.0, 1.0, std::sqrt(2.0)}) {
        const FlipSeries fs = effective_flip_series(cat_basis(b), n, t);
        const double v = fs.phase_flip.back();
        if (b == std::sqrt(2.0)) r.rel_close("beta=sqrt2 phase-flip at t=1/kappa_phi", v, 0.0125, 0.2);
        monotone = monotone && v < prev;
        prev = v;
    }
    r.holds("phase-flip strictly decreasing over beta = 0, 1, sqrt2", monotone);
}

inline void q_switch_criterion(CriterionReport& r) {
    ReadoutConfig c;
    const QSwitchReport b2 = q_switch_experiment(c, CatLabel::Plus);
    r.at_most("beta=2 max deviation from the ideal response", b2.max_deviation, 0.05);
    r.abs_close("beta=2 steady |<a_r>| (normalized)", b2.steady_amplitude, 1.0, 0.02);
    c.pcc = PccParams::from_beta(1.0);
    const QSwitchReport b1 = q_switch_experiment(c, CatLabel::Plus);
    r.above("beta=1 max deviation minus beta=2", b1.max_deviation - b2.max_deviation, 0.0);
}

inline void property_criterion(CriterionReport& r) {
    // ladder operators
    for (int d : {2, 7, 30}) {
        const Operator a = annihilation(d);
        r.holds("creation == adjoint(annihilation), dim " + std::to_string(d),
                dist(creation(d).dense(), a.dense().adjoint()) == 0.0);
        const CMat comm = (a * creation(d) - creation(d) * a).dense();
        r.below("[a, a^dag] - 1 on levels 0..dim-2, dim " + std::to_string(d),
                dist(comm.topLeftCorner(d - 1, d - 1), CMat::Identity(d - 1, d - 1)), 1e-12);
    }
    // tensor / partial trace
    const Operator x = sigma_x(), y = sigma_y(), a3 = annihilation(3);
    const Operator l = tensor({tensor({x, y}), a3}), rr = tensor({x, tensor({y, a3})});
    r.holds("tensor associativity (exact)", dist(l.dense(), rr.dense()) == 0.0);
    CMat ra(2, 2), rb = CMat::Zero(3, 3);
    ra << 0.7, cplx(0.1, 0.2), cplx(0.1, -0.2), 0.3;
    rb(0, 0) = 0.5;
    rb(1, 1) = 0.3;
    rb(2, 2) = 0.2;
    rb(0, 2) = rb(2, 0) = 0.1;
    const QuantumState prod = tensor({QuantumState::density(ModeLayout::qubit(), ra),
                                      QuantumState::density(ModeLayout::fock(3), rb)});
    r.below("partial_trace(rho_A (x) rho_B) - rho_A", dist(partial_trace(prod, {0}).rho, ra), 1e-12);
    // cat basis
    for (double b : {0.5, 1.0, 2.0}) {
        const CatBasis cb = cat_basis(b);
        const std::string bs = "beta=" + CriterionReport::fmt(b);
        const double e = std::exp(-2.0 * b * b);
        r.below(bs + " N+ - 1/sqrt(2(1+e))", std::abs(cb.n_plus - 1.0 / std::sqrt(2.0 * (1.0 + e))), 1e-12);
        r.below(bs + " N- - 1/sqrt(2(1-e))", std::abs(cb.n_minus - 1.0 / std::sqrt(2.0 * (1.0 - e))), 1e-12);
        r.below(bs + " |<C+|C->|", std::abs(cb.cat_plus.dot(cb.cat_minus)), 1e-15);
        const CVec cpos = coherent_coefficients(cb.dim, b), cneg = coherent_coefficients(cb.dim, -b);
        r.below(bs + " <b|-b> - exp(-2 b^2)", std::abs(cpos.dot(cneg) - e), 1e-10);
        const CMat sx = cb.sigma_x.dense(), sy = cb.sigma_y.dense(), sz = cb.sigma_z.dense();
        r.below(bs + " {sx, sz} on the cat span", (sx * sz + sz * sx).cwiseAbs().maxCoeff(), 1e-12);
        r.below(bs + " sx^2 - identity_C", dist(sx * sx, cb.identity_C.dense()), 1e-12);
        r.below(bs + " sy - i sx sz", dist(sy, I1 * sx * sz), 1e-12);
    }
    // squeezed vacuum
    {
        const int d = 120;
        const double rs = 1.4;
        const CVec v = squeeze(d + kDisplacementPadding, rs).data * fock_vector(d + kDisplacementPadding, 0);
        const SpMat a = annihilation_matrix(d + kDisplacementPadding);
        const SpMat q = (a + SpMat(a.adjoint())) / std::sqrt(2.0);
        const cplx mq = v.dot(q * v);
        const cplx mq2 = v.dot(q * (q * v));
        r.below("squeezed vacuum q variance - exp(-2r)/2", std::abs((mq2 - mq * mq).real() - std::exp(-2.0 * rs) / 2.0),
                1e-6);
    }
    // integrator oracles
    {
        const int d = 20;
        const double kappa = 0.1;
        EvolutionProblem p;
        p.layout = ModeLayout::fock(d);
        p.add_collapse(annihilation(d), kappa);
        p.t1 = 20.0;
        p.sample_times = linspace(0.0, 20.0, 21);
        p.observe("a", annihilation(d));
        p.observe("n", number(d));
        IntegratorOptions o;
        o.retain_states = true;
        const Trajectory tr = evolve(p, coherent(d, 1.0), o);
        double err = 0.0, purity_rise = 0.0;
        for (std::size_t i = 0; i < tr.sample_times.size(); ++i) {
            err = std::max(err, std::abs(tr.observables.at("a")[i] - std::exp(-kappa * tr.sample_times[i] / 2.0)));
            if (i > 0) purity_rise = std::max(purity_rise, tr.states[i].purity() - tr.states[i - 1].purity());
        }
        r.below("coherent decay max |<a>(t) - exp(-kappa t/2)|", err, 1e-6);
        r.below("lossy evolution max trace drift", tr.max_trace_drift, 1e-7);
        r.at_most("dissipative purity increase between samples", purity_rise, 1e-7);
    }
    {
        const double omega = 0.7;
        EvolutionProblem p;
        p.layout = ModeLayout::qubit();
        p.add_h(omega * sigma_x());
        p.t1 = 10.0;
        p.sample_times = linspace(0.0, 10.0, 51);
        CVec up(2), down(2);
        up << 1, 0;
        down << 0, 1;
        p.observe("pe", Operator(ModeLayout::qubit(), CMat(down * down.adjoint())));
        IntegratorOptions o;
        o.retain_states = true;
        const Trajectory tr = evolve(p, QuantumState::pure(ModeLayout::qubit(), up), o);
        double err = 0.0, norm = 0.0;
        for (std::size_t i = 0; i < tr.sample_times.size(); ++i) {
            err = std::max(err, std::abs(tr.observables.at("pe")[i].real() -
                                         std::pow(std::sin(omega * tr.sample_times[i]), 2)));
            norm = std::max(norm, std::abs(tr.states[i].trace() - 1.0));
        }
        r.below("Rabi max |p_e(t) - sin^2(Omega t)|", err, 1e-8);
        r.below("unitary evolution norm drift", norm, 1e-8);
    }
    {
        const PccParams pp = PccParams::from_beta(2.0);
        const Operator h = pcc_hamiltonian(pp);
        const int d = h.dim();
        const Operator drive = 0.05 * (annihilation(d) + creation(d));
        EvolutionProblem fwd;
        fwd.layout = h.layout;
        fwd.add_h(h + drive);
        fwd.t1 = 5.0;
        fwd.sample_times = {5.0};
        IntegratorOptions o;
        o.retain_states = true;
        const CatBasis cb = cat_basis(2.0, d);
        const QuantumState mid = evolve(fwd, cb.state_plus(), o).states.back();
        EvolutionProblem back = fwd;
        back.h_terms.clear();
        back.add_h(-1.0 * (h + drive));
        const QuantumState end = evolve(back, mid, o).states.back();
        r.below("time reversal infidelity", 1.0 - end.overlap(cb.cat_plus), 1e-7);
    }
    // Table 1 limits at beta -> 0
    {
        const CatBasis z = cat_basis(0.0, 12);
        Eigen::Matrix2cd sm, sp, deph;
        sm << 0, 1, 0, 0;
        sp << 0, 0, 1, 0;
        deph << 0, 0, 0, 1;
        r.below("beta=0 loss jump - sigma_-", dist(effective_jump(NoiseType::Loss, z).matrix(), sm), 1e-15);
        r.below("beta=0 gain jump - sigma_+", dist(effective_jump(NoiseType::Gain, z).matrix(), sp), 1e-15);
        r.below("beta=0 dephasing jump - (I - sz)/2", dist(effective_jump(NoiseType::Dephasing, z).matrix(), deph),
                1e-15);
        const CatBasis s = cat_basis(1e-3, 12);
        r.below("beta=1e-3 loss jump - sigma_-", dist(effective_jump(NoiseType::Loss, s).matrix(), sm), 1e-5);
        r.below("beta=1e-3 dephasing jump - (I - sz)/2", dist(effective_jump(NoiseType::Dephasing, s).matrix(), deph),
                1e-5);
    }
    // conditional unitary with an intermediate ancilla flip
    {
        const ModeLayout l({Mode::qubit(), Mode::qubit()});
        const Operator s = embed(l, 0, sigma_z());
        const Operator xa = embed(l, 1, sigma_x());
        const Operator id = identity(l);
        const CMat gen = (0.5 * (id - s) * xa).dense();
        auto u = [&](double f) { return Operator(l, CMat((-I1 * (kPi / 2.0) * f * gen).exp())); };
        const Operator flip = cplx(0.0, -1.0) * xa;
        Operator proj = identity(l);
        const double f_ideal = conditional_unitary_check(u(1.0), s, flip, proj);
        r.abs_close("conditional_unitary_check(U_target)", f_ideal, 1.0, 1e-12);
        double worst = 1.0;
        for (double tau : {0.1, 0.37, 0.5, 0.81})
            worst = std::min(worst, conditional_unitary_check(u(1.0 - tau) * xa * u(tau), s, flip, proj, xa));
        r.abs_close("flip at an intermediate time, min fidelity", worst, 1.0, 1e-12);
    }
}

}  // namespace detail

inline const std::vector<Criterion>& criteria() {
    static const std::vector<Criterion> list = {
        {1, "energy gap", true, detail::energy_gap_criterion},
        {2, "effective two-level ME vs full Fock (loss)", false, detail::effective_me_criterion},
        {3, "toric Z syndrome", false, detail::toric_criterion},
        {4, "majority vote", true, detail::majority_criterion},
        {5, "cat-code parity syndrome", false, detail::cat_parity_criterion},
        {6, "phase diffusion", true, detail::phase_diffusion_criterion},
        {7, "GKP phase estimation", false, detail::gkp_criterion},
        {8, "two-photon auto-correction", false, detail::two_photon_criterion},
        {9, "dephasing channel", true, detail::dephasing_criterion},
        {10, "Q-switch readout", false, detail::q_switch_criterion},
        {11, "property suite", true, detail::property_criterion},
    };
    return list;
}

inline CriterionReport run_criterion(const Criterion& c) {
    CriterionReport r;
    r.id = c.id;
    r.title = c.title;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        c.run(r);
    } catch (const std::exception& e) {
        r.error = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

inline void print(std::ostream& os, const CriterionReport& r) {
    char head[160];
    std::snprintf(head, sizeof head, "[%s] %2d %-44s %9.2f s", r.pass() ? "PASS" : "FAIL", r.id, r.title.c_str(),
                  r.seconds);
    os << head << "\n";
    for (const auto& c : r.checks) {
        const std::string m = std::isnan(c.measured) ? "-" : CriterionReport::fmt(c.measured);
        char line[320];
        std::snprintf(line, sizeof line, "       %s %-58s measured %-14s expected %s", c.pass ? "ok  " : "FAIL",
                      c.label.c_str(), m.c_str(), c.expected.c_str());
        os << line << "\n";
    }
    if (!r.error.empty()) os << "       error: " << r.error << "\n";
    os.flush();
}

/// Runs the suite ("quick" or "full"), optionally restricted to `only`; prints as it goes.
inline std::vector<CriterionReport> run_suite(const std::string& suite, std::ostream& os,
                                              const std::set<int>& only = {}) {
    if (suite != "quick" && suite != "full") throw ConfigError("suite must be quick or full, got '" + suite + "'");
    std::vector<CriterionReport> out;
    for (const auto& c : criteria()) {
        if (!only.empty() && !only.count(c.id)) continue;
        if (only.empty() && suite == "quick" && !c.quick) continue;
        out.push_back(run_criterion(c));
        print(os, out.back());
    }
    int passed = 0;
    double total = 0.0;
    for (const auto& r : out) {
        passed += r.pass();
        total += r.seconds;
    }
    os << passed << "/" << out.size() << " criteria passed (" << CriterionReport::fmt(total) << " s)\n";
    return out;
}

}  // namespace catsyn::verify
