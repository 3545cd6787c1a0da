#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dynamics.hpp"
#include "hilbert.hpp"
#include "result.hpp"

namespace catsyn {

struct PccParams {
    double K = 1.0;
    double P = 4.0;
    int dim = 0;  ///< 0 selects default_pcc_dim(beta)

    static PccParams from_beta(double beta, double K = 1.0, int dim = 0) { return {K, K * beta * beta, dim}; }

    double beta() const { return std::sqrt(P / K); }
    int resolved_dim() const { return dim > 0 ? dim : default_pcc_dim(beta()); }
    void validate() const {
        if (!(K > 0.0)) throw ValidityError("PccParams: K must be positive");
        if (P < 0.0) throw ValidityError("PccParams: P must be non-negative");
        if (dim != 0 && dim < 2) throw DimensionError("PccParams: dim must be >= 2");
    }
};

struct NoiseSpec {
    double kappa_1 = 0.0;
    double n_th = 0.0;
    double kappa_2ph = 0.0;
    double kappa_phi = 0.0;

    void validate() const {
        if (kappa_1 < 0 || n_th < 0 || kappa_2ph < 0 || kappa_phi < 0)
            throw ValidityError("NoiseSpec: rates must be non-negative");
    }
};

struct BathCavitySpec {
    double g = 0.05;
    double kappa_bc = 2.0;
    double n_bc = 0.0;
    int dim_bc = 8;

    bool adiabatic_warning() const { return g >= kappa_bc / 5.0; }
};

inline SpMat pcc_hamiltonian_matrix(int dim, double K, double P) {
    const SpMat a = annihilation_matrix(dim);
    const SpMat ad = a.adjoint();
    const SpMat a2 = a * a;
    const SpMat ad2 = ad * ad;
    SpMat h = -K * SpMat(ad2 * a2) + P * SpMat(ad2 + a2);
    h.makeCompressed();
    return h;
}

/// -K a^dag^2 a^2 + P (a^dag^2 + a^2).
inline Operator pcc_hamiltonian(const PccParams& params) {
    params.validate();
    const int d = params.resolved_dim();
    return Operator::hermitian(ModeLayout::fock(d), pcc_hamiltonian_matrix(d, params.K, params.P));
}

namespace detail {
inline double gap_at_dim(const PccParams& p, int dim) {
    const CMat h = CMat(pcc_hamiltonian_matrix(dim, p.K, p.P));
    Eigen::SelfAdjointEigenSolver<CMat> es(h, Eigen::EigenvaluesOnly);
    std::vector<double> e(es.eigenvalues().data(), es.eigenvalues().data() + dim);
    std::sort(e.begin(), e.end(), std::greater<>());
    return e[1] - e[2];
}
}  // namespace detail

/// Spacing between the top (cat) pair and the next level of H_pcc.
inline double energy_gap(const PccParams& params) {
    params.validate();
    const int d = params.resolved_dim();
    if (d < 3) throw DimensionError("energy_gap: dim must be >= 3");
    const double g = detail::gap_at_dim(params, d);
    const double g5 = detail::gap_at_dim(params, d + 5);
    const double rel = std::abs(g5 - g) / std::abs(g5);
    if (rel >= 1e-3)
        throw TruncationError("energy_gap: changes by " + std::to_string(rel) + " when dim grows by 5", rel);
    return g;
}

/// (a_C, a_dag_C): the annihilation/creation operators restricted to the cat span.
inline std::pair<Operator, Operator> projected_ops(const CatBasis& basis) {
    Eigen::Matrix2cd a;
    if (basis.beta == 0.0) {
        a << 0, 1, 0, 0;
    } else {
        const double b = basis.beta, p = basis.p;
        a << 0, b / p, b * p, 0;
    }
    return {basis.embed(a), basis.embed(a.adjoint())};
}

enum class NoiseType { Loss, Gain, Dephasing, TwoPhotonLoss };

inline std::string to_string(NoiseType t) {
    switch (t) {
        case NoiseType::Loss: return "loss";
        case NoiseType::Gain: return "gain";
        case NoiseType::Dephasing: return "dephasing";
        default: return "two_photon_loss";
    }
}

/// Effective jump on the cat span; `jump` acts on a qubit layout with index 0 = |C+>.
struct EffectiveChannel {
    NoiseType noise_type = NoiseType::Loss;
    Operator jump;
    double rate_prefactor = 1.0;

    Eigen::Matrix2cd matrix() const { return jump.dense(); }
};

inline EffectiveChannel effective_jump(NoiseType type, const CatBasis& basis) {
    const double b = basis.beta, p = basis.p;
    const bool zero = b == 0.0;
    Eigen::Matrix2cd m;
    double pref = 1.0;
    switch (type) {
        case NoiseType::Loss:
            if (zero) m << 0, 1, 0, 0;
            else m << 0, b / p, b * p, 0;
            break;
        case NoiseType::Gain:
            if (zero) m << 0, 0, 1, 0;
            else m << 0, b * p, b / p, 0;
            break;
        case NoiseType::Dephasing:
            if (zero) m << 0, 0, 0, 1;
            else m << b * b * p * p, 0, 0, b * b / (p * p);
            break;
        case NoiseType::TwoPhotonLoss:
            m.setIdentity();
            pref = std::pow(b, 4);
            break;
    }
    return {type, Operator(ModeLayout::qubit(), CMat(m)), pref};
}

/// Two-level master equation on the cat span (qubit layout, index 0 = |C+>).
inline EvolutionProblem build_effective_me(const CatBasis& basis, const NoiseSpec& noise) {
    noise.validate();
    EvolutionProblem p;
    p.layout = ModeLayout::qubit();
    auto add = [&](NoiseType t, double rate) {
        if (rate <= 0.0) return;
        const EffectiveChannel c = effective_jump(t, basis);
        p.add_collapse(c.jump, rate * c.rate_prefactor);
    };
    add(NoiseType::Loss, noise.kappa_1 * (1.0 + noise.n_th));
    add(NoiseType::Gain, noise.kappa_1 * noise.n_th);
    add(NoiseType::Dephasing, noise.kappa_phi);
    add(NoiseType::TwoPhotonLoss, noise.kappa_2ph);
    return p;
}

/// Full Fock-space counterpart of build_effective_me.
inline EvolutionProblem build_fock_me(const PccParams& params, const NoiseSpec& noise) {
    noise.validate();
    EvolutionProblem p;
    const Operator h = pcc_hamiltonian(params);
    p.layout = h.layout;
    p.add_h(h);
    const int d = h.dim();
    const Operator a = annihilation(d);
    p.add_collapse(a, noise.kappa_1 * (1.0 + noise.n_th));
    p.add_collapse(a.adjoint(), noise.kappa_1 * noise.n_th);
    p.add_collapse(number(d), noise.kappa_phi);
    p.add_collapse(a * a, noise.kappa_2ph);
    p.gate_all_fock(1e-9);
    return p;
}

/// Two-level states in the (C+, C-) basis.
inline QuantumState qubit_state(cplx c_plus, cplx c_minus) {
    CVec v(2);
    v << c_plus, c_minus;
    return QuantumState::pure(ModeLayout::qubit(), v / v.norm());
}

inline Operator projector(const ModeLayout& l, const CVec& v) { return {l, CMat(v * v.adjoint()), 1e-300}; }

/// Bit-flip (start |C+>, measure |C->) and phase-flip (start x+, measure x-) series.
struct FlipSeries {
    std::vector<double> times;
    std::vector<double> bit_flip;
    std::vector<double> phase_flip;
};

inline FlipSeries effective_flip_series(const CatBasis& basis, const NoiseSpec& noise, const std::vector<double>& times,
                                        IntegratorOptions opt = {}) {
    FlipSeries out{times, {}, {}};
    EvolutionProblem p = build_effective_me(basis, noise);
    p.t0 = 0.0;
    p.t1 = times.empty() ? 0.0 : times.back();
    p.sample_times = times;
    CVec minus(2), xm(2);
    minus << 0, 1;
    xm << 1, -1;
    xm /= std::sqrt(2.0);
    p.observe("c_minus", projector(p.layout, minus));
    p.observe("x_minus", projector(p.layout, xm));
    auto tb = evolve(p, qubit_state(1, 0), opt);
    auto tp = evolve(p, qubit_state(1, 1), opt);
    for (std::size_t i = 0; i < times.size(); ++i) {
        out.bit_flip.push_back(tb.observables["c_minus"][i].real());
        out.phase_flip.push_back(tp.observables["x_minus"][i].real());
    }
    return out;
}

inline FlipSeries fock_flip_series(const PccParams& params, const NoiseSpec& noise, const std::vector<double>& times,
                                   IntegratorOptions opt = {}) {
    FlipSeries out{times, {}, {}};
    EvolutionProblem p = build_fock_me(params, noise);
    const CatBasis basis = cat_basis(params.beta(), p.layout.total_dim());
    p.t0 = 0.0;
    p.t1 = times.empty() ? 0.0 : times.back();
    p.sample_times = times;
    p.observe("c_minus", projector(p.layout, basis.cat_minus));
    p.observe("x_minus", projector(p.layout, basis.x_minus));
    auto tb = evolve(p, basis.state_plus(), opt);
    auto tp = evolve(p, QuantumState::pure(p.layout, basis.x_plus), opt);
    for (std::size_t i = 0; i < times.size(); ++i) {
        out.bit_flip.push_back(tb.observables["c_minus"][i].real());
        out.phase_flip.push_back(tp.observables["x_minus"][i].real());
    }
    return out;
}

// ---------------------------------------------------------------------------
// PCC basis choice for coupled simulations

/// PCC operators in a chosen basis: the truncated Fock basis, or the highest-energy
/// eigenstates of H_pcc (cat pair first, energies descending). The eigenbasis keeps the
/// coupled problem non-stiff when the PCC stays near the cat manifold.
/// `h` is shifted by -P^2/K so the cat pair sits at zero energy.
struct PccRepresentation {
    std::string kind;
    int dim = 0;
    int fock_dim = 0;
    SpMat h;
    SpMat a;
    CVec cat_plus, cat_minus;
    CMat to_fock;  ///< fock_dim x dim isometry
    std::vector<int> parity;  ///< photon-number parity of each basis state
    CatBasis basis;

    ModeLayout layout() const { return ModeLayout::fock(dim); }
    Operator hamiltonian() const { return {layout(), h}; }
    Operator annihilation() const { return {layout(), a}; }
    /// Unitary acting as `m` on span{C+, C-} (in that order) and as identity elsewhere.
    Operator cat_span_unitary(const Eigen::Matrix2cd& m) const {
        CMat v(dim, 2);
        v.col(0) = cat_plus;
        v.col(1) = cat_minus;
        CMat u = CMat::Identity(dim, dim) + v * (m - Eigen::Matrix2cd::Identity()) * v.adjoint();
        return {layout(), u, 1e-300};
    }
};

inline PccRepresentation pcc_fock_representation(const PccParams& params) {
    params.validate();
    PccRepresentation r;
    r.kind = "fock";
    r.fock_dim = r.dim = params.resolved_dim();
    r.h = pcc_hamiltonian_matrix(r.dim, params.K, params.P);
    SpMat shift(r.dim, r.dim);
    shift.setIdentity();
    r.h -= (params.P * params.P / params.K) * shift;
    r.h.makeCompressed();
    r.a = annihilation_matrix(r.dim);
    r.basis = cat_basis(params.beta(), r.dim);
    r.cat_plus = r.basis.cat_plus;
    r.cat_minus = r.basis.cat_minus;
    r.to_fock = CMat::Identity(r.dim, r.dim);
    for (int n = 0; n < r.dim; ++n) r.parity.push_back(n % 2);
    return r;
}

/// Keep the top `levels` eigenstates of H_pcc (levels even, half per photon-number parity).
inline PccRepresentation pcc_eigen_representation(const PccParams& params, int levels) {
    params.validate();
    const int d = params.resolved_dim();
    if (levels < 2 || levels % 2 != 0 || levels > d) throw DimensionError("pcc eigenbasis: levels must be even, 2..dim");
    const CMat h = CMat(pcc_hamiltonian_matrix(d, params.K, params.P));
    struct Level {
        double energy;
        int parity;
        CVec v;
    };
    std::vector<Level> kept;
    for (int par = 0; par < 2; ++par) {
        std::vector<int> idx;
        for (int n = par; n < d; n += 2) idx.push_back(n);
        const int m = int(idx.size());
        CMat hs(m, m);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) hs(i, j) = h(idx[i], idx[j]);
        Eigen::SelfAdjointEigenSolver<CMat> es(hs);
        for (int k = 0; k < levels / 2; ++k) {
            const int col = m - 1 - k;  // ascending order from the solver
            CVec v = CVec::Zero(d);
            for (int i = 0; i < m; ++i) v(idx[i]) = es.eigenvectors()(i, col);
            kept.push_back({es.eigenvalues()(col), par, v});
        }
    }
    std::stable_sort(kept.begin(), kept.end(), [](const auto& x, const auto& y) { return x.energy > y.energy; });

    PccRepresentation r;
    r.kind = "eigen";
    r.fock_dim = d;
    r.dim = levels;
    r.to_fock.resize(d, levels);
    std::vector<Eigen::Triplet<cplx>> ht;
    for (int k = 0; k < levels; ++k) {
        r.to_fock.col(k) = kept[k].v;
        r.parity.push_back(kept[k].parity);
        ht.emplace_back(k, k, kept[k].energy - params.P * params.P / params.K);
    }
    r.h = SpMat(levels, levels);
    r.h.setFromTriplets(ht.begin(), ht.end());
    const CMat ak = r.to_fock.adjoint() * CMat(annihilation_matrix(d)) * r.to_fock;
    r.a = ak.sparseView(1.0, 1e-14);
    r.a.makeCompressed();
    r.basis = cat_basis(params.beta(), d);
    r.cat_plus = r.to_fock.adjoint() * r.basis.cat_plus;
    r.cat_minus = r.to_fock.adjoint() * r.basis.cat_minus;
    const double lost = std::max(1.0 - r.cat_plus.squaredNorm(), 1.0 - r.cat_minus.squaredNorm());
    if (lost > 1e-8) throw TruncationError("cat states are not contained in the kept eigenstates", lost);
    r.cat_plus.normalize();
    r.cat_minus.normalize();
    return r;
}

/// "fock", "eigen", or "auto" (eigen when `prefer_eigen`).
inline PccRepresentation pcc_representation(const PccParams& params, const std::string& kind, int levels,
                                            bool prefer_eigen) {
    if (kind == "fock" || (kind == "auto" && !prefer_eigen)) return pcc_fock_representation(params);
    if (kind == "eigen" || kind == "auto") return pcc_eigen_representation(params, levels);
    throw ConfigError("pcc_basis must be fock, eigen or auto");
}

// ---------------------------------------------------------------------------
// Bath emulation

enum class BathChannel { Loss, Gain, Dephasing };
enum class CatInit { CatPlus, XPlus };

inline std::string to_string(BathChannel c) {
    switch (c) {
        case BathChannel::Loss: return "loss";
        case BathChannel::Gain: return "gain";
        default: return "dephasing";
    }
}

/// Truncated thermal state with mean occupation n (renormalized).
inline CMat thermal_density(int dim, double n) {
    CMat r = CMat::Zero(dim, dim);
    double s = 0.0;
    for (int k = 0; k < dim; ++k) {
        const double w = n == 0.0 ? (k == 0 ? 1.0 : 0.0) : std::pow(n, k) / std::pow(1.0 + n, k + 1);
        r(k, k) = w;
        s += w;
    }
    return r / s;
}

inline double bath_rate_loss(const BathCavitySpec& b) { return 4.0 * b.g * b.g / b.kappa_bc; }
inline double bath_rate_dephasing(const BathCavitySpec& b) {
    return 2.0 * b.g * b.g * (b.n_bc + b.n_bc * b.n_bc) / b.kappa_bc;
}

namespace detail {

struct BathRun {
    Trajectory traj;
    CatBasis basis;
};

inline BathRun run_bath(const PccParams& params, const BathCavitySpec& bath, BathChannel channel, double kappa_2ph,
                        CatInit init, const std::vector<double>& t_grid, IntegratorOptions opt) {
    params.validate();
    const int d = params.resolved_dim();
    const int db = bath.dim_bc;
    if (db < 2) throw DimensionError("bath dim_bc must be >= 2");
    if (d * db > 2000) throw DimensionError("bath emulation: pcc_dim x bath_dim exceeds 2000");
    const CatBasis basis = cat_basis(params.beta(), d);
    const ModeLayout layout = ModeLayout::fock(d).concat(ModeLayout::fock(db));
    const Operator a = embed(layout, 0, annihilation(d));
    const Operator b = embed(layout, 1, annihilation(db));
    const Operator id = identity(layout);

    EvolutionProblem p;
    p.layout = layout;
    p.add_h(embed(layout, 0, pcc_hamiltonian({params.K, params.P, d})));
    if (channel == BathChannel::Dephasing) {
        p.add_h(bath.g * (a.adjoint() * a) * (b.adjoint() * b - bath.n_bc * id));
    } else {
        p.add_h(bath.g * (a.adjoint() * b + a * b.adjoint()));
    }
    p.add_collapse(b, bath.kappa_bc * (1.0 + bath.n_bc));
    p.add_collapse(b.adjoint(), bath.kappa_bc * bath.n_bc);
    p.add_collapse(a * a, kappa_2ph);
    p.tail_gates.push_back({0, 1e-9});
    p.tail_gates.push_back({1, 1e-6});
    p.t0 = 0.0;
    p.t1 = t_grid.empty() ? 0.0 : t_grid.back();
    p.sample_times = t_grid;

    const Operator idb = identity(db);
    auto lift = [&](const CVec& v) { return tensor({projector(ModeLayout::fock(d), v), idb}); };
    p.observe("c_minus", lift(basis.cat_minus));
    p.observe("c_plus", lift(basis.cat_plus));
    p.observe("x_minus", lift(basis.x_minus));

    const CVec psi = init == CatInit::CatPlus ? basis.cat_plus : basis.x_plus;
    const QuantumState rho0 = QuantumState::density(
        layout, Eigen::kroneckerProduct(CMat(psi * psi.adjoint()), thermal_density(db, bath.n_bc)).eval());
    return {evolve(p, rho0, opt), basis};
}

inline std::vector<double> real_part(const std::vector<cplx>& v) {
    std::vector<double> r;
    for (auto z : v) r.push_back(z.real());
    return r;
}

}  // namespace detail

/// Max relative pointwise gap |x - y| / y where y > floor.
inline double max_relative_gap(const std::vector<double>& x, const std::vector<double>& y, double floor) {
    double m = 0.0;
    for (std::size_t i = 0; i < x.size() && i < y.size(); ++i)
        if (y[i] > floor) m = std::max(m, std::abs(x[i] - y[i]) / y[i]);
    return m;
}

inline double max_abs_gap(const std::vector<double>& x, const std::vector<double>& y) {
    double m = 0.0;
    for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
    return m;
}

/// PCC coupled to a lossy, thermally occupied emulation cavity, compared against
/// the effective two-level ME at the adiabatically eliminated rate.
inline ExperimentResult bath_emulation_experiment(const PccParams& params, const BathCavitySpec& bath,
                                                  BathChannel channel, CatInit init, const std::vector<double>& t_grid,
                                                  IntegratorOptions opt = {}) {
    auto run = detail::run_bath(params, bath, channel, 0.0, init, t_grid, opt);
    ExperimentResult r;
    r.id = "bath-emulation";
    r.param("beta", params.beta());
    r.param("K", params.K);
    r.param("P", params.P);
    r.param("pcc_dim", double(run.basis.dim));
    r.param("g", bath.g);
    r.param("kappa_bc", bath.kappa_bc);
    r.param("n_bc", bath.n_bc);
    r.param("dim_bc", double(bath.dim_bc));
    r.param("channel", to_string(channel));
    r.param("init", init == CatInit::CatPlus ? "cat_plus" : "x_plus");
    r.time_grid = t_grid;
    r.rtol = opt.rtol;
    r.atol = opt.atol;
    if (bath.adiabatic_warning())
        r.warnings.push_back("g >= kappa_bc/5: adiabatic elimination of the bath cavity is not justified");

    auto& o = run.traj.observables;
    r.series["p_bit_flip"] = detail::real_part(o["c_minus"]);
    r.series["p_phase_flip"] = detail::real_part(o["x_minus"]);
    std::vector<double> leak;
    for (std::size_t i = 0; i < t_grid.size(); ++i) leak.push_back(1.0 - o["c_plus"][i].real() - o["c_minus"][i].real());
    r.series["leakage"] = leak;

    NoiseSpec eff;
    if (channel == BathChannel::Dephasing) {
        eff.kappa_phi = bath_rate_dephasing(bath);
    } else {
        eff.kappa_1 = bath_rate_loss(bath);
        eff.n_th = bath.n_bc;
    }
    r.summary["kappa_eff"] = bath_rate_loss(bath);
    r.summary["kappa_phi_eff"] = bath_rate_dephasing(bath);
    const FlipSeries fs = effective_flip_series(run.basis, eff, t_grid, opt);
    r.series["eff_p_bit_flip"] = fs.bit_flip;
    r.series["eff_p_phase_flip"] = fs.phase_flip;
    const bool cat = init == CatInit::CatPlus;
    const auto& sim = cat ? r.series["p_bit_flip"] : r.series["p_phase_flip"];
    const auto& ref = cat ? fs.bit_flip : fs.phase_flip;
    r.summary["max_rel_gap"] = max_relative_gap(sim, ref, 1e-4);
    r.summary["max_abs_gap"] = max_abs_gap(sim, ref);
    r.summary["final_flip"] = sim.empty() ? 0.0 : sim.back();
    r.summary["final_eff_flip"] = ref.empty() ? 0.0 : ref.back();
    return r;
}

/// Exchange-coupled thermal bath plus two-photon loss on the PCC; reports leakage out of the cat span.
inline ExperimentResult two_photon_autocorrect_experiment(const PccParams& params, const BathCavitySpec& bath,
                                                          double kappa_2ph, CatInit init,
                                                          const std::vector<double>& t_grid,
                                                          IntegratorOptions opt = {}) {
    auto run = detail::run_bath(params, bath, BathChannel::Loss, kappa_2ph, init, t_grid, opt);
    ExperimentResult r;
    r.id = "two-photon-autocorrect";
    r.param("beta", params.beta());
    r.param("K", params.K);
    r.param("P", params.P);
    r.param("pcc_dim", double(run.basis.dim));
    r.param("g", bath.g);
    r.param("kappa_bc", bath.kappa_bc);
    r.param("n_bc", bath.n_bc);
    r.param("dim_bc", double(bath.dim_bc));
    r.param("kappa_2ph", kappa_2ph);
    r.param("init", init == CatInit::CatPlus ? "cat_plus" : "x_plus");
    r.time_grid = t_grid;
    r.rtol = opt.rtol;
    r.atol = opt.atol;
    if (bath.adiabatic_warning())
        r.warnings.push_back("g >= kappa_bc/5: adiabatic elimination of the bath cavity is not justified");
    auto& o = run.traj.observables;
    std::vector<double> leak;
    for (std::size_t i = 0; i < t_grid.size(); ++i) leak.push_back(1.0 - o["c_plus"][i].real() - o["c_minus"][i].real());
    r.series["leakage"] = leak;
    r.summary["final_leakage"] = leak.empty() ? 0.0 : leak.back();
    return r;
}

/// Decomposition of a^2 a^dag acting on the unnormalized-cat pair (|b> +/- |-b>)/sqrt(2):
/// coefficient on the flipped cat, coefficient on the out-of-span state, and the residual.
struct GainTwoPhotonDecomposition {
    double in_span_coeff = 0.0;
    double out_of_span_coeff = 0.0;
    double residual = 0.0;
    double fraction() const { return out_of_span_coeff / in_span_coeff; }
};

inline GainTwoPhotonDecomposition gain_then_two_photon(double beta, int dim = 60) {
    const SpMat a = annihilation_matrix(dim);
    const CMat d_plus = displacement(dim, beta).dense();
    const CMat d_minus = displacement(dim, -beta).dense();
    const CVec vac = fock_vector(dim, 0), one = fock_vector(dim, 1);
    const CVec bp = d_plus * vac, bm = d_minus * vac;
    const CVec cp = (bp + bm) / std::sqrt(2.0), cm = (bp - bm) / std::sqrt(2.0);
    const CVec perp = (d_plus * one + d_minus * one) / std::sqrt(2.0);
    const CVec v = a * (a * CVec(SpMat(a.adjoint()) * cp));
    // least-squares fit of v onto span{cm, perp}
    CMat basis(dim, 2);
    basis.col(0) = cm;
    basis.col(1) = perp;
    const Eigen::Vector2cd c = basis.colPivHouseholderQr().solve(v);
    GainTwoPhotonDecomposition out;
    out.in_span_coeff = c(0).real();
    out.out_of_span_coeff = c(1).real();
    out.residual = (v - basis * c).norm();
    return out;
}

}  // namespace catsyn
