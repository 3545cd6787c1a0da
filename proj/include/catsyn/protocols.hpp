#pragma once

#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dynamics.hpp"
#include "hilbert.hpp"
#include "pcc.hpp"

namespace catsyn {

enum class Parity { Even, Odd };

inline std::string to_string(Parity p) { return p == Parity::Even ? "even" : "odd"; }
inline Parity parse_parity(const std::string& s) {
    if (s == "even") return Parity::Even;
    if (s == "odd") return Parity::Odd;
    throw ConfigError("parity must be even or odd, got '" + s + "'");
}

/// Sine or Gaussian envelope with peak parameter chi0 whose windowed integral equals `area`.
/// The Gaussian width is stretched by 1/erf(3) so the truncated pulse carries the full area.
inline PulseShape shaped_pulse(const std::string& shape, double chi0, double area) {
    if (!(chi0 > 0.0)) throw ValidityError("chi0 must be positive");
    if (shape == "sine") return PulseShape::sine(chi0, area / chi0);
    if (shape == "gaussian") return PulseShape::gaussian(chi0, area / (chi0 * std::erf(3.0)));
    throw ConfigError("pulse shape must be sine or gaussian, got '" + shape + "'");
}

/// chi0 giving peak value `chi_peak` for the given envelope.
inline double chi0_for_peak(const std::string& shape, double chi_peak) {
    if (shape == "sine") return 2.0 * chi_peak / kPi;
    if (shape == "gaussian") return chi_peak * std::sqrt(kPi);
    throw ConfigError("pulse shape must be sine or gaussian, got '" + shape + "'");
}

// ---------------------------------------------------------------------------
// Syndrome outcomes

struct SyndromeOutcome {
    std::vector<double> times;
    std::vector<double> flip_series;    ///< <C-|rho_pcc|C->
    std::vector<double> stay_series;    ///< <C+|rho_pcc|C+>
    std::vector<double> intact_series;  ///< overlap of the data state with its initial value
    double p_pcc_flip = 0.0;
    double p_pcc_stay = 0.0;
    double p_syndrome = 0.0;  ///< probability of the cat state that signals the data parity
    double p_data_intact = 0.0;
    double leakage = 0.0;
    bool expect_flip = false;
    long steps = 0;
};

namespace detail {

/// Branch-resolved bookkeeping: the data register sits in a superposition of branches j with
/// populations w_j, and the PCC factor of branch pair (j, k) evolves into R_jk.
inline SyndromeOutcome summarize_branches(const ConditionalTrajectory& tr, const std::vector<double>& w,
                                          const CVec& c_plus, const CVec& c_minus, bool expect_flip) {
    SyndromeOutcome out;
    out.times = tr.sample_times;
    out.expect_flip = expect_flip;
    out.steps = tr.steps_accepted;
    const int nb = int(w.size());
    for (std::size_t s = 0; s < tr.sample_times.size(); ++s) {
        CMat rho = CMat::Zero(c_plus.size(), c_plus.size());
        double intact = 0.0;
        for (int j = 0; j < nb; ++j) {
            for (int k = 0; k < nb; ++k) {
                const CMat r = tr.block(s, j, k);
                intact += w[j] * w[k] * r.trace().real();
                if (j == k) rho += w[j] * r;
            }
        }
        out.flip_series.push_back(c_minus.dot(rho * c_minus).real());
        out.stay_series.push_back(c_plus.dot(rho * c_plus).real());
        out.intact_series.push_back(intact);
    }
    out.p_pcc_flip = out.flip_series.back();
    out.p_pcc_stay = out.stay_series.back();
    out.p_syndrome = expect_flip ? out.p_pcc_flip : out.p_pcc_stay;
    out.p_data_intact = out.intact_series.back();
    out.leakage = 1.0 - out.p_pcc_flip - out.p_pcc_stay;
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Toric-code Z stabilizer

struct ToricConfig {
    PccParams pcc{1.0, 4.0, 0};
    double chi0 = 1.0 / 20.0;
    std::string shape = "sine";
    double kappa_1 = 0.0;
    Parity parity_init = Parity::Odd;
    bool compensation = true;
    int n_qubits = 4;
    int samples = 41;

    double area() const { return kPi / (8.0 * pcc.beta()); }
    PulseShape pulse() const { return shaped_pulse(shape, chi0, area()); }
    /// T_z for the sine envelope; the Gaussian window is [-3T, 3T].
    double T() const { return kPi / (8.0 * chi0 * pcc.beta()); }

    void validate() const {
        pcc.validate();
        if (!(pcc.beta() > 0.0)) throw ValidityError("toric: beta must be positive");
        if (kappa_1 < 0.0) throw ValidityError("toric: kappa_1 must be non-negative");
        if (n_qubits < 1 || n_qubits > 8) throw DimensionError("toric: n_qubits must be in 1..8");
        if (samples < 2) throw ValidityError("toric: samples must be >= 2");
        const double rel = std::abs(pulse().integral() - area()) / area();
        if (rel > 1e-6) throw ValidityError("toric: pulse integral differs from pi/(8 beta)");
    }
};

/// Equal superposition of all computational states with odd (even) excitation count.
/// Basis index bit i (most significant first) is qubit i; bit value 0 is sigma_z = +1.
inline CVec toric_data_state(Parity parity, int n_qubits) {
    const int d = 1 << n_qubits;
    CVec v = CVec::Zero(d);
    for (int b = 0; b < d; ++b)
        if ((std::popcount(unsigned(b)) % 2 == 1) == (parity == Parity::Odd)) v(b) = 1.0;
    return v / v.norm();
}

/// S'_z eigenvalue sum_i sigma_z,i of computational basis state b.
inline int toric_sz(int b, int n_qubits) { return n_qubits - 2 * std::popcount(unsigned(b)); }

/// The PCC ends in |C-> when S'_z = 2 mod 4 (odd parity for four qubits).
inline bool toric_flips(int b, int n_qubits) { return ((toric_sz(b, n_qubits) % 4) + 4) % 4 == 2; }

/// Block-conditional toric run for an arbitrary data state on n_qubits.
inline SyndromeOutcome toric_z_run(const ToricConfig& cfg, const CVec& data, IntegratorOptions opt = {}) {
    cfg.validate();
    const int nq = cfg.n_qubits;
    if (data.size() != (1 << nq)) throw DimensionError("toric: data state size must be 2^n_qubits");
    const double beta = cfg.pcc.beta();
    const PulseShape pulse = cfg.pulse();
    const Operator h = pcc_hamiltonian(cfg.pcc);
    const int d = h.dim();
    const CatBasis basis = cat_basis(beta, d);

    std::map<int, double> weight;  // S'_z value -> population
    double flipping = 0.0;
    for (int b = 0; b < data.size(); ++b) {
        const double p = std::norm(data(b));
        if (p == 0.0) continue;
        weight[toric_sz(b, nq)] += p;
        if (toric_flips(b, nq)) flipping += p;
    }

    ConditionalProblem cp;
    EvolutionProblem& p = cp.base;
    p.layout = h.layout;
    p.add_h(h);
    p.add_collapse(annihilation(d), cfg.kappa_1);
    p.gate_all_fock(1e-9);
    const auto win = pulse.window();
    p.t0 = win.first;
    p.t1 = win.second;
    p.sample_times = linspace(win.first, win.second, cfg.samples);
    Operator coupling = annihilation(d) + creation(d);
    if (cfg.compensation) coupling -= cplx(2.0 * beta) * identity(d);
    cp.terms.push_back({coupling, pulse});
    std::vector<double> w;
    for (const auto& [s, pw] : weight) {
        cp.lambda.push_back({double(s)});
        w.push_back(pw);
    }
    cp.weights = w;
    const auto tr = evolve_conditional(cp, basis.state_plus(), opt);
    return detail::summarize_branches(tr, w, basis.cat_plus, basis.cat_minus, flipping > 0.5);
}

inline SyndromeOutcome toric_z_experiment(const ToricConfig& cfg, IntegratorOptions opt = {}) {
    return toric_z_run(cfg, toric_data_state(cfg.parity_init, cfg.n_qubits), opt);
}

/// Same protocol on the explicit qubits (x) PCC layout; reference for the block path.
inline SyndromeOutcome toric_z_full(const ToricConfig& cfg, const CVec& data, IntegratorOptions opt = {}) {
    cfg.validate();
    const int nq = cfg.n_qubits;
    const double beta = cfg.pcc.beta();
    const Operator h = pcc_hamiltonian(cfg.pcc);
    const int d = h.dim();
    const CatBasis basis = cat_basis(beta, d);
    std::vector<Mode> modes(nq, Mode::qubit());
    modes.push_back(Mode::fock(d));
    const ModeLayout layout(modes);
    const int pcc = nq;

    Operator sz(layout, SpMat(layout.total_dim(), layout.total_dim()));
    for (int i = 0; i < nq; ++i) sz += embed(layout, i, sigma_z());
    Operator drive = embed(layout, pcc, annihilation(d) + creation(d));
    if (cfg.compensation) drive -= cplx(2.0 * beta) * identity(layout);

    EvolutionProblem p;
    p.layout = layout;
    p.add_h(embed(layout, pcc, h));
    p.add_h(sz * drive, cfg.pulse());
    p.add_collapse(embed(layout, pcc, annihilation(d)), cfg.kappa_1);
    p.tail_gates.push_back({std::size_t(pcc), 1e-9});
    const auto win = cfg.pulse().window();
    p.t0 = win.first;
    p.t1 = win.second;
    p.sample_times = linspace(win.first, win.second, cfg.samples);

    std::vector<QuantumState> parts;
    const QuantumState data_state = QuantumState::pure(ModeLayout(std::vector<Mode>(nq, Mode::qubit())), data);
    const QuantumState initial = tensor({data_state, basis.state_plus()});
    std::set<std::size_t> keep_data;
    for (int i = 0; i < nq; ++i) keep_data.insert(i);

    opt.retain_states = true;
    const Trajectory tr = evolve(p, initial, opt);
    SyndromeOutcome out;
    out.times = tr.sample_times;
    out.steps = tr.steps_accepted;
    double flipping = 0.0;
    for (int b = 0; b < data.size(); ++b)
        if (toric_flips(b, nq)) flipping += std::norm(data(b));
    out.expect_flip = flipping > 0.5;
    for (const auto& st : tr.states) {
        const CMat rp = partial_trace(st, {std::size_t(pcc)}).density_matrix();
        const CMat rq = partial_trace(st, keep_data).density_matrix();
        out.flip_series.push_back(basis.cat_minus.dot(rp * basis.cat_minus).real());
        out.stay_series.push_back(basis.cat_plus.dot(rp * basis.cat_plus).real());
        out.intact_series.push_back(data.dot(rq * data).real());
    }
    out.p_pcc_flip = out.flip_series.back();
    out.p_pcc_stay = out.stay_series.back();
    out.p_syndrome = out.expect_flip ? out.p_pcc_flip : out.p_pcc_stay;
    out.p_data_intact = out.intact_series.back();
    out.leakage = 1.0 - out.p_pcc_flip - out.p_pcc_stay;
    return out;
}

// ---------------------------------------------------------------------------
// Toric-code X stabilizer via Jaynes-Cummings coupling

struct ToricXReduction {
    Operator full;       ///< chi sum_i (a^dag s-_i + a s+_i)
    Operator projected;  ///< (I (x) P_C) full (I (x) P_C)
    Operator effective;  ///< chi beta sum_i [sx_i (p+1/p)/2 sx~ + sy_i (p-1/p)/2 sy~]
    double reduction_error = 0.0;
    double weight_x = 0.0;  ///< (p + 1/p)/2
    double weight_y = 0.0;  ///< (p - 1/p)/2
    double asymmetry() const { return weight_y / weight_x; }
};

inline ToricXReduction toric_x_hamiltonian(const ToricConfig& cfg) {
    cfg.pcc.validate();
    const int nq = cfg.n_qubits;
    const int d = cfg.pcc.resolved_dim();
    const double beta = cfg.pcc.beta();
    const CatBasis basis = cat_basis(beta, d);
    std::vector<Mode> modes(nq, Mode::qubit());
    modes.push_back(Mode::fock(d));
    const ModeLayout layout(modes);
    const int n = layout.total_dim();

    const Operator a = embed(layout, nq, annihilation(d));
    Operator full(layout, SpMat(n, n));
    for (int i = 0; i < nq; ++i)
        full += a.adjoint() * embed(layout, i, sigma_minus()) + a * embed(layout, i, sigma_plus());
    full *= cfg.chi0;

    const Operator pc = embed(layout, nq, basis.embed(Eigen::Matrix2cd::Identity()));
    const Operator projected = pc * full * pc;

    ToricXReduction r{full, projected, Operator(layout, SpMat(n, n))};
    r.weight_x = 0.5 * (basis.p + 1.0 / basis.p);
    r.weight_y = 0.5 * (basis.p - 1.0 / basis.p);
    const Operator sx_c = embed(layout, nq, basis.sigma_x);
    const Operator sy_c = embed(layout, nq, basis.sigma_y);
    for (int i = 0; i < nq; ++i) {
        r.effective += cplx(r.weight_x) * embed(layout, i, sigma_x()) * sx_c;
        r.effective += cplx(r.weight_y) * embed(layout, i, sigma_y()) * sy_c;
    }
    r.effective *= cfg.chi0 * beta;
    const CMat diff = (projected - r.effective).dense();
    Eigen::SelfAdjointEigenSolver<CMat> es(0.5 * (diff + diff.adjoint()), Eigen::EigenvaluesOnly);
    r.reduction_error = es.eigenvalues().cwiseAbs().maxCoeff();
    return r;
}

/// Probability that a strict majority of n independent rounds succeeds.
inline double majority_vote(double p_single, int n_repeats) {
    if (!(p_single >= 0.0 && p_single <= 1.0)) throw ValidityError("majority_vote: p must be in [0, 1]");
    if (n_repeats < 1 || n_repeats % 2 == 0) throw ValidityError("majority_vote: n_repeats must be odd and positive");
    double total = 0.0;
    for (int k = n_repeats / 2 + 1; k <= n_repeats; ++k) {
        double c = 1.0;
        for (int i = 0; i < k; ++i) c = c * double(n_repeats - i) / double(i + 1);
        total += c * std::pow(p_single, k) * std::pow(1.0 - p_single, n_repeats - k);
    }
    return total;
}

// ---------------------------------------------------------------------------
// Cat-code parity

struct CatCodeConfig {
    PccParams pcc{1.0, 4.0, 0};
    double alpha = 2.0;
    int storage_dim = 0;  ///< 0 selects default_pcc_dim(alpha)
    double chi0 = 1.0 / 15.0;
    std::string shape = "sine";
    double kappa_1 = 0.0;
    Parity parity_init = Parity::Odd;
    bool mean_photon_compensation = true;
    /// "alpha2": counter-drive uses |alpha|^2; "state": the exact <n_s> of the initial storage state.
    std::string mean_photon_source = "alpha2";
    std::string storage_init = "cat";  ///< "cat" or "fock0"
    int samples = 41;

    int resolved_storage_dim() const { return storage_dim > 0 ? storage_dim : default_pcc_dim(alpha); }
    double area() const { return kPi / (4.0 * pcc.beta()); }
    PulseShape pulse() const { return shaped_pulse(shape, chi0, area()); }
    double T() const { return kPi / (4.0 * chi0 * pcc.beta()); }

    void validate() const {
        pcc.validate();
        if (!(pcc.beta() > 0.0)) throw ValidityError("cat parity: beta must be positive");
        if (kappa_1 < 0.0) throw ValidityError("cat parity: kappa_1 must be non-negative");
        if (samples < 2) throw ValidityError("cat parity: samples must be >= 2");
        if (mean_photon_source != "alpha2" && mean_photon_source != "state")
            throw ConfigError("mean_photon_source must be alpha2 or state");
        if (storage_init != "cat" && storage_init != "fock0") throw ConfigError("storage_init must be cat or fock0");
        const double rel = std::abs(pulse().integral() - area()) / area();
        if (rel > 1e-6) throw ValidityError("cat parity: pulse integral differs from pi/(4 beta)");
    }
};

/// |C-_a> + i|C-_ia> (odd) or |C+_a> + |C+_ia> (even), normalized.
inline CVec storage_cat_state(Parity parity, double alpha, int dim) {
    const bool even = parity == Parity::Even;
    CVec v = cat_vector(dim, alpha, even);
    v += (even ? cplx(1.0) : I1) * cat_vector(dim, cplx(0.0, alpha), even);
    const double tail = tail_population(v / v.norm());
    if (tail > 1e-9) throw TruncationError("storage cat tail above 1e-9", tail);
    return v / v.norm();
}

inline CVec cat_parity_initial_storage(const CatCodeConfig& cfg) {
    const int ds = cfg.resolved_storage_dim();
    if (cfg.storage_init == "fock0") return fock_vector(ds, 0);
    return storage_cat_state(cfg.parity_init, cfg.alpha, ds);
}

inline double cat_parity_mean_photon(const CatCodeConfig& cfg, const CVec& storage) {
    if (!cfg.mean_photon_compensation) return 0.0;
    if (cfg.mean_photon_source == "alpha2") return cfg.storage_init == "fock0" ? 0.0 : cfg.alpha * cfg.alpha;
    double m = 0.0;
    for (int n = 0; n < storage.size(); ++n) m += n * std::norm(storage(n));
    return m;
}

/// Storage Fock levels with population above this are evolved as branches.
inline constexpr double kBranchCutoff = 1e-14;

inline SyndromeOutcome cat_parity_experiment(const CatCodeConfig& cfg, IntegratorOptions opt = {}) {
    cfg.validate();
    const double beta = cfg.pcc.beta();
    const Operator h = pcc_hamiltonian(cfg.pcc);
    const int d = h.dim();
    const CatBasis basis = cat_basis(beta, d);
    const CVec storage = cat_parity_initial_storage(cfg);
    const double nbar = cat_parity_mean_photon(cfg, storage);
    const PulseShape pulse = cfg.pulse();

    ConditionalProblem cp;
    EvolutionProblem& p = cp.base;
    p.layout = h.layout;
    p.add_h(h);
    p.add_collapse(annihilation(d), cfg.kappa_1);
    p.gate_all_fock(1e-9);
    const auto win = pulse.window();
    p.t0 = win.first;
    p.t1 = win.second;
    p.sample_times = linspace(win.first, win.second, cfg.samples);
    cp.terms.push_back({annihilation(d) + creation(d) - cplx(2.0 * beta) * identity(d), pulse});
    std::vector<double> w;
    double odd = 0.0;
    for (int n = 0; n < storage.size(); ++n) {
        const double pn = std::norm(storage(n));
        if (n % 2 == 1) odd += pn;
        if (pn <= kBranchCutoff) continue;
        cp.lambda.push_back({double(n) - nbar});
        w.push_back(pn);
    }
    cp.weights = w;
    const auto tr = evolve_conditional(cp, basis.state_plus(), opt);
    return detail::summarize_branches(tr, w, basis.cat_plus, basis.cat_minus, odd > 0.5);
}

// ---------------------------------------------------------------------------
// Phase diffusion

enum class DiffusionProtocol { Toric, CatParity };

struct PhaseDiffusionReport {
    double chi_ratio = 0.0;  ///< chi' / (K beta^2)
    double chi_peak = 0.0;   ///< chi'
    double chi0 = 0.0;
    double E_numeric = 0.0;
    double E_theory = 0.0;
    std::vector<std::pair<double, double>> phases;  ///< (branch label, phi)
};

/// 1 - |sum_j w_j exp(i phi_j)|^2.
inline double phase_infidelity(const std::vector<double>& w, const std::vector<double>& phi) {
    cplx s = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * std::exp(I1 * phi[j]);
    return 1.0 - std::norm(s);
}

inline PhaseDiffusionReport toric_phase_diffusion(ToricConfig cfg, double chi_ratio, IntegratorOptions opt = {}) {
    const double beta = cfg.pcc.beta();
    PhaseDiffusionReport r;
    r.chi_ratio = chi_ratio;
    r.chi_peak = chi_ratio * cfg.pcc.K * beta * beta;
    r.chi0 = cfg.chi0 = chi0_for_peak(cfg.shape, r.chi_peak);
    cfg.kappa_1 = 0.0;
    r.E_numeric = 1.0 - toric_z_experiment(cfg, opt).p_data_intact;
    const double gap = energy_gap(cfg.pcc);
    const double chi2 = cfg.pulse().integral_of_square();
    const CVec data = toric_data_state(cfg.parity_init, cfg.n_qubits);
    std::map<int, double> weight;
    for (int b = 0; b < data.size(); ++b)
        if (std::norm(data(b)) > 0.0) weight[toric_sz(b, cfg.n_qubits)] += std::norm(data(b));
    std::vector<double> w, phi;
    for (const auto& [s, pw] : weight) {
        w.push_back(pw);
        phi.push_back(double(s * s) * chi2 / gap);
        r.phases.emplace_back(double(s), phi.back());
    }
    r.E_theory = phase_infidelity(w, phi);
    return r;
}

inline PhaseDiffusionReport cat_phase_diffusion(CatCodeConfig cfg, double chi_ratio, IntegratorOptions opt = {}) {
    const double beta = cfg.pcc.beta();
    PhaseDiffusionReport r;
    r.chi_ratio = chi_ratio;
    r.chi_peak = chi_ratio * cfg.pcc.K * beta * beta;
    r.chi0 = cfg.chi0 = chi0_for_peak(cfg.shape, r.chi_peak);
    cfg.kappa_1 = 0.0;
    r.E_numeric = 1.0 - cat_parity_experiment(cfg, opt).p_data_intact;
    const double gap = energy_gap(cfg.pcc);
    const double chi2 = cfg.pulse().integral_of_square();
    const CVec storage = cat_parity_initial_storage(cfg);
    const double nbar = cat_parity_mean_photon(cfg, storage);
    std::vector<double> w, phi;
    for (int m = 0; m < storage.size(); ++m) {
        const double pm = std::norm(storage(m));
        if (pm <= kBranchCutoff) continue;
        w.push_back(pm);
        phi.push_back((m - nbar) * (m - nbar) * chi2 / gap);
        r.phases.emplace_back(double(m), phi.back());
    }
    r.E_theory = phase_infidelity(w, phi);
    return r;
}

/// Even-parity data: the first-order phases of the odd-parity branches all coincide.
inline ToricConfig toric_diffusion_defaults() {
    ToricConfig c;
    c.parity_init = Parity::Even;
    return c;
}

/// Sweep chi'/(K beta^2) for one protocol; `shape` overrides the config's envelope.
inline std::vector<PhaseDiffusionReport> phase_diffusion_experiment(DiffusionProtocol protocol,
                                                                    const std::string& shape,
                                                                    const std::vector<double>& chi_ratios,
                                                                    const ToricConfig& toric = toric_diffusion_defaults(),
                                                                    const CatCodeConfig& cat = {},
                                                                    IntegratorOptions opt = {}) {
    std::vector<PhaseDiffusionReport> out;
    for (double x : chi_ratios) {
        if (protocol == DiffusionProtocol::Toric) {
            ToricConfig c = toric;
            c.shape = shape;
            out.push_back(toric_phase_diffusion(c, x, opt));
        } else {
            CatCodeConfig c = cat;
            c.shape = shape;
            out.push_back(cat_phase_diffusion(c, x, opt));
        }
    }
    return out;
}

/// Least-squares slope of log E against log chi'.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ValidityError("loglog_slope needs >= 2 matching points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = double(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ---------------------------------------------------------------------------
// GKP phase estimation

struct HolevoReport {
    double s_q = 0.0, s_p = 0.0;
    double V_q = 0.0, V_p = 0.0;
};

inline double holevo_from_modulus(double s) {
    return s < 1e-6 ? std::numeric_limits<double>::infinity() : 1.0 / (s * s) - 1.0;
}

namespace detail {

/// (D(i sqrt(2 pi)), D(sqrt(2 pi))) truncated from a padded space.
inline const std::pair<CMat, CMat>& stabilizer_matrices(int dim) {
    static std::mutex mu;
    static std::map<int, std::pair<CMat, CMat>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(dim);
    if (it != cache.end()) return it->second;
    const int big = dim + kDisplacementPadding;
    const double l = std::sqrt(2.0 * kPi);
    CMat dq = displacement(big, cplx(0.0, l)).dense().topLeftCorner(dim, dim);
    CMat dp = displacement(big, cplx(l, 0.0)).dense().topLeftCorner(dim, dim);
    return cache.emplace(dim, std::make_pair(std::move(dq), std::move(dp))).first->second;
}

}  // namespace detail

inline HolevoReport holevo_from_density(const CMat& rho) {
    const auto& [dq, dp] = detail::stabilizer_matrices(int(rho.rows()));
    HolevoReport h;
    h.s_q = std::abs(dq.cwiseProduct(rho.transpose()).sum());
    h.s_p = std::abs(dp.cwiseProduct(rho.transpose()).sum());
    h.V_q = holevo_from_modulus(h.s_q);
    h.V_p = holevo_from_modulus(h.s_p);
    return h;
}

inline HolevoReport holevo_variance(const QuantumState& state) {
    if (state.layout.size() != 1 || state.layout.modes()[0].kind != Mode::Kind::Fock)
        throw DimensionError("holevo_variance expects a single Fock mode");
    return holevo_from_density(state.density_matrix());
}

struct GkpRoundReport {
    HolevoReport v0, v_prime, v_m;
    double p_plus = 0.0, p_minus = 0.0, leakage = 0.0;
    bool leakage_flag = false;
    double T = 0.0;
    std::string pcc_basis;
    int pcc_levels = 0;
    long steps = 0;
    std::vector<std::string> warnings;

    double dV_q() const { return v_prime.V_q - v0.V_q; }
    double dV_p() const { return v_prime.V_p - v0.V_p; }
};

namespace detail {

/// Rotate the ancilla by R, project onto c0 / c1, and score the storage branches.
/// `state` is a storage (x) ancilla pure column or density matrix, storage index slowest.
inline void ape_measure(const CMat& state, bool pure, int S, int m, const CMat& R, const CVec& c0, const CVec& c1,
                        GkpRoundReport& rep) {
    const CVec b0 = R.transpose() * c0.conjugate();
    const CVec b1 = R.transpose() * c1.conjugate();
    CMat rho_s, rho0, rho1;
    if (pure) {
        using RowMat = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        const RowMat M = Eigen::Map<const RowMat>(state.data(), S, m);
        rho_s = M * M.adjoint();
        const CVec u0 = M * b0, u1 = M * b1;
        rho0 = u0 * u0.adjoint();
        rho1 = u1 * u1.adjoint();
    } else {
        rho_s = CMat::Zero(S, S);
        rho0 = CMat::Zero(S, S);
        rho1 = CMat::Zero(S, S);
        for (int s = 0; s < S; ++s)
            for (int t = 0; t < S; ++t) {
                const auto blk = state.block(s * m, t * m, m, m);
                rho_s(s, t) = blk.trace();
                rho0(s, t) = b0.transpose() * blk * b0.conjugate();
                rho1(s, t) = b1.transpose() * blk * b1.conjugate();
            }
    }
    rep.p_plus = rho0.trace().real();
    rep.p_minus = rho1.trace().real();
    rep.leakage = 1.0 - rep.p_plus - rep.p_minus;
    rep.leakage_flag = rep.leakage > 1e-3;
    if (rep.leakage_flag) rep.warnings.push_back("ancilla weight outside the measured pair exceeds 1e-3");
    rep.v_m = holevo_from_density(rho_s);
    HolevoReport h0 = rep.p_plus > 0 ? holevo_from_density(rho0 / rep.p_plus) : HolevoReport{};
    HolevoReport h1 = rep.p_minus > 0 ? holevo_from_density(rho1 / rep.p_minus) : HolevoReport{};
    rep.v_prime.V_q = rep.p_plus * h0.V_q + rep.p_minus * h1.V_q;
    rep.v_prime.V_p = rep.p_plus * h0.V_p + rep.p_minus * h1.V_p;
    rep.v_prime.s_q = rep.p_plus * h0.s_q + rep.p_minus * h1.s_q;
    rep.v_prime.s_p = rep.p_plus * h0.s_p + rep.p_minus * h1.s_p;
}

inline Eigen::Matrix2cd x_rotation(double phi) {
    Eigen::Matrix2cd r;
    const double c = std::cos(phi / 2), s = std::sin(phi / 2);
    r << c, -I1 * s, -I1 * s, c;
    return r;
}

}  // namespace detail

struct GkpConfig {
    PccParams pcc{1.0, 4.0, 0};
    double r = 1.4;
    int storage_dim = 120;
    double g = 0.02;
    std::string quadrature = "p";
    double phi = kPi / 2.0;
    double kappa_1 = 0.0;
    std::string pcc_basis = "auto";  ///< fock, eigen, or auto (eigen only when kappa_1 > 0)
    int pcc_levels = 12;
    double storage_tail = 1e-7;

    double T() const { return std::sqrt(kPi) / (g * pcc.beta() * std::sqrt(2.0)); }
    void validate() const {
        pcc.validate();
        if (!(pcc.beta() > 0.0)) throw ValidityError("gkp: beta must be positive");
        if (!(g > 0.0)) throw ValidityError("gkp: g must be positive");
        if (quadrature != "p" && quadrature != "q") throw ConfigError("gkp: quadrature must be p or q");
        if (kappa_1 < 0.0) throw ValidityError("gkp: kappa_1 must be non-negative");
        const double rel = std::abs(pcc.beta() * g * T() - std::sqrt(kPi / 2.0)) / std::sqrt(kPi / 2.0);
        if (rel > 1e-6) throw ValidityError("gkp: beta * int |g| dt differs from sqrt(pi/2)");
    }
};

inline GkpRoundReport gkp_ape_round(const GkpConfig& cfg, IntegratorOptions opt = {}) {
    cfg.validate();
    const PccRepresentation rep = pcc_representation(cfg.pcc, cfg.pcc_basis, cfg.pcc_levels, cfg.kappa_1 > 0.0);
    const int S = cfg.storage_dim;
    const int m = rep.dim;
    const QuantumState storage = gkp_state(cfg.r, S, cfg.storage_tail);
    const ModeLayout layout = ModeLayout::fock(S).concat(rep.layout());
    const Operator as = embed(layout, 0, annihilation(S));
    const Operator a = embed(layout, 1, rep.annihilation());

    EvolutionProblem p;
    p.layout = layout;
    p.add_h(embed(layout, 1, rep.hamiltonian()));
    if (cfg.quadrature == "p")
        p.add_h(cplx(0.0, cfg.g) * (as.adjoint() * a - as * a.adjoint()));
    else
        p.add_h(cfg.g * (as.adjoint() * a + as * a.adjoint()));
    p.add_collapse(a, cfg.kappa_1);
    p.tail_gates.push_back({0, cfg.storage_tail});
    p.tail_gates.push_back({1, rep.kind == "fock" ? 1e-9 : 1e-6});
    p.t0 = 0.0;
    p.t1 = cfg.T();
    p.sample_times = {cfg.T()};

    GkpRoundReport out;
    out.T = cfg.T();
    out.pcc_basis = rep.kind;
    out.pcc_levels = m;
    out.v0 = holevo_variance(storage);
    const QuantumState init = tensor({storage, QuantumState::pure(rep.layout(), rep.cat_plus)});
    const CMat R = rep.cat_span_unitary(detail::x_rotation(cfg.phi)).dense();
    if (cfg.kappa_1 == 0.0) {
        opt.retain_states = true;
        const Trajectory tr = evolve(p, init, opt);
        out.steps = tr.steps_accepted;
        detail::ape_measure(CMat(tr.states.back().psi), true, S, m, R, rep.cat_plus, rep.cat_minus, out);
    } else {
        std::vector<int> sector(layout.total_dim());
        for (int s = 0; s < S; ++s)
            for (int k = 0; k < m; ++k) sector[s * m + k] = (s + rep.parity[k]) % 2;
        const SectorTrajectory tr = evolve_sectors(p, init, sector, opt);
        out.steps = tr.steps_accepted;
        detail::ape_measure(tr.states.back(), false, S, m, R, rep.cat_plus, rep.cat_minus, out);
    }
    return out;
}

struct IdealQubitConfig {
    double g_q = 0.04;
    double gamma = 0.0;
    double r = 1.4;
    int storage_dim = 120;
    double phi = kPi / 2.0;
    double duration = 0.0;  ///< 0 selects T_ideal
    double storage_tail = 1e-7;

    double T_ideal() const { return std::sqrt(kPi / 2.0) / g_q; }
    double resolved_duration() const { return duration > 0.0 ? duration : T_ideal(); }
    void validate() const {
        if (g_q < 0.0 || gamma < 0.0) throw ValidityError("ideal qubit: g_q and gamma must be non-negative");
        if (g_q == 0.0 && duration <= 0.0) throw ValidityError("ideal qubit: g_q = 0 needs an explicit duration");
    }
};

/// Storage (x) two-level ancilla with H = i g_q (a^dag - a) sigma_x and optional D[sigma_-].
inline GkpRoundReport gkp_ideal_qubit_round(const IdealQubitConfig& cfg, IntegratorOptions opt = {}) {
    cfg.validate();
    const int S = cfg.storage_dim;
    const QuantumState storage = gkp_state(cfg.r, S, cfg.storage_tail);
    const ModeLayout layout = ModeLayout::fock(S).concat(ModeLayout::qubit());
    const Operator as = embed(layout, 0, annihilation(S));
    EvolutionProblem p;
    p.layout = layout;
    p.add_h(cplx(0.0, cfg.g_q) * (as.adjoint() - as) * embed(layout, 1, sigma_x()));
    p.add_collapse(embed(layout, 1, sigma_minus()), cfg.gamma);
    p.tail_gates.push_back({0, cfg.storage_tail});
    p.t0 = 0.0;
    p.t1 = cfg.resolved_duration();
    p.sample_times = {p.t1};
    opt.retain_states = true;

    GkpRoundReport out;
    out.T = p.t1;
    out.pcc_basis = "qubit";
    out.pcc_levels = 2;
    out.v0 = holevo_variance(storage);
    CVec up(2), down(2);
    up << 1, 0;
    down << 0, 1;
    const QuantumState init = tensor({storage, QuantumState::pure(ModeLayout::qubit(), up)});
    const Trajectory tr = evolve(p, init, opt);
    out.steps = tr.steps_accepted;
    const QuantumState& fin = tr.states.back();
    const CMat R = detail::x_rotation(cfg.phi);
    if (fin.is_pure())
        detail::ape_measure(CMat(fin.psi), true, S, 2, R, up, down, out);
    else
        detail::ape_measure(fin.rho, false, S, 2, R, up, down, out);
    return out;
}

struct GkpSweepPoint {
    double beta = 0.0;
    double dV_p_pcc = 0.0;
    double dV_p_ideal = 0.0;
    double dV_q_pcc = 0.0;
    double difference() const { return std::abs(dV_p_pcc - dV_p_ideal); }
};

inline std::vector<GkpSweepPoint> gkp_beta_sweep(const GkpConfig& base, const std::vector<double>& betas,
                                                 const IdealQubitConfig& ideal = {}, IntegratorOptions opt = {}) {
    IdealQubitConfig iq = ideal;
    iq.r = base.r;
    iq.storage_dim = base.storage_dim;
    iq.phi = base.phi;
    iq.gamma = 0.0;
    const double dvi = gkp_ideal_qubit_round(iq, opt).dV_p();
    std::vector<GkpSweepPoint> out;
    for (double b : betas) {
        GkpConfig c = base;
        c.pcc = PccParams::from_beta(b, base.pcc.K, 0);
        const GkpRoundReport r = gkp_ape_round(c, opt);
        out.push_back({b, r.dV_p(), dvi, r.dV_q()});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Readout

struct ReadoutConfig {
    PccParams pcc{1.0, 4.0, 0};
    double epsilon = 1.0 / 30.0;
    double kappa_1 = 0.0;
    double stage3_time = 5.0;
    double g = 0.0;  ///< 0 selects kappa_r / (2 beta)
    double kappa_r = 1.0 / 20.0;
    int dim_r = 16;
    double duration = 0.0;  ///< 0 selects 10 / kappa_r
    int samples = 101;
    std::string pcc_basis = "eigen";
    int pcc_levels = 12;

    double T_rot() const { return kPi / (8.0 * std::abs(epsilon) * pcc.beta()); }
    double kerr_free_time() const { return kPi / (2.0 * pcc.K); }
    double resolved_g() const { return g > 0.0 ? g : kappa_r / (2.0 * pcc.beta()); }
    double resolved_duration() const { return duration > 0.0 ? duration : 10.0 / kappa_r; }
    void validate() const {
        pcc.validate();
        if (!(pcc.beta() > 0.0)) throw ValidityError("readout: beta must be positive");
        if (epsilon == 0.0) throw ValidityError("readout: epsilon must be non-zero");
        if (!(kappa_r > 0.0)) throw ValidityError("readout: kappa_r must be positive");
        if (dim_r < 2) throw DimensionError("readout: dim_r must be >= 2");
        if (samples < 2) throw ValidityError("readout: samples must be >= 2");
        if (kappa_1 < 0.0 || stage3_time < 0.0) throw ValidityError("readout: negative rate or time");
    }
};

enum class CatLabel { Plus, Minus };

struct ReadoutSequence {
    std::vector<double> times;
    std::vector<double> overlap_series;  ///< with the final coherent target
    double overlap_stage1 = 0.0;         ///< with the ideal rotated cat superposition
    double overlap_stage2 = 0.0;         ///< with the coherent target
    double overlap_stage3 = 0.0;
    cplx target_amplitude = 0.0;         ///< coherent target +/- beta
    CVec final_state;
};

/// Ideal stage-1 image of |C+/-> under exp(-i sign(eps) (pi/4) sx~) in the (C+, C-) basis.
inline Eigen::Vector2cd readout_stage1_target(CatLabel init, double epsilon) {
    Eigen::Vector2cd v(init == CatLabel::Plus ? 1.0 : 0.0, init == CatLabel::Plus ? 0.0 : 1.0);
    return detail::x_rotation((epsilon > 0 ? 1.0 : -1.0) * kPi / 2.0) * v;
}

inline ReadoutSequence readout_rotation_sequence(const ReadoutConfig& cfg, CatLabel init,
                                                 IntegratorOptions opt = {}) {
    cfg.validate();
    const double beta = cfg.pcc.beta();
    const Operator h = pcc_hamiltonian(cfg.pcc);
    const int d = h.dim();
    const CatBasis basis = cat_basis(beta, d);
    const Operator a = annihilation(d);
    const Operator n = number(d);
    opt.retain_states = true;

    const Eigen::Vector2cd t1 = readout_stage1_target(init, cfg.epsilon);
    const CVec target1 = t1(0) * basis.cat_plus + t1(1) * basis.cat_minus;
    // Kerr-only evolution for pi/(2K) multiplies odd Fock levels by i.
    const CVec target2 = t1(0) * basis.cat_plus + I1 * t1(1) * basis.cat_minus;
    const double sgn = std::abs(coherent_coefficients(d, beta).dot(target2)) > 0.5 ? 1.0 : -1.0;
    ReadoutSequence out;
    out.target_amplitude = sgn * beta;
    const CVec coh = coherent_coefficients(d, out.target_amplitude);

    auto stage = [&](EvolutionProblem p, const QuantumState& s0, double t0, double dur) {
        p.layout = h.layout;
        p.add_collapse(a, cfg.kappa_1);
        p.gate_all_fock(1e-9);
        p.t0 = t0;
        p.t1 = t0 + dur;
        p.sample_times = linspace(t0, t0 + dur, 11);
        Trajectory tr = evolve(p, s0, opt);
        for (std::size_t i = 0; i < tr.states.size(); ++i) {
            out.times.push_back(tr.sample_times[i]);
            out.overlap_series.push_back(tr.states[i].overlap(coh));
        }
        return tr.states.back();
    };

    EvolutionProblem p1;
    p1.add_h(h);
    p1.add_h(cfg.epsilon * (a + a.adjoint()));
    const QuantumState s1 =
        stage(p1, QuantumState::pure(h.layout, init == CatLabel::Plus ? basis.cat_plus : basis.cat_minus), 0.0,
              cfg.T_rot());
    out.overlap_stage1 = s1.overlap(target1);

    EvolutionProblem p2;
    p2.add_h(-cfg.pcc.K * (a.adjoint() * a.adjoint() * a * a) - cfg.pcc.K * n);
    const QuantumState s2 = stage(p2, s1, cfg.T_rot(), cfg.kerr_free_time());
    out.overlap_stage2 = s2.overlap(coh);

    EvolutionProblem p3;
    p3.add_h(h);
    const QuantumState s3 = stage(p3, s2, cfg.T_rot() + cfg.kerr_free_time(), cfg.stage3_time);
    out.overlap_stage3 = s3.overlap(coh);
    out.final_state = s3.is_pure() ? s3.psi : CVec(Eigen::SelfAdjointEigenSolver<CMat>(s3.rho).eigenvectors().col(d - 1));
    return out;
}

struct KerrJumpReport {
    double theta = 0.0;
    double c_span_overlap = 0.0;
    double rotated_cat_overlap = 0.0;  ///< with the cat pair rotated by theta
    CVec state;
};

/// A single photon loss at time t_j of the Kerr-only stage, starting from the ideal stage-1 state.
inline KerrJumpReport kerr_jump_error_state(const ReadoutConfig& cfg, CatLabel init, double t_j) {
    cfg.validate();
    const double beta = cfg.pcc.beta();
    const int d = cfg.pcc.resolved_dim() + 10;
    const CatBasis basis = cat_basis(beta, d);
    const double K = cfg.pcc.K;
    const double T = cfg.kerr_free_time();
    if (t_j < 0.0 || t_j > T) throw ValidityError("kerr jump time outside the Kerr-only stage");
    const Eigen::Vector2cd t1 = readout_stage1_target(init, cfg.epsilon);
    CVec psi = t1(0) * basis.cat_plus + t1(1) * basis.cat_minus;
    auto kerr = [&](CVec v, double t) {
        for (int n = 0; n < d; ++n) v(n) *= std::exp(I1 * K * double(n) * double(n) * t);
        return v;
    };
    psi = kerr(psi, t_j);
    psi = CVec(annihilation_matrix(d) * psi);
    psi = kerr(psi, T - t_j);
    psi.normalize();
    KerrJumpReport r;
    r.theta = 2.0 * t_j * K;
    r.c_span_overlap = std::norm(basis.cat_plus.dot(psi)) + std::norm(basis.cat_minus.dot(psi));
    const cplx rb = beta * std::exp(I1 * r.theta);
    const CVec rp = cat_vector(d, rb, true), rm = cat_vector(d, rb, false);
    r.rotated_cat_overlap = std::norm(rp.dot(psi)) + std::norm(rm.dot(psi));
    r.state = psi;
    return r;
}

struct QSwitchReport {
    std::vector<double> times;
    std::vector<cplx> a_r;
    std::vector<cplx> ideal;
    std::vector<double> i_quadrature;
    std::vector<double> i_quadrature_ideal;
    double max_deviation = 0.0;  ///< normalized by 2 g beta / kappa_r
    double steady_amplitude = 0.0;  ///< |<a_r>| at the horizon, normalized
    double r_ideal = 0.0;
    double g = 0.0;
    std::string pcc_basis;
    long steps = 0;
};

/// PCC (x) low-Q readout cavity under exchange coupling; `init` Plus means x_plus.
inline QSwitchReport q_switch_experiment(const ReadoutConfig& cfg, CatLabel init, IntegratorOptions opt = {}) {
    cfg.validate();
    const double beta = cfg.pcc.beta();
    const double g = cfg.resolved_g();
    const PccRepresentation rep = pcc_representation(cfg.pcc, cfg.pcc_basis, cfg.pcc_levels, true);
    const int dr = cfg.dim_r;
    const ModeLayout layout = rep.layout().concat(ModeLayout::fock(dr));
    const Operator a = embed(layout, 0, rep.annihilation());
    const Operator ar = embed(layout, 1, annihilation(dr));

    EvolutionProblem p;
    p.layout = layout;
    p.add_h(embed(layout, 0, rep.hamiltonian()));
    p.add_h(g * (a.adjoint() * ar + a * ar.adjoint()));
    p.add_collapse(ar, cfg.kappa_r);
    p.add_collapse(a, cfg.kappa_1);
    p.tail_gates.push_back({0, rep.kind == "fock" ? 1e-9 : 1e-6});
    p.tail_gates.push_back({1, 1e-9});
    p.t0 = 0.0;
    p.t1 = cfg.resolved_duration();
    p.sample_times = linspace(0.0, p.t1, cfg.samples);
    p.observe("a_r", ar);

    const double sign = init == CatLabel::Plus ? 1.0 : -1.0;
    const CVec x = (rep.cat_plus + sign * rep.cat_minus) / std::sqrt(2.0);
    const QuantumState rho0 = tensor({QuantumState::pure(rep.layout(), x), QuantumState::pure(ModeLayout::fock(dr), fock_vector(dr, 0))});
    const Trajectory tr = evolve(p, rho0, opt);

    QSwitchReport out;
    out.times = tr.sample_times;
    out.g = g;
    out.pcc_basis = rep.kind;
    out.steps = tr.steps_accepted;
    out.r_ideal = 8.0 * g * g * beta * beta / cfg.kappa_r;
    const double scale = 2.0 * g * beta / cfg.kappa_r;
    out.a_r = tr.observables.at("a_r");
    for (std::size_t i = 0; i < out.times.size(); ++i) {
        const cplx id = -sign * I1 * scale * (1.0 - std::exp(-cfg.kappa_r * out.times[i] / 2.0));
        out.ideal.push_back(id);
        out.i_quadrature.push_back(out.a_r[i].imag());
        out.i_quadrature_ideal.push_back(id.imag());
        out.max_deviation = std::max(out.max_deviation, std::abs(out.a_r[i] - id) / scale);
    }
    out.steady_amplitude = std::abs(out.a_r.back()) / scale;
    return out;
}

}  // namespace catsyn
