#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "protocols.hpp"
#include "result.hpp"
#include "verify.hpp"

namespace catsyn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFail = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

using Params = std::map<std::string, ParamValue>;

struct Field {
    std::string name;
    ParamValue def;
    std::string doc;
    std::vector<std::string> choices;  ///< allowed values for string fields; empty = free text
};

/// Resolved parameters with typed access.
class Config {
public:
    explicit Config(Params p) : p_(std::move(p)) {}

    double num(const std::string& k) const {
        const ParamValue& v = at(k);
        if (!std::holds_alternative<double>(v)) throw ConfigError("field '" + k + "' is not numeric");
        return std::get<double>(v);
    }
    int integer(const std::string& k) const {
        const double v = num(k);
        if (v != std::floor(v) || std::abs(v) > 1e9) throw ConfigError("field '" + k + "' must be an integer");
        return int(v);
    }
    bool flag(const std::string& k) const { return num(k) != 0.0; }
    const std::string& str(const std::string& k) const {
        const ParamValue& v = at(k);
        if (!std::holds_alternative<std::string>(v)) throw ConfigError("field '" + k + "' is not a string");
        return std::get<std::string>(v);
    }
    /// Comma-separated list of numbers.
    std::vector<double> list(const std::string& k) const {
        std::vector<double> out;
        std::stringstream ss(str(k));
        std::string item;
        while (std::getline(ss, item, ',')) {
            double x = 0.0;
            const char* b = item.data();
            while (*b == ' ') ++b;
            const auto [ptr, ec] = std::from_chars(b, item.data() + item.size(), x);
            if (ec != std::errc() || ptr != item.data() + item.size())
                throw ConfigError("field '" + k + "': '" + item + "' is not a number");
            out.push_back(x);
        }
        if (out.empty()) throw ConfigError("field '" + k + "' needs at least one value");
        return out;
    }
    IntegratorOptions integrator() const {
        IntegratorOptions o;
        o.rtol = num("integrator.rtol");
        o.atol = num("integrator.atol");
        if (!(o.rtol > 0.0 && o.atol > 0.0)) throw ConfigError("integrator tolerances must be positive");
        return o;
    }
    const Params& all() const { return p_; }

private:
    const ParamValue& at(const std::string& k) const {
        auto it = p_.find(k);
        if (it == p_.end()) throw ConfigError("internal: no field '" + k + "'");
        return it->second;
    }
    Params p_;
};

struct Experiment {
    std::string id;
    std::string description;
    std::string figure;
    std::vector<Field> fields;
    std::function<ExperimentResult(const Config&)> run;
};

// ---------------------------------------------------------------------------
// Field helpers

namespace detail {

inline Field num(std::string n, double v, std::string doc) { return {std::move(n), v, std::move(doc), {}}; }
inline Field text(std::string n, std::string v, std::string doc, std::vector<std::string> choices = {}) {
    return {std::move(n), std::move(v), std::move(doc), std::move(choices)};
}

inline std::vector<Field> pcc_fields(double beta) {
    return {num("K", 1.0, "Kerr nonlinearity (sets the unit of energy)"),
            num("beta", beta, "cat amplitude; the pump is P = K beta^2"),
            num("pcc_dim", 0, "PCC Fock truncation, 0 = ceil(beta^2 + 7 beta + 12)")};
}

inline PccParams pcc_from(const Config& c) {
    const double beta = c.num("beta"), K = c.num("K");
    if (beta < 0.0) throw ConfigError("field 'beta' must be non-negative");
    if (!(K > 0.0)) throw ConfigError("field 'K' must be positive");
    const int dim = c.integer("pcc_dim");
    if (dim != 0 && dim < 3) throw ConfigError("field 'pcc_dim' must be 0 or >= 3");
    return PccParams::from_beta(beta, K, dim);
}

inline void echo_pcc(ExperimentResult& r, const PccParams& p) {
    r.summary["P"] = p.P;
    r.summary["pcc_dim_resolved"] = p.resolved_dim();
}

inline Parity parity_from(const Config& c) { return parse_parity(c.str("parity")); }

inline void put_outcome(ExperimentResult& r, const SyndromeOutcome& o) {
    r.time_grid = o.times;
    r.series["p_pcc_flip"] = o.flip_series;
    r.series["p_pcc_stay"] = o.stay_series;
    r.series["p_data_intact"] = o.intact_series;
    r.summary["p_pcc_flip_at_T"] = o.p_pcc_flip;
    r.summary["p_pcc_stay_at_T"] = o.p_pcc_stay;
    r.summary["p_syndrome"] = o.p_syndrome;
    r.summary["p_data_intact"] = o.p_data_intact;
    r.summary["leakage"] = o.leakage;
    r.summary["expect_flip"] = o.expect_flip ? 1.0 : 0.0;
    r.summary["steps"] = double(o.steps);
}

inline void put_gkp(ExperimentResult& r, const GkpRoundReport& g) {
    r.summary["V0_q"] = g.v0.V_q;
    r.summary["V0_p"] = g.v0.V_p;
    r.summary["Vprime_q"] = g.v_prime.V_q;
    r.summary["Vprime_p"] = g.v_prime.V_p;
    r.summary["Vm_q"] = g.v_m.V_q;
    r.summary["Vm_p"] = g.v_m.V_p;
    r.summary["dV_q"] = g.dV_q();
    r.summary["dV_p"] = g.dV_p();
    r.summary["dVm_q"] = g.v_m.V_q - g.v0.V_q;
    r.summary["dVm_p"] = g.v_m.V_p - g.v0.V_p;
    r.summary["p_plus"] = g.p_plus;
    r.summary["p_minus"] = g.p_minus;
    r.summary["leakage"] = g.leakage;
    r.summary["T"] = g.T;
    r.summary["pcc_levels_used"] = g.pcc_levels;
    r.summary["steps"] = double(g.steps);
    r.warnings.insert(r.warnings.end(), g.warnings.begin(), g.warnings.end());
    if (g.pcc_basis != "fock") r.warnings.push_back("PCC truncated to its " + std::to_string(g.pcc_levels) +
                                                    " highest eigenstates (" + g.pcc_basis + " basis)");
}

inline CatLabel label_from(const std::string& s) {
    if (s == "c_plus" || s == "x_plus") return CatLabel::Plus;
    return CatLabel::Minus;
}

// ---------------------------------------------------------------------------
// Experiment bodies

inline ExperimentResult toric_z(const Config& c) {
    ToricConfig t;
    t.pcc = pcc_from(c);
    t.chi0 = c.num("chi0");
    t.shape = c.str("shape");
    t.kappa_1 = c.num("kappa");
    t.parity_init = parity_from(c);
    t.compensation = c.flag("compensation");
    t.n_qubits = c.integer("n_qubits");
    t.samples = c.integer("samples");
    ExperimentResult r;
    put_outcome(r, toric_z_experiment(t, c.integrator()));
    echo_pcc(r, t.pcc);
    r.summary["T"] = t.T();
    return r;
}

inline ExperimentResult toric_x(const Config& c) {
    ToricConfig t;
    t.pcc = pcc_from(c);
    t.chi0 = c.num("chi0");
    t.n_qubits = c.integer("n_qubits");
    const ToricXReduction x = toric_x_hamiltonian(t);
    ExperimentResult r;
    echo_pcc(r, t.pcc);
    r.summary["reduction_error"] = x.reduction_error;
    r.summary["weight_x"] = x.weight_x;
    r.summary["weight_y"] = x.weight_y;
    r.summary["asymmetry"] = x.asymmetry();
    return r;
}

inline ExperimentResult cat_parity(const Config& c) {
    CatCodeConfig k;
    k.pcc = pcc_from(c);
    k.alpha = c.num("alpha");
    k.storage_dim = c.integer("storage_dim");
    k.chi0 = c.num("chi0");
    k.shape = c.str("shape");
    k.kappa_1 = c.num("kappa");
    k.parity_init = parity_from(c);
    k.mean_photon_compensation = c.flag("compensation");
    k.mean_photon_source = c.str("mean_photon_source");
    k.storage_init = c.str("storage_init");
    k.samples = c.integer("samples");
    ExperimentResult r;
    put_outcome(r, cat_parity_experiment(k, c.integrator()));
    echo_pcc(r, k.pcc);
    r.summary["T"] = k.T();
    r.summary["storage_dim_resolved"] = k.resolved_storage_dim();
    r.summary["mean_photon_used"] = cat_parity_mean_photon(k, cat_parity_initial_storage(k));
    return r;
}

inline GkpConfig gkp_from(const Config& c) {
    GkpConfig g;
    g.pcc = pcc_from(c);
    g.r = c.num("r");
    g.storage_dim = c.integer("storage_dim");
    g.g = c.num("g");
    g.quadrature = c.str("quadrature");
    g.phi = c.num("phi");
    g.pcc_basis = c.str("pcc_basis");
    g.pcc_levels = c.integer("pcc_levels");
    g.storage_tail = c.num("storage_tail");
    return g;
}

inline ExperimentResult gkp_round(const Config& c) {
    GkpConfig g = gkp_from(c);
    const double kt = c.num("kappa_T");
    if (kt < 0.0) throw ConfigError("field 'kappa_T' must be non-negative");
    g.kappa_1 = kt / g.T();
    ExperimentResult r;
    put_gkp(r, gkp_ape_round(g, c.integrator()));
    echo_pcc(r, g.pcc);
    r.summary["kappa"] = g.kappa_1;
    return r;
}

inline IdealQubitConfig ideal_from(const Config& c) {
    IdealQubitConfig q;
    q.g_q = c.num("g_q");
    q.r = c.num("r");
    q.storage_dim = c.integer("storage_dim");
    q.phi = c.num("phi");
    q.storage_tail = c.num("storage_tail");
    return q;
}

inline ExperimentResult gkp_sweep(const Config& c) {
    GkpConfig g = gkp_from(c);
    IdealQubitConfig q = ideal_from(c);
    const auto betas = c.list("betas");
    const auto pts = gkp_beta_sweep(g, betas, q, c.integrator());
    ExperimentResult r;
    r.grid_axis = "beta";
    for (const auto& p : pts) {
        r.time_grid.push_back(p.beta);
        r.series["dV_p_pcc"].push_back(p.dV_p_pcc);
        r.series["dV_p_ideal"].push_back(p.dV_p_ideal);
        r.series["dV_q_pcc"].push_back(p.dV_q_pcc);
        r.series["difference"].push_back(p.difference());
    }
    bool shrinking = true;
    for (std::size_t i = 1; i < pts.size(); ++i) shrinking = shrinking && pts[i].difference() < pts[i - 1].difference();
    r.summary["difference_shrinking"] = shrinking ? 1.0 : 0.0;
    r.summary["dV_p_ideal"] = pts.empty() ? 0.0 : pts.front().dV_p_ideal;
    return r;
}

inline ExperimentResult gkp_ideal(const Config& c) {
    IdealQubitConfig q = ideal_from(c);
    q.duration = c.num("duration");
    const double gt = c.num("gamma_T");
    if (gt < 0.0) throw ConfigError("field 'gamma_T' must be non-negative");
    q.gamma = gt / q.resolved_duration();
    ExperimentResult r;
    put_gkp(r, gkp_ideal_qubit_round(q, c.integrator()));
    r.summary["gamma"] = q.gamma;
    r.summary["T_ideal"] = q.T_ideal();
    return r;
}

inline ExperimentResult gap(const Config& c) {
    const PccParams p = pcc_from(c);
    const double bmax = c.num("beta_max");
    const int n = c.integer("points");
    if (n < 2 || bmax <= 0.0) throw ConfigError("fields 'points' (>= 2) and 'beta_max' (> 0) out of range");
    ExperimentResult r;
    r.grid_axis = "beta";
    for (double b : linspace(0.0, bmax, n)) {
        r.time_grid.push_back(b);
        r.series["gap"].push_back(energy_gap(PccParams::from_beta(b, p.K)));
        r.series["gap_approx"].push_back(4.0 * p.K * b * b);
    }
    const double g = energy_gap(p);
    r.summary["gap"] = g;
    if (p.P > 0.0) r.summary["gap_ratio"] = g / (4.0 * p.P);
    echo_pcc(r, p);
    return r;
}

inline ExperimentResult loss_compare(const Config& c) {
    const PccParams p = pcc_from(c);
    NoiseSpec n;
    n.kappa_1 = c.num("kappa");
    n.n_th = c.num("n_th");
    if (!(n.kappa_1 > 0.0)) throw ConfigError("field 'kappa' must be positive");
    const std::vector<double> t = linspace(0.0, c.num("kappa_t_max") / n.kappa_1, c.integer("samples"));
    const IntegratorOptions o = c.integrator();
    const CatBasis basis = cat_basis(p.beta(), p.resolved_dim());
    const FlipSeries eff = effective_flip_series(basis, n, t, o);
    const FlipSeries fock = fock_flip_series(p, n, t, o);
    ExperimentResult r;
    r.time_grid = t;
    r.series["eff_p_bit_flip"] = eff.bit_flip;
    r.series["eff_p_phase_flip"] = eff.phase_flip;
    r.series["fock_p_bit_flip"] = fock.bit_flip;
    r.series["fock_p_phase_flip"] = fock.phase_flip;
    r.summary["max_abs_gap_bit"] = max_abs_gap(eff.bit_flip, fock.bit_flip);
    r.summary["max_abs_gap_phase"] = max_abs_gap(eff.phase_flip, fock.phase_flip);
    r.summary["eff_phase_flip_final"] = eff.phase_flip.back();
    r.summary["eff_bit_flip_final"] = eff.bit_flip.back();
    echo_pcc(r, p);
    return r;
}

inline BathCavitySpec bath_from(const Config& c) {
    BathCavitySpec b;
    b.g = c.num("g");
    b.kappa_bc = c.num("kappa_bc");
    b.n_bc = c.num("n_bc");
    b.dim_bc = c.integer("dim_bc");
    return b;
}

inline ExperimentResult thermal_bath(const Config& c) {
    const PccParams p = pcc_from(c);
    const std::string ch = c.str("channel");
    const BathChannel channel = ch == "loss" ? BathChannel::Loss : ch == "gain" ? BathChannel::Gain : BathChannel::Dephasing;
    const CatInit init = c.str("init") == "cat_plus" ? CatInit::CatPlus : CatInit::XPlus;
    const std::vector<double> t = linspace(0.0, c.num("t_max"), c.integer("samples"));
    ExperimentResult r = bath_emulation_experiment(p, bath_from(c), channel, init, t, c.integrator());
    echo_pcc(r, p);
    return r;
}

inline ExperimentResult phase_diffusion(const Config& c, DiffusionProtocol proto) {
    const PccParams p = pcc_from(c);
    const auto ratios = c.list("chi_ratios");
    ToricConfig t = toric_diffusion_defaults();
    CatCodeConfig k;
    t.pcc = k.pcc = p;
    t.parity_init = k.parity_init = parity_from(c);
    if (proto == DiffusionProtocol::CatParity) {
        k.alpha = c.num("alpha");
        k.storage_dim = c.integer("storage_dim");
    }
    const auto rep = phase_diffusion_experiment(proto, c.str("shape"), ratios, t, k, c.integrator());
    ExperimentResult r;
    r.grid_axis = "chi_ratio";
    std::vector<double> x, e;
    for (const auto& q : rep) {
        r.time_grid.push_back(q.chi_ratio);
        r.series["chi_peak"].push_back(q.chi_peak);
        r.series["chi0"].push_back(q.chi0);
        r.series["E_numeric"].push_back(q.E_numeric);
        r.series["E_theory"].push_back(q.E_theory);
        if (q.E_numeric > 0.0) {
            x.push_back(q.chi_peak);
            e.push_back(q.E_numeric);
        }
    }
    if (x.size() >= 2) r.summary["loglog_slope"] = loglog_slope(x, e);
    r.summary["E_numeric_max"] = *std::max_element(r.series["E_numeric"].begin(), r.series["E_numeric"].end());
    r.summary["gap"] = energy_gap(p);
    echo_pcc(r, p);
    return r;
}

inline ExperimentResult two_photon(const Config& c) {
    const PccParams p = pcc_from(c);
    const CatInit init = c.str("init") == "cat_plus" ? CatInit::CatPlus : CatInit::XPlus;
    const std::vector<double> t = linspace(0.0, c.num("t_max"), c.integer("samples"));
    const IntegratorOptions o = c.integrator();
    const BathCavitySpec b = bath_from(c);
    ExperimentResult r = two_photon_autocorrect_experiment(p, b, c.num("kappa_2ph"), init, t, o);
    if (c.flag("compare_without")) {
        const ExperimentResult z = two_photon_autocorrect_experiment(p, b, 0.0, init, t, o);
        r.series["leakage_without"] = z.series.at("leakage");
        r.summary["final_leakage_without"] = z.summary.at("final_leakage");
    }
    echo_pcc(r, p);
    return r;
}

inline ExperimentResult dephasing(const Config& c) {
    const PccParams p = pcc_from(c);
    NoiseSpec n;
    n.kappa_phi = c.num("kappa_phi");
    if (!(n.kappa_phi > 0.0)) throw ConfigError("field 'kappa_phi' must be positive");
    const std::vector<double> t = linspace(0.0, c.num("kappa_t_max") / n.kappa_phi, c.integer("samples"));
    const FlipSeries eff = effective_flip_series(cat_basis(p.beta(), p.resolved_dim()), n, t, c.integrator());
    ExperimentResult r;
    r.time_grid = t;
    r.series["eff_p_phase_flip"] = eff.phase_flip;
    r.series["eff_p_bit_flip"] = eff.bit_flip;
    auto it = std::lower_bound(t.begin(), t.end(), 1.0 / n.kappa_phi - 1e-9);
    if (it != t.end()) r.summary["phase_flip_at_inv_kappa_phi"] = eff.phase_flip[std::size_t(it - t.begin())];
    r.summary["phase_flip_final"] = eff.phase_flip.back();
    echo_pcc(r, p);
    return r;
}

inline ReadoutConfig readout_from(const Config& c) {
    ReadoutConfig r;
    r.pcc = pcc_from(c);
    r.epsilon = c.num("epsilon");
    r.kappa_1 = c.num("kappa");
    return r;
}

inline ExperimentResult qswitch(const Config& c) {
    ReadoutConfig q = readout_from(c);
    q.g = c.num("g");
    q.kappa_r = c.num("kappa_r");
    q.dim_r = c.integer("dim_r");
    q.duration = c.num("duration");
    q.samples = c.integer("samples");
    q.pcc_basis = c.str("pcc_basis");
    q.pcc_levels = c.integer("pcc_levels");
    const QSwitchReport s = q_switch_experiment(q, label_from(c.str("init")), c.integrator());
    ExperimentResult r;
    r.time_grid = s.times;
    r.complex_series["a_r"] = s.a_r;
    r.complex_series["a_r_ideal"] = s.ideal;
    r.series["i_quadrature"] = s.i_quadrature;
    r.series["i_quadrature_ideal"] = s.i_quadrature_ideal;
    r.summary["max_deviation"] = s.max_deviation;
    r.summary["steady_amplitude"] = s.steady_amplitude;
    r.summary["R_ideal"] = s.r_ideal;
    r.summary["g_used"] = s.g;
    r.summary["duration_used"] = q.resolved_duration();
    r.summary["steps"] = double(s.steps);
    if (s.pcc_basis != "fock") r.warnings.push_back("PCC truncated to its highest eigenstates (eigen basis)");
    echo_pcc(r, q.pcc);
    return r;
}

inline ExperimentResult readout(const Config& c) {
    ReadoutConfig q = readout_from(c);
    q.stage3_time = c.num("stage3_time");
    const ReadoutSequence s = readout_rotation_sequence(q, label_from(c.str("init")), c.integrator());
    ExperimentResult r;
    r.time_grid = s.times;
    r.series["overlap_target"] = s.overlap_series;
    r.summary["overlap_stage1"] = s.overlap_stage1;
    r.summary["overlap_stage2"] = s.overlap_stage2;
    r.summary["overlap_stage3"] = s.overlap_stage3;
    r.summary["target_amplitude"] = s.target_amplitude.real();
    r.summary["T_rot"] = q.T_rot();
    echo_pcc(r, q.pcc);
    return r;
}

inline ExperimentResult kerr_jump(const Config& c) {
    ReadoutConfig q = readout_from(c);
    const KerrJumpReport k = kerr_jump_error_state(q, label_from(c.str("init")), c.num("t_jump"));
    ExperimentResult r;
    r.summary["theta"] = k.theta;
    r.summary["c_span_overlap"] = k.c_span_overlap;
    r.summary["rotated_cat_overlap"] = k.rotated_cat_overlap;
    echo_pcc(r, q.pcc);
    return r;
}

inline ExperimentResult table1(const Config& c) {
    const PccParams p = pcc_from(c);
    const CatBasis basis = cat_basis(p.beta(), p.resolved_dim());
    ExperimentResult r;
    const std::pair<NoiseType, const char*> types[] = {{NoiseType::Loss, "loss"},
                                                       {NoiseType::Gain, "gain"},
                                                       {NoiseType::Dephasing, "dephasing"},
                                                       {NoiseType::TwoPhotonLoss, "two_photon_loss"}};
    for (const auto& [t, name] : types) {
        const EffectiveChannel ch = effective_jump(t, basis);
        const Eigen::Matrix2cd m = ch.matrix();
        const char* idx[4] = {"00", "01", "10", "11"};
        for (int k = 0; k < 4; ++k) {
            r.summary[std::string(name) + "_re" + idx[k]] = m(k / 2, k % 2).real();
            r.summary[std::string(name) + "_im" + idx[k]] = m(k / 2, k % 2).imag();
        }
        r.summary[std::string(name) + "_rate_prefactor"] = ch.rate_prefactor;
    }
    const Eigen::Matrix2cd loss = effective_jump(NoiseType::Loss, basis).matrix();
    const Eigen::Matrix2cd gain = effective_jump(NoiseType::Gain, basis).matrix();
    r.summary["loss_gain_adjoint_defect"] = (loss.adjoint() - gain).cwiseAbs().maxCoeff();
    // loss jump compressed from the Fock operator
    const auto [ac, adc] = projected_ops(basis);
    r.summary["loss_vs_projected_defect"] = (ac.dense() - basis.embed(loss).dense()).cwiseAbs().maxCoeff();
    r.summary["p"] = basis.p;
    r.summary["y_weight_over_exp"] = basis.beta > 0 ? (1.0 / basis.p - basis.p) / 2.0 / std::exp(-2.0 * p.beta() * p.beta()) : 0.0;
    const CatBasis z = cat_basis(0.0, 12);
    Eigen::Matrix2cd sm, deph;
    sm << 0, 1, 0, 0;
    deph << 0, 0, 0, 1;
    r.summary["beta0_loss_defect"] = (effective_jump(NoiseType::Loss, z).matrix() - sm).cwiseAbs().maxCoeff();
    r.summary["beta0_dephasing_defect"] = (effective_jump(NoiseType::Dephasing, z).matrix() - deph).cwiseAbs().maxCoeff();
    echo_pcc(r, p);
    return r;
}

inline ExperimentResult majority(const Config& c) {
    ExperimentResult r;
    const int n = c.integer("n_repeats");
    r.summary["p_majority"] = majority_vote(c.num("p_single"), n);
    return r;
}

inline ExperimentResult gain_two_photon(const Config& c) {
    const double beta = c.num("beta");
    const GainTwoPhotonDecomposition d = gain_then_two_photon(beta, c.integer("fock_dim"));
    ExperimentResult r;
    r.summary["in_span_coeff"] = d.in_span_coeff;
    r.summary["out_of_span_coeff"] = d.out_of_span_coeff;
    r.summary["residual"] = d.residual;
    r.summary["fraction"] = d.fraction();
    r.summary["one_over_beta"] = 1.0 / beta;
    return r;
}

inline std::vector<Field> with(std::vector<Field> a, const std::vector<Field>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

inline const std::vector<std::string> kParities = {"odd", "even"};
inline const std::vector<std::string> kShapes = {"sine", "gaussian"};

}  // namespace detail

// ---------------------------------------------------------------------------
// Registry

inline const std::vector<Experiment>& registry() {
    using detail::num;
    using detail::text;
    using detail::with;
    static const std::vector<Experiment> list = [] {
        const std::vector<Field> gkp_common = {
            num("r", 1.4, "GKP squeezing"),
            num("storage_dim", 120, "storage Fock truncation"),
            num("g", 0.02, "storage-PCC exchange coupling"),
            text("quadrature", "p", "stabilizer to estimate", {"p", "q"}),
            num("phi", kPi / 2.0, "X rotation of the PCC before measurement"),
            text("pcc_basis", "auto", "PCC basis: fock, eigen, or auto (eigen only when lossy)", {"auto", "fock", "eigen"}),
            num("pcc_levels", 12, "kept PCC eigenstates in the eigen basis"),
            num("storage_tail", 1e-7, "storage truncation gate")};
        std::vector<Experiment> v = {
            {"fig2-toric-z", "toric-code Z stabilizer mapped onto the PCC", "Fig. 2",
             with(detail::pcc_fields(2.0),
                  {num("chi0", 1.0 / 20.0, "pulse amplitude parameter"),
                   text("shape", "sine", "pulse envelope", detail::kShapes),
                   num("kappa", 0.0, "PCC single-photon loss rate"),
                   text("parity", "odd", "data-qubit parity", detail::kParities),
                   num("compensation", 1, "apply the -2 beta counter-drive (1/0)"),
                   num("n_qubits", 4, "number of data qubits"), num("samples", 41, "output samples")}),
             detail::toric_z},
            {"toric-x-reduction", "JC-coupled X stabilizer projected onto the cat span", "-",
             with(detail::pcc_fields(2.0),
                  {num("chi0", 1.0 / 20.0, "JC coupling"), num("n_qubits", 4, "number of data qubits")}),
             detail::toric_x},
            {"fig3-cat-parity", "cat-code photon-parity stabilizer mapped onto the PCC", "Fig. 3",
             with(detail::pcc_fields(2.0),
                  {num("alpha", 2.0, "storage cat amplitude"),
                   num("storage_dim", 0, "storage truncation, 0 = ceil(alpha^2 + 7 alpha + 12)"),
                   num("chi0", 1.0 / 15.0, "pulse amplitude parameter"),
                   text("shape", "sine", "pulse envelope", detail::kShapes),
                   num("kappa", 0.0, "PCC single-photon loss rate"),
                   text("parity", "odd", "storage parity", detail::kParities),
                   num("compensation", 1, "apply the mean-photon counter-drive (1/0)"),
                   text("mean_photon_source", "alpha2", "counter-drive photon number", {"alpha2", "state"}),
                   text("storage_init", "cat", "initial storage state", {"cat", "fock0"}),
                   num("samples", 41, "output samples")}),
             detail::cat_parity},
            {"fig5-gkp-round", "one APE round on a GKP storage state", "Figs. 4-5",
             with(with(detail::pcc_fields(2.0), gkp_common), {num("kappa_T", 0.0, "PCC loss times round duration")}),
             detail::gkp_round},
            {"fig5-gkp-sweep", "APE variance change versus cat size against the ideal-qubit baseline", "Fig. 5",
             with(with(detail::pcc_fields(2.0), gkp_common),
                  {text("betas", "1,1.5,2,2.5", "cat amplitudes to sweep"),
                   num("g_q", 0.04, "ideal-qubit coupling for the baseline")}),
             detail::gkp_sweep},
            {"gkp-ideal-qubit", "APE round with an ideal two-level ancilla and optional relaxation", "-",
             {num("g_q", 0.04, "qubit-storage coupling"), num("gamma_T", 0.0, "relaxation rate times duration"),
              num("r", 1.4, "GKP squeezing"), num("storage_dim", 120, "storage Fock truncation"),
              num("phi", kPi / 2.0, "X rotation before measurement"),
              num("duration", 0.0, "interaction time, 0 = sqrt(pi/2)/g_q"),
              num("storage_tail", 1e-7, "storage truncation gate")},
             detail::gkp_ideal},
            {"fig6-gap", "energy gap of the PCC Hamiltonian versus beta", "Fig. 6",
             with(detail::pcc_fields(2.0),
                  {num("beta_max", 3.0, "upper end of the beta sweep"), num("points", 31, "sweep points")}),
             detail::gap},
            {"fig7-loss-compare", "effective two-level ME against the full Fock ME under loss", "Fig. 7",
             with(detail::pcc_fields(2.0),
                  {num("kappa", 0.01, "single-photon loss rate"), num("n_th", 0.0, "thermal occupation"),
                   num("kappa_t_max", 2.0, "horizon in units of 1/kappa"), num("samples", 41, "output samples")}),
             detail::loss_compare},
            {"fig8-thermal-bath", "PCC coupled to a lossy emulation cavity against the effective ME", "Fig. 8",
             with(detail::pcc_fields(1.0),
                  {num("g", 0.05, "PCC-bath exchange coupling"), num("kappa_bc", 2.0, "bath cavity linewidth"),
                   num("n_bc", 0.1, "bath thermal occupation"), num("dim_bc", 8, "bath Fock truncation"),
                   text("channel", "loss", "coupling type", {"loss", "gain", "dephasing"}),
                   text("init", "cat_plus", "PCC initial state", {"cat_plus", "x_plus"}),
                   num("t_max", 200.0, "horizon"), num("samples", 41, "output samples")}),
             detail::thermal_bath},
            {"fig9-phase-diffusion-toric", "data phase diffusion versus coupling strength, toric code", "Fig. 9",
             with(detail::pcc_fields(2.0),
                  {text("shape", "gaussian", "pulse envelope", detail::kShapes),
                   text("chi_ratios", "0.005,0.01,0.02,0.03,0.04,0.045", "peak coupling over K beta^2"),
                   text("parity", "even", "data-qubit parity", detail::kParities)}),
             [](const Config& c) { return detail::phase_diffusion(c, DiffusionProtocol::Toric); }},
            {"fig10-phase-diffusion-cat", "storage phase diffusion versus coupling strength, cat code", "Fig. 10",
             with(detail::pcc_fields(2.0),
                  {text("shape", "gaussian", "pulse envelope", detail::kShapes),
                   text("chi_ratios", "0.005,0.01,0.018,0.02,0.03", "peak coupling over K beta^2"),
                   text("parity", "odd", "storage parity", detail::kParities), num("alpha", 2.0, "storage cat amplitude"),
                   num("storage_dim", 0, "storage truncation, 0 = default")}),
             [](const Config& c) { return detail::phase_diffusion(c, DiffusionProtocol::CatParity); }},
            {"fig11-two-photon", "leakage out of the cat span with and without two-photon loss", "Fig. 11",
             with(detail::pcc_fields(1.0),
                  {num("g", 0.05, "PCC-bath exchange coupling"), num("kappa_bc", 8.0, "bath cavity linewidth"),
                   num("n_bc", 0.1, "bath thermal occupation"), num("dim_bc", 8, "bath Fock truncation"),
                   num("kappa_2ph", 0.05, "two-photon loss rate"),
                   text("init", "cat_plus", "PCC initial state", {"cat_plus", "x_plus"}),
                   num("compare_without", 1, "also run kappa_2ph = 0 (1/0)"), num("t_max", 400.0, "horizon"),
                   num("samples", 81, "output samples")}),
             detail::two_photon},
            {"fig12-dephasing", "phase-flip probability of the effective dephasing channel", "Fig. 12",
             with(detail::pcc_fields(std::sqrt(2.0)),
                  {num("kappa_phi", 0.0005, "dephasing rate"), num("kappa_t_max", 1.0, "horizon in units of 1/kappa_phi"),
                   num("samples", 41, "output samples")}),
             detail::dephasing},
            {"fig13-qswitch", "readout-cavity response conditioned on the PCC state", "Fig. 13",
             with(detail::pcc_fields(2.0),
                  {num("epsilon", 1.0 / 30.0, "unused by this run; shared readout field"),
                   num("kappa", 0.0, "PCC single-photon loss rate"),
                   num("g", 0.0, "PCC-readout coupling, 0 = kappa_r / (2 beta)"),
                   num("kappa_r", 1.0 / 20.0, "readout linewidth"), num("dim_r", 16, "readout Fock truncation"),
                   num("duration", 0.0, "horizon, 0 = 10 / kappa_r"), num("samples", 101, "output samples"),
                   text("pcc_basis", "eigen", "PCC basis", {"auto", "fock", "eigen"}),
                   num("pcc_levels", 12, "kept PCC eigenstates"),
                   text("init", "x_plus", "PCC initial state", {"x_plus", "x_minus"})}),
             detail::qswitch},
            {"table1-verify", "effective jump operators on the cat span and their beta -> 0 limits", "Table 1",
             detail::pcc_fields(2.0), detail::table1},
            {"readout-rotation", "three-stage cat-to-coherent-state readout rotation", "-",
             with(detail::pcc_fields(2.0),
                  {num("epsilon", 1.0 / 30.0, "single-photon drive"), num("kappa", 0.0, "PCC loss rate"),
                   num("stage3_time", 5.0, "duration with the pump restored"),
                   text("init", "c_plus", "initial cat", {"c_plus", "c_minus"})}),
             detail::readout},
            {"kerr-jump", "single photon loss during the Kerr-only readout stage", "-",
             with(detail::pcc_fields(2.0),
                  {num("epsilon", 1.0 / 30.0, "stage-1 drive (sets the rotation sense)"),
                   num("kappa", 0.0, "unused; shared readout field"),
                   num("t_jump", kPi / 4.0, "jump time within the Kerr stage"),
                   text("init", "c_plus", "initial cat", {"c_plus", "c_minus"})}),
             detail::kerr_jump},
            {"majority-vote", "success probability of a majority over repeated rounds", "-",
             {num("p_single", 0.93, "single-round success"), num("n_repeats", 5, "odd number of rounds")},
             detail::majority},
            {"gain-two-photon", "out-of-span fraction after a gain jump followed by two-photon loss", "-",
             {num("beta", 2.0, "cat amplitude"), num("fock_dim", 60, "Fock truncation")}, detail::gain_two_photon},
        };
        for (auto& e : v) {
            e.fields.push_back(num("integrator.rtol", 1e-8, "relative error tolerance"));
            e.fields.push_back(num("integrator.atol", 1e-10, "absolute error tolerance"));
        }
        return v;
    }();
    return list;
}

// ---------------------------------------------------------------------------
// Parsing and resolution

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

/// Closest candidate; dotted names also match on their last segment.
inline std::string nearest(const std::string& name, const std::vector<std::string>& candidates) {
    std::string best;
    std::size_t best_d = std::string::npos;
    for (const auto& c : candidates) {
        std::size_t d = edit_distance(name, c);
        const auto dot = c.rfind('.');
        if (dot != std::string::npos) d = std::min(d, edit_distance(name, c.substr(dot + 1)));
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

inline const Experiment& find_experiment(const std::string& id) {
    std::vector<std::string> ids;
    for (const auto& e : registry()) {
        if (e.id == id) return e;
        ids.push_back(e.id);
    }
    throw ConfigError("unknown experiment '" + id + "'; did you mean '" + nearest(id, ids) +
                      "'? (`catsyn list` shows the catalog)");
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

/// "key=value" -> (key, value).
inline std::pair<std::string, std::string> parse_assignment(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + s + "'");
    std::string k = trim(s.substr(0, eq)), v = trim(s.substr(eq + 1));
    if (k.empty()) throw ConfigError("empty key in '" + s + "'");
    return {k, v};
}

/// Config text: one `key = value` per line, `#` comments, optional `[section]` headers that
/// prefix following keys with `section.`.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        if (line.find('=') == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        auto kv = parse_assignment(line);
        if (!section.empty()) kv.first = section + "." + kv.first;
        out.push_back(kv);
    }
    return out;
}

inline std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

inline double parse_number(const std::string& field, const std::string& v) {
    std::string s = trim(v);
    if (s == "pi") return kPi;
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(x))
        throw ConfigError("invalid value for field '" + field + "': '" + v + "' is not a finite number");
    return x;
}

/// Defaults overlaid with overrides (applied in order); every key must be a documented field.
inline Params resolve(const Experiment& e, const std::vector<std::pair<std::string, std::string>>& overrides) {
    Params p;
    std::vector<std::string> names;
    for (const auto& f : e.fields) {
        p[f.name] = f.def;
        names.push_back(f.name);
    }
    for (const auto& [k, v] : overrides) {
        auto it = std::find_if(e.fields.begin(), e.fields.end(), [&](const Field& f) { return f.name == k; });
        if (it == e.fields.end())
            throw ConfigError("unknown field '" + k + "' for " + e.id + "; did you mean '" + nearest(k, names) + "'?");
        if (std::holds_alternative<double>(it->def)) {
            p[k] = parse_number(k, v);
        } else {
            if (!it->choices.empty() && std::find(it->choices.begin(), it->choices.end(), v) == it->choices.end()) {
                std::string opts;
                for (const auto& c : it->choices) opts += (opts.empty() ? "" : ", ") + c;
                throw ConfigError("invalid value for field '" + k + "': '" + v + "' (one of: " + opts + ")");
            }
            p[k] = v;
        }
    }
    return p;
}

inline ExperimentResult run_experiment(const Experiment& e, const Params& params) {
    const Config cfg(params);
    ExperimentResult r = e.run(cfg);
    r.id = e.id;
    r.params = params;
    r.rtol = cfg.num("integrator.rtol");
    r.atol = cfg.num("integrator.atol");
    return r;
}

inline std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Commands

inline std::string format_value(const ParamValue& v) {
    if (std::holds_alternative<std::string>(v)) return std::get<std::string>(v);
    std::ostringstream os;
    os << std::setprecision(10) << std::get<double>(v);
    return os.str();
}

inline int cmd_list(std::ostream& out) {
    for (const auto& e : registry()) {
        out << e.id << "  [" << e.figure << "]  " << e.description << "\n";
        for (const auto& f : e.fields) {
            out << "    " << std::left << std::setw(22) << f.name << std::setw(13) << format_value(f.def) << " " << f.doc;
            if (!f.choices.empty()) {
                out << " {";
                for (std::size_t i = 0; i < f.choices.size(); ++i) out << (i ? "|" : "") << f.choices[i];
                out << "}";
            }
            out << "\n";
        }
    }
    return kExitOk;
}

struct RunRequest {
    std::string id;
    std::vector<std::string> sets;
    std::string config_path;
    std::string out_path;
    std::string format = "json";
};

inline void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write output file '" + path + "'");
    f << text;
}

inline int cmd_run(const RunRequest& req, std::ostream& err) {
    const Experiment* exp = nullptr;
    Params params;
    try {
        if (req.format != "json" && req.format != "csv")
            throw ConfigError("format must be json or csv, got '" + req.format + "'");
        if (req.out_path.empty()) throw ConfigError("--out is required");
        exp = &find_experiment(req.id);
        std::vector<std::pair<std::string, std::string>> overrides;
        if (!req.config_path.empty()) overrides = read_config_file(req.config_path);
        for (const auto& s : req.sets) overrides.push_back(parse_assignment(s));
        params = resolve(*exp, overrides);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    auto diagnostic = [&](const std::string& kind, const std::string& what, double measured) {
        ExperimentResult partial;
        partial.id = exp->id;
        partial.params = params;
        nlohmann::ordered_json j = to_json(partial);
        j["diagnostic"] = {{"error", kind}, {"message", what}, {"measured", catsyn::detail::scalar_json(measured)}};
        try {
            write_file(req.out_path, dump(j));
        } catch (const ConfigError&) {
        }
        err << "numerical failure (" << kind << "): " << what << "\n";
        return kExitNumerical;
    };

    try {
        const ExperimentResult r = run_experiment(*exp, params);
        write_file(req.out_path, req.format == "json" ? dump(to_json(r)) : to_csv(r));
        for (const auto& w : r.warnings) err << "warning: " << w << "\n";
        return kExitOk;
    } catch (const TruncationError& e) {
        return diagnostic("truncation", e.what(), e.measured);
    } catch (const AccuracyError& e) {
        return diagnostic("accuracy", e.what(), e.drift);
    } catch (const StiffnessError& e) {
        return diagnostic("stiffness", e.what(), e.time_reached);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ValidityError& e) {
        err << "error: invalid parameters: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DimensionError& e) {
        err << "error: invalid dimensions: " << e.what() << "\n";
        return kExitUsage;
    }
}

inline int cmd_verify(const std::string& suite, std::ostream& out, std::ostream& err) {
    try {
        const auto reports = verify::run_suite(suite, out);
        for (const auto& r : reports)
            if (!r.pass()) return kExitFail;
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}

}  // namespace catsyn::cli
