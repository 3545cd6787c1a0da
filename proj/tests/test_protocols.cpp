#include <bit>
#include <cmath>

#include <gtest/gtest.h>

#include <catsyn/protocols.hpp>

using namespace catsyn;

TEST(Pulses, ShapedPulseCarriesRequestedArea) {
    for (const std::string shape : {"sine", "gaussian"}) {
        const PulseShape s = shaped_pulse(shape, 0.05, kPi / 16.0);
        EXPECT_NEAR(s.integral(), kPi / 16.0, 1e-14) << shape;
        EXPECT_NEAR(shaped_pulse(shape, chi0_for_peak(shape, 0.08), 1.0).peak(), 0.08, 1e-15) << shape;
    }
    EXPECT_THROW(shaped_pulse("square", 0.05, 1.0), ConfigError);
    EXPECT_THROW(parse_parity("neutral"), ConfigError);
}

TEST(Toric, DataStateAndFlipRule) {
    const CVec v = toric_data_state(Parity::Odd, 4);
    EXPECT_NEAR(v.norm(), 1.0, 1e-15);
    for (int b = 0; b < 16; ++b) {
        const bool odd = std::popcount(unsigned(b)) % 2 == 1;
        EXPECT_EQ(std::abs(v(b)) > 0, odd);
        // for four qubits the flip rule is the parity
        EXPECT_EQ(toric_flips(b, 4), odd);
    }
    EXPECT_FALSE(toric_flips(0b01, 2));  // S'_z = 0
    EXPECT_TRUE(toric_flips(0b00, 2));   // S'_z = 2
}

TEST(Toric, IdealRunSignalsParity) {
    ToricConfig c;
    c.samples = 5;
    const SyndromeOutcome odd = toric_z_experiment(c);
    EXPECT_TRUE(odd.expect_flip);
    EXPECT_NEAR(odd.p_syndrome, 0.99999964, 1e-6);
    EXPECT_GT(odd.p_data_intact, 1 - 1e-6);
    c.parity_init = Parity::Even;
    const SyndromeOutcome even = toric_z_experiment(c);
    EXPECT_FALSE(even.expect_flip);
    EXPECT_NEAR(even.p_syndrome, 0.99999989, 1e-6);
}

TEST(Toric, LossyRunNearNinetyThreePercent) {
    ToricConfig c;
    c.kappa_1 = 1.0 / 200.0;
    c.samples = 5;
    const SyndromeOutcome o = toric_z_experiment(c);
    EXPECT_GE(o.p_pcc_flip, 0.91);
    EXPECT_LE(o.p_pcc_flip, 0.95);
}

TEST(Toric, LossyEvenParityThreeBranches) {
    ToricConfig c;
    c.kappa_1 = 1.0 / 200.0;
    c.samples = 3;
    c.parity_init = Parity::Even;
    const SyndromeOutcome o = toric_z_experiment(c);
    EXPECT_FALSE(o.expect_flip);
    EXPECT_GT(o.p_syndrome, 0.85);
    EXPECT_LE(o.p_syndrome, 1.0);
}

TEST(Toric, BlockPathMatchesFullLayout) {
    ToricConfig c;
    c.n_qubits = 2;
    c.kappa_1 = 0.005;
    c.samples = 5;
    const CVec data = toric_data_state(Parity::Even, 2);
    const SyndromeOutcome block = toric_z_run(c, data);
    const SyndromeOutcome full = toric_z_full(c, data);
    EXPECT_TRUE(block.expect_flip);
    EXPECT_EQ(block.expect_flip, full.expect_flip);
    for (std::size_t i = 0; i < block.times.size(); ++i) {
        EXPECT_NEAR(block.flip_series[i], full.flip_series[i], 1e-6);
        EXPECT_NEAR(block.intact_series[i], full.intact_series[i], 1e-6);
    }
}

TEST(Toric, ConfigValidation) {
    ToricConfig c;
    c.n_qubits = 9;
    EXPECT_THROW(toric_z_experiment(c), DimensionError);
    c.n_qubits = 4;
    c.kappa_1 = -1.0;
    EXPECT_THROW(toric_z_experiment(c), ValidityError);
}

TEST(ToricX, ProjectionMatchesEffectiveForm) {
    ToricConfig c;
    c.n_qubits = 2;
    const ToricXReduction x = toric_x_hamiltonian(c);
    EXPECT_LT(x.reduction_error, 1e-12);
    // (p^2 - 1)/(p^2 + 1) with p^2 = tanh(beta^2)
    EXPECT_NEAR(x.asymmetry(), -std::exp(-2.0 * 4.0), 1e-12);
}

TEST(MajorityVote, MatchesEnumeration) {
    for (int n : {1, 3, 5, 7}) {
        for (double p : {0.6, 0.93}) {
            double ref = 0.0;
            for (int mask = 0; mask < (1 << n); ++mask) {
                const int k = std::popcount(unsigned(mask));
                if (2 * k > n) ref += std::pow(p, k) * std::pow(1 - p, n - k);
            }
            EXPECT_NEAR(majority_vote(p, n), ref, 1e-14);
        }
    }
    EXPECT_THROW(majority_vote(0.9, 4), ValidityError);
    EXPECT_THROW(majority_vote(1.2, 3), ValidityError);
}

TEST(CatParity, StorageStateHasDefiniteParity) {
    for (Parity par : {Parity::Odd, Parity::Even}) {
        const CVec v = storage_cat_state(par, 2.0, 30);
        double wrong = 0.0;
        for (int n = (par == Parity::Odd ? 0 : 1); n < 30; n += 2) wrong += std::norm(v(n));
        EXPECT_LT(wrong, 1e-28);
    }
    EXPECT_THROW(storage_cat_state(Parity::Odd, 2.0, 12), TruncationError);
}

TEST(CatParity, IdealRunSignalsParity) {
    CatCodeConfig c;
    c.samples = 5;
    const SyndromeOutcome odd = cat_parity_experiment(c);
    EXPECT_TRUE(odd.expect_flip);
    EXPECT_NEAR(odd.p_syndrome, 0.99999943, 1e-6);
    c.parity_init = Parity::Even;
    const SyndromeOutcome even = cat_parity_experiment(c);
    EXPECT_FALSE(even.expect_flip);
    EXPECT_NEAR(even.p_syndrome, 0.99999968, 1e-6);
}

TEST(PhaseDiffusion, InfidelityAndSlopeHelpers) {
    EXPECT_NEAR(phase_infidelity({0.5, 0.5}, {0.0, 0.0}), 0.0, 1e-15);
    EXPECT_NEAR(phase_infidelity({0.5, 0.5}, {0.0, kPi}), 1.0, 1e-15);
    const double d = 0.01;
    EXPECT_NEAR(phase_infidelity({0.5, 0.5}, {0.0, d}), std::pow(std::sin(d / 2), 2), 1e-15);
    EXPECT_NEAR(loglog_slope({1, 2, 4}, {3, 12, 48}), 2.0, 1e-12);
    EXPECT_THROW(loglog_slope({1}, {1}), ValidityError);
}

TEST(Holevo, VacuumClosedForm) {
    const HolevoReport h = holevo_variance(QuantumState::pure(ModeLayout::fock(100), fock_vector(100, 0)));
    EXPECT_NEAR(h.s_q, std::exp(-kPi), 1e-12);
    EXPECT_NEAR(h.V_p, std::exp(2 * kPi) - 1, 1e-6);
    EXPECT_DOUBLE_EQ(holevo_from_modulus(1.0), 0.0);
    EXPECT_TRUE(std::isinf(holevo_from_modulus(0.0)));
}

TEST(Holevo, GkpStateIsSymmetric) {
    const HolevoReport h = holevo_variance(gkp_state(1.4, 120));
    EXPECT_GT(h.V_q, 0.0);
    EXPECT_GT(h.V_p, 0.0);
    EXPECT_LT(h.V_q, 1.0);
}

TEST(Readout, RotationReachesCoherentTarget) {
    ReadoutConfig c;
    const ReadoutSequence s = readout_rotation_sequence(c, CatLabel::Plus);
    EXPECT_GT(s.overlap_stage1, 0.9999);
    EXPECT_GT(s.overlap_stage3, 0.9999);
    EXPECT_NEAR(std::abs(s.target_amplitude), 2.0, 1e-15);
}

TEST(Readout, KerrJumpStaysOnRotatedCats) {
    ReadoutConfig c;
    const KerrJumpReport k = kerr_jump_error_state(c, CatLabel::Plus, kPi / 4.0);
    EXPECT_NEAR(k.theta, kPi / 2.0, 1e-15);
    EXPECT_GT(k.rotated_cat_overlap, 1 - 1e-9);
    EXPECT_LT(k.c_span_overlap, 1e-2);
    EXPECT_THROW(kerr_jump_error_state(c, CatLabel::Plus, 10.0), ValidityError);
}
