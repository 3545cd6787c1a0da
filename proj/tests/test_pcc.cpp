#include <cmath>

#include <gtest/gtest.h>

#include <catsyn/pcc.hpp>

using namespace catsyn;

namespace {

// Column-major vectorized Lindbladian of a single jump L on a qubit.
CMat liouvillian(const Eigen::Matrix2cd& L, double rate) {
    const Eigen::Matrix2cd id = Eigen::Matrix2cd::Identity();
    const Eigen::Matrix2cd ll = L.adjoint() * L;
    CMat out = CMat::Zero(4, 4);
    auto kron = [](const Eigen::Matrix2cd& a, const Eigen::Matrix2cd& b) {
        CMat k(4, 4);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) k.block(2 * i, 2 * j, 2, 2) = a(i, j) * b;
        return k;
    };
    out += kron(L.conjugate(), L);
    out -= 0.5 * kron(id, ll);
    out -= 0.5 * kron(ll.transpose(), id);
    return rate * out;
}

double oracle_flip(const Eigen::Matrix2cd& L, double rate, double t, const Eigen::Vector2cd& start,
                   const Eigen::Vector2cd& target) {
    const Eigen::Matrix2cd rho0 = start * start.adjoint();
    CVec v(4);
    for (int c = 0; c < 2; ++c)
        for (int r = 0; r < 2; ++r) v(2 * c + r) = rho0(r, c);
    const CVec w = (liouvillian(L, rate) * t).exp() * v;
    Eigen::Matrix2cd rho;
    for (int c = 0; c < 2; ++c)
        for (int r = 0; r < 2; ++r) rho(r, c) = w(2 * c + r);
    return (target.adjoint() * rho * target)(0, 0).real();
}

}  // namespace

TEST(Gap, BetaZeroIsTwoK) {
    EXPECT_NEAR(energy_gap(PccParams::from_beta(0.0, 1.0)), 2.0, 1e-10);
    EXPECT_NEAR(energy_gap(PccParams::from_beta(0.0, 2.5)), 5.0, 1e-10);
}

TEST(Gap, ApproachesFourPForLargeBeta) {
    const double r1 = energy_gap(PccParams::from_beta(1.0)) / 4.0;
    const double r3 = energy_gap(PccParams::from_beta(3.0)) / 36.0;
    EXPECT_GE(r3, 0.85);
    EXPECT_LE(r3, 1.0);
    EXPECT_LT(std::abs(1 - r3), std::abs(1 - r1));
}

TEST(Gap, TruncationGate) { EXPECT_THROW(energy_gap({1.0, 9.0, 8}), TruncationError); }

TEST(Hamiltonian, CatsAreDegenerateTopEigenstates) {
    const PccParams p = PccParams::from_beta(2.0);
    const Operator h = pcc_hamiltonian(p);
    const CatBasis b = cat_basis(2.0, p.resolved_dim());
    const double e = p.P * p.P / p.K;
    for (const CVec& c : {b.cat_plus, b.cat_minus}) {
        const CVec r = h.data * c - e * c;
        EXPECT_LT(r.norm(), 1e-5);
    }
}

TEST(Channels, ProjectedLadderMatchesCompression) {
    const CatBasis b = cat_basis(1.5);
    const auto [ac, adc] = projected_ops(b);
    const Eigen::Matrix2cd direct = b.compress(annihilation(b.dim));
    EXPECT_LT((b.compress(ac) - direct).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((adc.dense() - ac.dense().adjoint()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Channels, GainIsAdjointOfLoss) {
    for (double beta : {0.0, 0.7, 2.0}) {
        const CatBasis b = cat_basis(beta, 40);
        const Eigen::Matrix2cd l = effective_jump(NoiseType::Loss, b).matrix();
        const Eigen::Matrix2cd g = effective_jump(NoiseType::Gain, b).matrix();
        EXPECT_LT((l.adjoint() - g).cwiseAbs().maxCoeff(), 1e-14) << beta;
    }
}

TEST(Channels, BetaZeroLimits) {
    const CatBasis z = cat_basis(0.0, 12);
    Eigen::Matrix2cd sm, sp, nn;
    sm << 0, 1, 0, 0;
    sp << 0, 0, 1, 0;
    nn << 0, 0, 0, 1;
    EXPECT_LT((effective_jump(NoiseType::Loss, z).matrix() - sm).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((effective_jump(NoiseType::Gain, z).matrix() - sp).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((effective_jump(NoiseType::Dephasing, z).matrix() - nn).cwiseAbs().maxCoeff(), 1e-15);
    // continuity: a small beta approaches the same matrices
    const CatBasis s = cat_basis(1e-3, 12);
    EXPECT_LT((effective_jump(NoiseType::Loss, s).matrix() - sm).cwiseAbs().maxCoeff(), 2e-3);
}

TEST(Channels, TwoPhotonLossIsIdentityOnSpan) {
    const CatBasis b = cat_basis(2.0);
    const EffectiveChannel c = effective_jump(NoiseType::TwoPhotonLoss, b);
    EXPECT_LT((c.matrix() - Eigen::Matrix2cd::Identity()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_DOUBLE_EQ(c.rate_prefactor, 16.0);
}

TEST(EffectiveMe, LossMatchesLiouvillianExponential) {
    const double kappa = 0.01;
    const std::vector<double> t = {0.0, 50.0, 100.0, 200.0};
    Eigen::Vector2cd cp(1, 0), cm(0, 1), xp(1, 1), xm(1, -1);
    xp /= std::sqrt(2.0);
    xm /= std::sqrt(2.0);
    for (double beta : {1.0, std::sqrt(2.0), 2.0}) {
        const CatBasis b = cat_basis(beta);
        NoiseSpec n;
        n.kappa_1 = kappa;
        const FlipSeries fs = effective_flip_series(b, n, t);
        const Eigen::Matrix2cd L = effective_jump(NoiseType::Loss, b).matrix();
        for (std::size_t i = 0; i < t.size(); ++i) {
            EXPECT_NEAR(fs.bit_flip[i], oracle_flip(L, kappa, t[i], cp, cm), 1e-8);
            EXPECT_NEAR(fs.phase_flip[i], oracle_flip(L, kappa, t[i], xp, xm), 1e-8);
        }
    }
}

TEST(EffectiveMe, DephasingClosedForm) {
    const double beta = std::sqrt(2.0), kphi = 5e-4;
    const CatBasis b = cat_basis(beta);
    NoiseSpec n;
    n.kappa_phi = kphi;
    const FlipSeries fs = effective_flip_series(b, n, {0.0, 1.0 / kphi});
    const double p2 = std::tanh(beta * beta);
    const double d = beta * beta * (1.0 / p2 - p2);
    const double expect = 0.5 * (1.0 - std::exp(-0.5 * d * d));
    EXPECT_NEAR(fs.phase_flip[1], expect, 1e-9);
    EXPECT_NEAR(expect, 0.005340, 5e-6);
    EXPECT_NEAR(fs.bit_flip[1], 0.0, 1e-12);
}

TEST(EffectiveMe, FockEquivalenceAtModerateLoss) {
    const PccParams p = PccParams::from_beta(std::sqrt(2.0));
    NoiseSpec n;
    n.kappa_1 = 0.01;
    const std::vector<double> t = linspace(0.0, 100.0, 6);
    const FlipSeries eff = effective_flip_series(cat_basis(p.beta(), p.resolved_dim()), n, t);
    const FlipSeries fock = fock_flip_series(p, n, t);
    EXPECT_LT(max_abs_gap(eff.phase_flip, fock.phase_flip), 1e-3);
    EXPECT_LT(max_abs_gap(eff.bit_flip, fock.bit_flip), 1e-3);
}

TEST(Representation, EigenBasisContainsCatsAndIsDiagonal) {
    const PccParams p = PccParams::from_beta(2.0);
    const PccRepresentation e = pcc_eigen_representation(p, 12);
    EXPECT_EQ(e.dim, 12);
    EXPECT_NEAR(e.cat_plus.norm(), 1.0, 1e-12);
    // cat pair sits at zero energy after the shift
    EXPECT_NEAR(std::abs(e.cat_plus.dot(e.hamiltonian().data * e.cat_plus)), 0.0, 1e-4);
    const CMat h = e.hamiltonian().dense();
    EXPECT_LT((h - CMat(h.diagonal().asDiagonal())).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_THROW(pcc_eigen_representation(p, 5), DimensionError);
}

TEST(Representation, EigenAndFockAgreeUnderWeakLoss) {
    const PccParams p = PccParams::from_beta(2.0);
    const std::vector<double> times = {10.0, 20.0};
    std::vector<double> flips[2];
    int i = 0;
    for (const std::string kind : {"fock", "eigen"}) {
        const PccRepresentation r = pcc_representation(p, kind, 12, false);
        EvolutionProblem pr;
        pr.layout = r.layout();
        pr.add_h(r.hamiltonian());
        pr.add_collapse(r.annihilation(), 0.01);
        pr.t1 = times.back();
        pr.sample_times = times;
        const CVec xp = (r.cat_plus + r.cat_minus) / std::sqrt(2.0);
        const CVec xm = (r.cat_plus - r.cat_minus) / std::sqrt(2.0);
        pr.observe("xm", projector(pr.layout, xm));
        const Trajectory t = evolve(pr, QuantumState::pure(pr.layout, xp));
        for (auto z : t.observables.at("xm")) flips[i].push_back(z.real());
        ++i;
    }
    for (std::size_t k = 0; k < times.size(); ++k) EXPECT_NEAR(flips[0][k], flips[1][k], 1e-5);
}

TEST(BathRates, AdiabaticElimination) {
    BathCavitySpec b;
    b.g = 0.05;
    b.kappa_bc = 2.0;
    b.n_bc = 0.1;
    EXPECT_NEAR(bath_rate_loss(b), 0.005, 1e-15);
    EXPECT_NEAR(bath_rate_dephasing(b), 2 * 0.0025 * 0.11 / 2.0, 1e-15);
    EXPECT_FALSE(b.adiabatic_warning());
    b.g = 0.5;
    EXPECT_TRUE(b.adiabatic_warning());
}

TEST(GainTwoPhoton, FractionMatchesClosedForm) {
    for (double beta : {1.0, 2.0, 3.0}) {
        const GainTwoPhotonDecomposition d = gain_then_two_photon(beta, 80);
        EXPECT_LT(d.residual, 1e-10);
        EXPECT_NEAR(d.fraction(), beta / (beta * beta + 2.0), 1e-10);
        EXPECT_NEAR(d.in_span_coeff, beta * (beta * beta + 2.0), 1e-9);
    }
}
