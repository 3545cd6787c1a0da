#include <cmath>

#include <gtest/gtest.h>

#include <catsyn/dynamics.hpp>

using namespace catsyn;

namespace {

double simpson(const PulseShape& s, double a, double b, bool square, int n = 20000) {
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double v = s(a + (b - a) * double(i) / n);
        acc += (i == 0 || i == n ? 1.0 : i % 2 ? 4.0 : 2.0) * (square ? v * v : v);
    }
    return acc * (b - a) / (3.0 * n);
}

Operator qubit_projector(int j) {
    CMat m = CMat::Zero(2, 2);
    m(j, j) = 1.0;
    return {ModeLayout::qubit(), m};
}

}  // namespace

TEST(Pulse, ClosedFormIntegralsMatchQuadrature) {
    for (const PulseShape& s : {PulseShape::sine(0.07, 3.3), PulseShape::gaussian(0.07, 2.1)}) {
        const auto [a, b] = s.window();
        EXPECT_NEAR(s.integral(), simpson(s, a, b, false), 1e-12) << s.name();
        EXPECT_NEAR(s.integral_of_square(), simpson(s, a, b, true), 1e-12) << s.name();
    }
}

TEST(Pulse, PeakValues) {
    EXPECT_NEAR(PulseShape::sine(0.1, 2.0)(1.0), 0.5 * kPi * 0.1, 1e-15);
    EXPECT_NEAR(PulseShape::gaussian(0.1, 2.0)(0.0), 0.1 / std::sqrt(kPi), 1e-15);
    EXPECT_EQ(PulseShape::gaussian(0.1, 2.0)(6.01), 0.0);
    EXPECT_EQ(PulseShape::sine(0.1, 2.0)(-0.1), 0.0);
}

TEST(Evolve, RabiOscillation) {
    const double omega = 0.7;
    EvolutionProblem p;
    p.layout = ModeLayout::qubit();
    p.add_h(0.5 * omega * sigma_x());
    p.t1 = 10.0;
    p.sample_times = linspace(0.0, 10.0, 21);
    p.observe("pe", qubit_projector(1));
    const CVec g = fock_vector(2, 0);
    const Trajectory tr = evolve(p, QuantumState::pure(ModeLayout::qubit(), g));
    for (std::size_t i = 0; i < tr.sample_times.size(); ++i)
        EXPECT_NEAR(tr.observables.at("pe")[i].real(), std::pow(std::sin(omega * tr.sample_times[i] / 2), 2), 1e-8);
}

TEST(Evolve, CoherentAmplitudeDecay) {
    const double kappa = 0.3;
    const int d = 20;
    const cplx alpha(1.2, 0.5);
    EvolutionProblem p;
    p.layout = ModeLayout::fock(d);
    p.add_collapse(annihilation(d), kappa);
    p.t1 = 4.0;
    p.sample_times = linspace(0.0, 4.0, 9);
    p.observe("a", annihilation(d));
    const Trajectory tr = evolve(p, coherent(d, alpha));
    for (std::size_t i = 0; i < tr.sample_times.size(); ++i)
        EXPECT_NEAR(std::abs(tr.observables.at("a")[i] - alpha * std::exp(-kappa * tr.sample_times[i] / 2)), 0.0, 1e-8);
    EXPECT_LT(tr.max_trace_drift, 1e-9);
}

TEST(Evolve, ThermalRelaxationOfMeanPhoton) {
    const double kappa = 0.5, nth = 0.1;
    const int d = 14;
    EvolutionProblem p;
    p.layout = ModeLayout::fock(d);
    p.add_collapse(annihilation(d), kappa * (1 + nth));
    p.add_collapse(creation(d), kappa * nth);
    p.t1 = 6.0;
    p.sample_times = linspace(0.0, 6.0, 7);
    p.observe("n", number(d));
    const Trajectory tr = evolve(p, QuantumState::pure(ModeLayout::fock(d), fock_vector(d, 1)));
    for (std::size_t i = 0; i < tr.sample_times.size(); ++i)
        EXPECT_NEAR(tr.observables.at("n")[i].real(), nth + (1 - nth) * std::exp(-kappa * tr.sample_times[i]), 1e-7);
}

TEST(Evolve, ThermalBathStaysHermitianOverLongHorizon) {
    // Kerr mode exchanging with a thermally damped mode; rounding must not seed a growing anti-Hermitian part.
    const int d = 10, db = 5;
    const ModeLayout l = ModeLayout::fock(d).concat(ModeLayout::fock(db));
    const Operator a = embed(l, 0, annihilation(d)), b = embed(l, 1, annihilation(db));
    EvolutionProblem p;
    p.layout = l;
    p.add_h(embed(l, 0, -1.0 * (number(d) * number(d))));
    p.add_h(0.05 * (a.adjoint() * b + a * b.adjoint()));
    p.add_collapse(b, 2.2);
    p.add_collapse(b.adjoint(), 0.2);
    p.t1 = 12.0;
    p.sample_times = linspace(0.0, 12.0, 4);
    IntegratorOptions o;
    o.retain_states = true;
    CVec psi = CVec::Zero(d * db);
    psi(1 * db) = 1.0;
    const Trajectory tr = evolve(p, QuantumState::pure(l, psi), o);
    for (const auto& s : tr.states) EXPECT_LT((s.rho - s.rho.adjoint()).norm(), 1e-12);
    EXPECT_LT(tr.max_trace_drift, 1e-9);
}

TEST(Evolve, PurityNonIncreasingUnderDephasing) {
    const int d = 16;
    EvolutionProblem p;
    p.layout = ModeLayout::fock(d);
    p.add_h(number(d) * number(d) + 0.3 * (annihilation(d) + creation(d)));
    p.add_collapse(number(d), 0.2);
    p.t1 = 5.0;
    p.sample_times = linspace(0.0, 5.0, 26);
    IntegratorOptions o;
    o.retain_states = true;
    const Trajectory tr = evolve(p, coherent(d, 1.5), o);
    for (std::size_t i = 1; i < tr.states.size(); ++i) {
        EXPECT_LE(tr.states[i].purity(), tr.states[i - 1].purity() + 1e-10);
        EXPECT_NO_THROW(tr.states[i].validate());
    }
}

TEST(Evolve, TimeReversalRestoresState) {
    const int d = 24;
    Operator h = number(d) * number(d) * cplx(-1.0);
    const Operator a = annihilation(d);
    h += 2.0 * (a * a + a.adjoint() * a.adjoint());
    h += 0.05 * (a + a.adjoint());
    const QuantumState psi0 = coherent(d, 1.0);
    EvolutionProblem fwd;
    fwd.layout = ModeLayout::fock(d);
    fwd.add_h(h);
    fwd.t1 = 3.0;
    fwd.sample_times = {3.0};
    IntegratorOptions o;
    o.retain_states = true;
    o.rtol = 1e-10;
    o.atol = 1e-12;
    const Trajectory t1 = evolve(fwd, psi0, o);
    EvolutionProblem back = fwd;
    back.h_terms.clear();
    back.add_h(h * cplx(-1.0));
    const Trajectory t2 = evolve(back, t1.states.back(), o);
    EXPECT_GT(t2.states.back().overlap(psi0.psi), 1 - 1e-8);
}

TEST(Evolve, TailGateThrowsOnTruncation) {
    const int d = 6;
    EvolutionProblem p;
    p.layout = ModeLayout::fock(d);
    p.add_h(creation(d) + annihilation(d));
    p.gate_all_fock(1e-9);
    p.t1 = 3.0;
    p.sample_times = {1.0, 2.0, 3.0};
    EXPECT_THROW(evolve(p, QuantumState::pure(p.layout, fock_vector(d, 0))), TruncationError);
}

TEST(Evolve, LayoutMismatchThrows) {
    EvolutionProblem p;
    p.layout = ModeLayout::fock(4);
    p.add_h(number(5));
    p.t1 = 1.0;
    EXPECT_THROW(evolve(p, coherent(4, 0.1)), DimensionError);
    EXPECT_THROW(p.add_collapse(annihilation(4), -1.0), ValidityError);
}

TEST(Conditional, BlocksMatchFullControlledEvolution) {
    const int d = 12;
    const double kappa = 0.05;
    const ModeLayout mode = ModeLayout::fock(d);
    const Operator n = number(d), a = annihilation(d);
    const PulseShape pulse = PulseShape::sine(0.3, 4.0);
    const std::vector<double> lam = {1.0, -0.6};

    ConditionalProblem cp;
    cp.base.layout = mode;
    cp.base.add_h(0.2 * (a + a.adjoint()));
    cp.base.add_collapse(a, kappa);
    cp.base.t1 = 4.0;
    cp.base.sample_times = {2.0, 4.0};
    cp.terms.push_back({n, pulse});
    cp.lambda = {{lam[0]}, {lam[1]}};
    const QuantumState m0 = coherent(d, 0.5);
    const ConditionalTrajectory ct = evolve_conditional(cp, m0);

    const ModeLayout full = ModeLayout::qubit().concat(mode);
    EvolutionProblem fp;
    fp.layout = full;
    fp.add_h(embed(full, 1, 0.2 * (a + a.adjoint())));
    fp.add_h(tensor({lam[0] * qubit_projector(0) + lam[1] * qubit_projector(1), n}), pulse);
    fp.add_collapse(embed(full, 1, a), kappa);
    fp.t1 = 4.0;
    fp.sample_times = {2.0, 4.0};
    IntegratorOptions o;
    o.retain_states = true;
    CVec plus = CVec::Constant(2, 1.0 / std::sqrt(2.0));
    const Trajectory ft = evolve(fp, tensor({QuantumState::pure(ModeLayout::qubit(), plus), m0}), o);

    for (std::size_t s = 0; s < 2; ++s) {
        const CMat rho = ft.states[s].density_matrix();
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k) {
                const CMat expect = 0.5 * ct.block(s, j, k);
                EXPECT_LT((rho.block(j * d, k * d, d, d) - expect).cwiseAbs().maxCoeff(), 1e-7);
            }
    }
}

TEST(Sectors, MatchFullEvolutionForParityConservingDynamics) {
    const int d = 22;
    const Operator a = annihilation(d), ad = creation(d);
    EvolutionProblem p;
    p.layout = ModeLayout::fock(d);
    p.add_h(cplx(-1.0) * ad * ad * a * a + 1.0 * (ad * ad + a * a));
    p.add_collapse(a, 0.1);
    p.t1 = 3.0;
    p.sample_times = {1.5, 3.0};
    std::vector<int> sector(d);
    for (int i = 0; i < d; ++i) sector[i] = i % 2;
    const CatBasis b = cat_basis(1.0, d);
    const QuantumState rho0 = QuantumState::density(
        p.layout, 0.5 * (b.cat_plus * b.cat_plus.adjoint() + b.cat_minus * b.cat_minus.adjoint()));

    IntegratorOptions o;
    o.retain_states = true;
    const Trajectory full = evolve(p, rho0, o);
    const SectorTrajectory sec = evolve_sectors(p, rho0, sector, o);
    ASSERT_EQ(sec.states.size(), 2u);
    for (std::size_t s = 0; s < 2; ++s)
        EXPECT_LT((sec.states[s] - full.states[s].rho).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(ConditionalUnitary, IntermediateFlipIsAccepted) {
    const ModeLayout two({Mode::qubit(), Mode::qubit()});
    const Operator z1 = tensor({sigma_z(), identity(ModeLayout::qubit())});
    const Operator flip = tensor({identity(ModeLayout::qubit()), cplx(0, -1) * sigma_x()});
    const Operator local = tensor({identity(ModeLayout::qubit()), sigma_x()});
    const Operator id = identity(two);
    // U = local * ((1+S)/2 + (1-S)/2 flip), built explicitly
    const CMat u = local.dense() * (0.5 * (id.dense() + z1.dense()) + 0.5 * (id.dense() - z1.dense()) * flip.dense());
    const Operator U(two, u);
    EXPECT_NEAR(conditional_unitary_check(U, z1, flip, id, local), 1.0, 1e-14);
    EXPECT_LT(conditional_unitary_check(U, z1, flip, id), 0.5);
}
