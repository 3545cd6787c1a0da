#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include <catsyn/hilbert.hpp>

using namespace catsyn;

namespace {

CMat random_hermitian(int n, std::mt19937& rng) {
    std::normal_distribution<double> g;
    CMat m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = cplx(g(rng), g(rng));
    return (m + m.adjoint()) / 2.0;
}

CMat random_density(int n, std::mt19937& rng) {
    std::normal_distribution<double> g;
    CMat a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = cplx(g(rng), g(rng));
    CMat r = a * a.adjoint();
    return r / r.trace();
}

// Kronecker product by explicit index loops.
CMat kron_loops(const CMat& a, const CMat& b) {
    CMat out(a.rows() * b.rows(), a.cols() * b.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j)
            for (int k = 0; k < b.rows(); ++k)
                for (int l = 0; l < b.cols(); ++l) out(i * b.rows() + k, j * b.cols() + l) = a(i, j) * b(k, l);
    return out;
}

}  // namespace

TEST(Ladder, AnnihilationMatrixElements) {
    const CMat a = annihilation(8).dense();
    for (int n = 1; n < 8; ++n) EXPECT_DOUBLE_EQ(a(n - 1, n).real(), std::sqrt(double(n)));
    EXPECT_DOUBLE_EQ(a.cwiseAbs().sum(), [] {
        double s = 0;
        for (int n = 1; n < 8; ++n) s += std::sqrt(double(n));
        return s;
    }());
}

TEST(Ladder, CommutatorIsIdentityBelowCutoff) {
    const int d = 10;
    const Operator a = annihilation(d), ad = creation(d);
    const CMat c = (a * ad - ad * a).dense();
    for (int n = 0; n < d - 1; ++n) EXPECT_NEAR(std::abs(c(n, n) - 1.0), 0.0, 1e-14);
    EXPECT_NEAR(c(d - 1, d - 1).real(), -(d - 1.0), 1e-12);
}

TEST(Ladder, NumberOperatorDiagonal) {
    const CMat n = number(6).dense();
    for (int k = 0; k < 6; ++k) EXPECT_NEAR(n(k, k).real(), k, 1e-14);
}

TEST(Operators, PauliAlgebra) {
    const CMat x = sigma_x().dense(), y = sigma_y().dense(), z = sigma_z().dense();
    EXPECT_LT((x * y - I1 * z).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((sigma_plus().dense() - (x + I1 * y) / 2.0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Operators, HermitianFactoryRejectsNonHermitian) {
    EXPECT_THROW(Operator::hermitian(ModeLayout::fock(4), annihilation_matrix(4)), ValidityError);
    EXPECT_NO_THROW(Operator::hermitian(ModeLayout::fock(4), number(4).data));
}

TEST(Operators, LayoutMismatchThrows) {
    EXPECT_THROW(annihilation(4) * annihilation(5), DimensionError);
    EXPECT_THROW(Operator(ModeLayout::fock(3), annihilation_matrix(4)), DimensionError);
    EXPECT_THROW(Mode::fock(1), DimensionError);
}

TEST(States, CoherentMatchesPoissonStatistics) {
    const cplx alpha(1.1, -0.4);
    const QuantumState s = coherent(30, alpha);
    EXPECT_NEAR(s.trace(), 1.0, 1e-14);
    for (int n = 0; n < 8; ++n) {
        const double nbar = std::norm(alpha);
        const double p = std::exp(-nbar) * std::pow(nbar, n) / std::tgamma(n + 1.0);
        EXPECT_NEAR(std::norm(s.psi(n)), p, 1e-12);
    }
    EXPECT_NEAR(std::abs(expectation(annihilation(30), s) - alpha), 0.0, 1e-10);
}

TEST(States, DisplacementOfVacuumIsCoherent) {
    const cplx alpha(0.8, 0.3);
    const CVec v = displacement(30, alpha).data * fock_vector(30, 0);
    EXPECT_GT(std::norm(coherent(30, alpha).psi.dot(v)), 1 - 1e-10);
    EXPECT_THROW(displacement(10, 3.0), TruncationError);
}

TEST(States, SqueezedVacuumVariance) {
    const double r = 0.6;
    const int d = 60;
    const QuantumState s = QuantumState::pure(ModeLayout::fock(d), squeeze(d, r).data * fock_vector(d, 0));
    const Operator a = annihilation(d);
    const Operator q = (1.0 / std::sqrt(2.0)) * (a + a.adjoint());
    const Operator p = cplx(0, 1.0 / std::sqrt(2.0)) * (a.adjoint() - a);
    EXPECT_NEAR(expectation(q * q, s).real(), 0.5 * std::exp(-2 * r), 1e-10);
    EXPECT_NEAR(expectation(p * p, s).real(), 0.5 * std::exp(2 * r), 1e-10);
}

TEST(States, ValidateCatchesBadDensity) {
    CMat m = CMat::Identity(3, 3);
    EXPECT_THROW(QuantumState::density(ModeLayout::fock(3), m).validate(), ValidityError);
    m(0, 0) = 1.5;
    m(1, 1) = -0.5;
    m(2, 2) = 0.0;
    EXPECT_THROW(QuantumState::density(ModeLayout::fock(3), m).validate(), ValidityError);
}

TEST(CatBasisTest, NormsAndOverlapMatchClosedForms) {
    for (double beta : {0.5, 1.0, std::sqrt(2.0), 2.0}) {
        const CatBasis b = cat_basis(beta);
        EXPECT_NEAR(b.cat_plus.norm(), 1.0, 1e-14);
        EXPECT_NEAR(b.cat_minus.norm(), 1.0, 1e-14);
        EXPECT_NEAR(std::abs(b.cat_plus.dot(b.cat_minus)), 0.0, 1e-15);
        // p = sqrt(tanh(beta^2))
        EXPECT_NEAR(b.p, std::sqrt(std::tanh(beta * beta)), 1e-14);
        // a|C+> = beta p |C->, a|C-> = (beta/p)|C+>
        const CVec a_plus = annihilation(b.dim).data * b.cat_plus;
        const CVec a_minus = annihilation(b.dim).data * b.cat_minus;
        EXPECT_NEAR(std::abs(b.cat_minus.dot(a_plus) - beta * b.p), 0.0, 1e-8);
        EXPECT_NEAR(std::abs(b.cat_plus.dot(a_minus) - beta / b.p), 0.0, 1e-8);
    }
}

TEST(CatBasisTest, PauliRelationsOnTheSpan) {
    const CatBasis b = cat_basis(2.0);
    const CMat x = b.sigma_x.dense(), y = b.sigma_y.dense(), z = b.sigma_z.dense(), id = b.identity_C.dense();
    EXPECT_LT((x * x - id).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_LT((x * z + z * x).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_LT((y - I1 * x * z).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_NEAR(expectation(b.sigma_x, QuantumState::pure(b.layout(), b.x_plus)).real(), 1.0, 1e-13);
}

TEST(CatBasisTest, BetaZeroLimit) {
    const CatBasis b = cat_basis(0.0, 12);
    EXPECT_DOUBLE_EQ(b.p, 0.0);
    EXPECT_DOUBLE_EQ(b.cat_plus(0).real(), 1.0);
    EXPECT_DOUBLE_EQ(b.cat_minus(1).real(), 1.0);
}

TEST(CatBasisTest, TruncationGate) {
    EXPECT_THROW(cat_basis(3.0, 12), TruncationError);
    EXPECT_EQ(default_pcc_dim(2.0), 30);
    EXPECT_EQ(default_pcc_dim(0.0), 12);
}

TEST(Tensor, MatchesExplicitKronecker) {
    std::mt19937 rng(7);
    const CMat a = random_hermitian(3, rng), b = random_hermitian(2, rng);
    const Operator t = tensor({Operator(ModeLayout::fock(3), a), Operator(ModeLayout::qubit(), b)});
    EXPECT_LT((t.dense() - kron_loops(a, b)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_EQ(t.layout.describe(), "[fock3 x qubit]");
}

TEST(Tensor, Associativity) {
    std::mt19937 rng(11);
    const Operator a(ModeLayout::fock(2), random_hermitian(2, rng));
    const Operator b(ModeLayout::fock(3), random_hermitian(3, rng));
    const Operator c(ModeLayout::fock(4), random_hermitian(4, rng));
    const CMat left = tensor({tensor({a, b}), c}).dense();
    const CMat right = tensor({a, tensor({b, c})}).dense();
    EXPECT_LT((left - right).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(PartialTrace, ProductStateFactors) {
    std::mt19937 rng(3);
    const CMat r1 = random_density(3, rng), r2 = random_density(2, rng), r3 = random_density(4, rng);
    const QuantumState s = tensor({QuantumState::density(ModeLayout::fock(3), r1),
                                   QuantumState::density(ModeLayout::qubit(), r2),
                                   QuantumState::density(ModeLayout::fock(4), r3)});
    EXPECT_LT((partial_trace(s, {1}).rho - r2).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT((partial_trace(s, {0, 2}).rho - kron_loops(r1, r3)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(PartialTrace, EntangledPureStateGivesMixedMarginal) {
    CVec bell = CVec::Zero(4);
    bell(0) = bell(3) = 1.0 / std::sqrt(2.0);
    const QuantumState s = QuantumState::pure(ModeLayout({Mode::qubit(), Mode::qubit()}), bell);
    const QuantumState r = partial_trace(s, {0});
    EXPECT_LT((r.rho - CMat::Identity(2, 2) / 2.0).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(r.purity(), 0.5, 1e-15);
}

TEST(PartialTrace, PreservesExpectationOfLocalOperator) {
    std::mt19937 rng(5);
    const ModeLayout l({Mode::fock(3), Mode::fock(4)});
    const QuantumState s = QuantumState::density(l, random_density(12, rng));
    const Operator h(ModeLayout::fock(4), random_hermitian(4, rng));
    const cplx full = expectation(embed(l, 1, h), s);
    const cplx local = expectation(h, partial_trace(s, {1}));
    EXPECT_NEAR(std::abs(full - local), 0.0, 1e-13);
    EXPECT_THROW(partial_trace(s, {2}), DimensionError);
}

TEST(Gkp, StateIsNormalizedAndPeriodic) {
    const QuantumState g = gkp_state(1.4, 120);
    EXPECT_NEAR(g.trace(), 1.0, 1e-12);
    // only even Fock components survive a real symmetric superposition of displaced squeezed states
    double odd = 0.0;
    for (int n = 1; n < 120; n += 2) odd += std::norm(g.psi(n));
    EXPECT_LT(odd, 1e-20);
    EXPECT_THROW(gkp_state(1.4, 50), DimensionError);
}
