#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "errors.hpp"

namespace catsyn {

using cplx = std::complex<double>;
using SpMat = Eigen::SparseMatrix<cplx, Eigen::RowMajor>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

inline constexpr cplx I1{0.0, 1.0};
inline constexpr double kPi = 3.14159265358979323846;

/// One tensor factor: a truncated Fock space or a two-level system.
struct Mode {
    enum class Kind { Fock, Qubit };
    Kind kind = Kind::Fock;
    int dim = 2;

    static Mode fock(int d) {
        if (d < 2) throw DimensionError("Fock mode dimension must be >= 2, got " + std::to_string(d));
        return {Kind::Fock, d};
    }
    static Mode qubit() { return {Kind::Qubit, 2}; }
    bool operator==(const Mode& o) const { return kind == o.kind && dim == o.dim; }
};

/// Ordered list of modes. The leftmost mode is the slowest Kronecker index.
class ModeLayout {
public:
    ModeLayout() = default;
    explicit ModeLayout(std::vector<Mode> modes) : modes_(std::move(modes)) {
        if (modes_.empty()) throw DimensionError("layout needs at least one mode");
    }
    static ModeLayout fock(int dim) { return ModeLayout({Mode::fock(dim)}); }
    static ModeLayout qubit() { return ModeLayout({Mode::qubit()}); }

    const std::vector<Mode>& modes() const { return modes_; }
    std::size_t size() const { return modes_.size(); }
    const Mode& operator[](std::size_t i) const { return modes_.at(i); }

    int total_dim() const {
        int d = 1;
        for (const auto& m : modes_) d *= m.dim;
        return d;
    }
    std::vector<int> dims() const {
        std::vector<int> d;
        for (const auto& m : modes_) d.push_back(m.dim);
        return d;
    }
    bool operator==(const ModeLayout& o) const { return modes_ == o.modes_; }
    bool operator!=(const ModeLayout& o) const { return !(*this == o); }

    ModeLayout concat(const ModeLayout& o) const {
        std::vector<Mode> m = modes_;
        m.insert(m.end(), o.modes_.begin(), o.modes_.end());
        return ModeLayout(m);
    }

    std::string describe() const {
        std::string s = "[";
        for (std::size_t i = 0; i < modes_.size(); ++i) {
            if (i) s += " x ";
            s += (modes_[i].kind == Mode::Kind::Qubit ? "qubit" : "fock" + std::to_string(modes_[i].dim));
        }
        return s + "]";
    }

private:
    std::vector<Mode> modes_;
};

inline void require_same_layout(const ModeLayout& a, const ModeLayout& b, const char* where) {
    if (a != b) throw DimensionError(std::string(where) + ": layout mismatch " + a.describe() + " vs " + b.describe());
}

/// Sparse operator tagged with its layout.
struct Operator {
    ModeLayout layout;
    SpMat data;

    Operator() = default;
    Operator(ModeLayout l, SpMat d) : layout(std::move(l)), data(std::move(d)) {
        const int n = layout.total_dim();
        if (data.rows() != n || data.cols() != n)
            throw DimensionError("operator is " + std::to_string(data.rows()) + "x" + std::to_string(data.cols()) +
                                 " but layout has total_dim " + std::to_string(n));
        data.makeCompressed();
    }
    Operator(ModeLayout l, const CMat& dense, double prune = 0.0)
        : Operator(std::move(l), SpMat(dense.sparseView(1.0, prune))) {}

    /// Construct and verify Hermiticity in max-norm.
    static Operator hermitian(ModeLayout l, SpMat d, double tol = 1e-10) {
        Operator op(std::move(l), std::move(d));
        if (op.hermiticity_defect() > tol) throw ValidityError("operator asserted Hermitian is not");
        return op;
    }
    /// Construct and verify unitarity in max-norm.
    static Operator unitary(ModeLayout l, SpMat d, double tol = 1e-10) {
        Operator op(std::move(l), std::move(d));
        if (op.unitarity_defect() > tol) throw ValidityError("operator asserted unitary is not");
        return op;
    }

    int dim() const { return layout.total_dim(); }
    CMat dense() const { return CMat(data); }
    Operator adjoint() const { return {layout, SpMat(data.adjoint())}; }

    double hermiticity_defect() const {
        SpMat diff = data - SpMat(data.adjoint());
        double m = 0.0;
        for (int k = 0; k < diff.outerSize(); ++k)
            for (SpMat::InnerIterator it(diff, k); it; ++it) m = std::max(m, std::abs(it.value()));
        return m;
    }
    double unitarity_defect() const {
        CMat u = dense();
        return (u.adjoint() * u - CMat::Identity(dim(), dim())).cwiseAbs().maxCoeff();
    }

    Operator& operator+=(const Operator& o) {
        require_same_layout(layout, o.layout, "operator+");
        data += o.data;
        return *this;
    }
    Operator& operator-=(const Operator& o) {
        require_same_layout(layout, o.layout, "operator-");
        data -= o.data;
        return *this;
    }
    Operator& operator*=(cplx s) {
        data *= s;
        return *this;
    }
    friend Operator operator+(Operator a, const Operator& b) { return a += b; }
    friend Operator operator-(Operator a, const Operator& b) { return a -= b; }
    friend Operator operator*(cplx s, Operator a) { return a *= s; }
    friend Operator operator*(Operator a, cplx s) { return a *= s; }
    friend Operator operator*(double s, Operator a) { return a *= cplx(s, 0.0); }
    friend Operator operator*(const Operator& a, const Operator& b) {
        require_same_layout(a.layout, b.layout, "operator*");
        return {a.layout, SpMat(a.data * b.data)};
    }
};

/// Pure vector or density matrix over a layout.
struct QuantumState {
    enum class Form { Pure, Density };

    ModeLayout layout;
    Form form = Form::Pure;
    CVec psi;
    CMat rho;

    static QuantumState pure(ModeLayout l, CVec v) {
        if (v.size() != l.total_dim()) throw DimensionError("state vector size does not match layout");
        QuantumState s;
        s.layout = std::move(l);
        s.form = Form::Pure;
        s.psi = std::move(v);
        return s;
    }
    static QuantumState density(ModeLayout l, CMat m) {
        if (m.rows() != l.total_dim() || m.cols() != l.total_dim())
            throw DimensionError("density matrix size does not match layout");
        QuantumState s;
        s.layout = std::move(l);
        s.form = Form::Density;
        s.rho = std::move(m);
        return s;
    }

    bool is_pure() const { return form == Form::Pure; }
    int dim() const { return layout.total_dim(); }

    CMat density_matrix() const { return is_pure() ? CMat(psi * psi.adjoint()) : rho; }
    QuantumState to_density() const { return is_pure() ? density(layout, density_matrix()) : *this; }

    double trace() const { return is_pure() ? psi.squaredNorm() : rho.trace().real(); }
    double purity() const {
        if (is_pure()) return std::pow(psi.squaredNorm(), 2);
        return (rho * rho).trace().real();
    }

    /// Throws ValidityError if the state violates the normalization/positivity invariants.
    void validate() const {
        if (is_pure()) {
            if (std::abs(psi.norm() - 1.0) > 1e-10) throw ValidityError("pure state not normalized");
            return;
        }
        if (std::abs(rho.trace() - cplx(1.0)) > 1e-9) throw ValidityError("density matrix trace != 1");
        if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > 1e-10) throw ValidityError("density matrix not Hermitian");
        Eigen::SelfAdjointEigenSolver<CMat> es(rho, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -1e-9) throw ValidityError("density matrix has negative eigenvalue");
    }

    /// Fidelity-style overlap <phi|rho|phi> with a pure target.
    double overlap(const CVec& phi) const {
        if (phi.size() != dim()) throw DimensionError("overlap: dimension mismatch");
        if (is_pure()) return std::norm(phi.dot(psi));
        return (phi.adjoint() * rho * phi)(0, 0).real();
    }
};

// ---------------------------------------------------------------------------
// Single-mode operators

inline SpMat annihilation_matrix(int dim) {
    if (dim < 2) throw DimensionError("annihilation: dim must be >= 2");
    SpMat a(dim, dim);
    std::vector<Eigen::Triplet<cplx>> t;
    for (int n = 1; n < dim; ++n) t.emplace_back(n - 1, n, std::sqrt(double(n)));
    a.setFromTriplets(t.begin(), t.end());
    return a;
}

inline Operator annihilation(int dim) { return {ModeLayout::fock(dim), annihilation_matrix(dim)}; }
inline Operator creation(int dim) { return annihilation(dim).adjoint(); }
inline Operator number(int dim) {
    Operator a = annihilation(dim);
    return a.adjoint() * a;
}
inline Operator identity(const ModeLayout& l) {
    SpMat id(l.total_dim(), l.total_dim());
    id.setIdentity();
    return {l, id};
}
inline Operator identity(int dim) { return identity(ModeLayout::fock(dim)); }

/// Pauli operators on a qubit; index 0 is the sigma_z = +1 state.
inline Operator sigma_x() {
    CMat m(2, 2);
    m << 0, 1, 1, 0;
    return {ModeLayout::qubit(), m};
}
inline Operator sigma_y() {
    CMat m(2, 2);
    m << 0, -I1, I1, 0;
    return {ModeLayout::qubit(), m};
}
inline Operator sigma_z() {
    CMat m(2, 2);
    m << 1, 0, 0, -1;
    return {ModeLayout::qubit(), m};
}
/// sigma_- = |1><0|.
inline Operator sigma_minus() {
    CMat m(2, 2);
    m << 0, 0, 1, 0;
    return {ModeLayout::qubit(), m};
}
inline Operator sigma_plus() { return sigma_minus().adjoint(); }

/// Dense matrix exponential of a (small) generator.
inline CMat expm(const CMat& g) { return g.exp(); }

/// D(alpha) = exp(alpha a^dag - alpha^* a) on the truncated space.
inline Operator displacement(int dim, cplx alpha) {
    if (dim < 2) throw DimensionError("displacement: dim must be >= 2");
    if (alpha == cplx(0.0)) return identity(dim);
    const double r = std::abs(alpha);
    CMat a = CMat(annihilation_matrix(dim));
    CMat d = expm(alpha * a.adjoint() - std::conj(alpha) * a);
    if (r * r + 6.0 * r >= dim) {
        double tail = d.col(0).tail(2).squaredNorm();
        throw TruncationError("displacement: dim " + std::to_string(dim) + " too small for |alpha| = " +
                                  std::to_string(r),
                              tail);
    }
    return {ModeLayout::fock(dim), d, 0.0};
}

/// S_r = exp(r (a^2 - a^dag^2) / 2).
inline Operator squeeze(int dim, double r) {
    CMat a = CMat(annihilation_matrix(dim));
    CMat a2 = a * a;
    return {ModeLayout::fock(dim), expm(0.5 * r * (a2 - a2.adjoint())), 0.0};
}

// ---------------------------------------------------------------------------
// States

inline CVec fock_vector(int dim, int n) {
    if (n < 0 || n >= dim) throw DimensionError("fock state index out of range");
    CVec v = CVec::Zero(dim);
    v(n) = 1.0;
    return v;
}

/// Analytic coherent-state coefficients e^{-|a|^2/2} a^n / sqrt(n!), not renormalized.
inline CVec coherent_coefficients(int dim, cplx alpha) {
    CVec v(dim);
    const double pref = std::exp(-0.5 * std::norm(alpha));
    cplx c = pref;
    for (int n = 0; n < dim; ++n) {
        v(n) = c;
        c *= alpha / std::sqrt(double(n + 1));
    }
    return v;
}

/// Population in the two levels above dim - 3 of a single Fock factor.
inline double tail_population(const CVec& v) { return v.tail(2).squaredNorm(); }

inline QuantumState coherent(int dim, cplx alpha) {
    CVec v = coherent_coefficients(dim, alpha);
    return QuantumState::pure(ModeLayout::fock(dim), v / v.norm());
}

/// Two-dimensional cat manifold of a pumped Kerr cavity.
struct CatBasis {
    double beta = 0.0;
    int dim = 0;
    double p = 0.0;
    double n_plus = 0.0;
    double n_minus = 0.0;
    CVec cat_plus, cat_minus, x_plus, x_minus;
    Operator sigma_x, sigma_y, sigma_z, identity_C;

    ModeLayout layout() const { return ModeLayout::fock(dim); }
    QuantumState state_plus() const { return QuantumState::pure(layout(), cat_plus); }
    QuantumState state_minus() const { return QuantumState::pure(layout(), cat_minus); }

    /// Columns are (|C+>, |C->); isometry from the cat span into the Fock space.
    CMat isometry() const {
        CMat v(dim, 2);
        v.col(0) = cat_plus;
        v.col(1) = cat_minus;
        return v;
    }
    /// Embed a 2x2 matrix written in the (C+, C-) basis into the Fock space.
    Operator embed(const Eigen::Matrix2cd& m) const {
        CMat v = isometry();
        return {layout(), CMat(v * m * v.adjoint()), 1e-300};
    }
    /// Compress a Fock-space operator onto the cat span.
    Eigen::Matrix2cd compress(const Operator& op) const {
        CMat v = isometry();
        return v.adjoint() * op.dense() * v;
    }
};

/// Default PCC truncation ceil(beta^2 + 7 beta + 12).
inline int default_pcc_dim(double beta) { return int(std::ceil(beta * beta + 7.0 * beta + 12.0 - 1e-9)); }

inline CatBasis cat_basis(double beta, int dim) {
    if (beta < 0.0) throw ValidityError("cat_basis: beta must be non-negative");
    if (dim < 2) throw DimensionError("cat_basis: dim must be >= 2");
    CatBasis b;
    b.beta = beta;
    b.dim = dim;
    const double em = -std::expm1(-2.0 * beta * beta);  // 1 - e^{-2 beta^2}
    const double ep = 1.0 + std::exp(-2.0 * beta * beta);
    b.n_plus = 1.0 / std::sqrt(2.0 * ep);
    b.n_minus = beta > 0.0 ? 1.0 / std::sqrt(2.0 * em) : INFINITY;
    b.p = std::sqrt(em / ep);

    if (beta == 0.0) {
        b.cat_plus = fock_vector(dim, 0);
        b.cat_minus = fock_vector(dim, 1);
    } else {
        CVec c = coherent_coefficients(dim, beta);
        CVec cp = CVec::Zero(dim), cm = CVec::Zero(dim);
        for (int n = 0; n < dim; ++n) (n % 2 == 0 ? cp : cm)(n) = c(n);
        const double tail = std::max(tail_population(cp / cp.norm()), tail_population(cm / cm.norm()));
        if (tail > 1e-9)
            throw TruncationError("cat_basis: tail population " + std::to_string(tail) + " above level dim-3 (dim " +
                                      std::to_string(dim) + ", beta " + std::to_string(beta) + ")",
                                  tail);
        b.cat_plus = cp / cp.norm();
        b.cat_minus = cm / cm.norm();
    }
    b.x_plus = (b.cat_plus + b.cat_minus) / std::sqrt(2.0);
    b.x_minus = (b.cat_plus - b.cat_minus) / std::sqrt(2.0);

    Eigen::Matrix2cd sx, sy, sz, id;
    sx << 0, 1, 1, 0;
    sz << 1, 0, 0, -1;
    sy = I1 * sx * sz;
    id.setIdentity();
    b.sigma_x = b.embed(sx);
    b.sigma_y = b.embed(sy);
    b.sigma_z = b.embed(sz);
    b.identity_C = b.embed(id);
    return b;
}

inline CatBasis cat_basis(double beta) { return cat_basis(beta, default_pcc_dim(beta)); }

/// Normalized cat state N(|alpha> +/- |-alpha>) for complex alpha.
inline CVec cat_vector(int dim, cplx alpha, bool even) {
    CVec c = coherent_coefficients(dim, alpha);
    CVec v = CVec::Zero(dim);
    for (int n = even ? 0 : 1; n < dim; n += 2) v(n) = c(n);
    return v / v.norm();
}

/// Extra Fock levels used when building displacements of large amplitude.
inline constexpr int kDisplacementPadding = 80;

/// Approximate GKP state N0 sum_{n=-1..1} C(2, n+1) D(sqrt(2 pi) n) S_r |0>.
inline QuantumState gkp_state(double r, int dim, double tail_tol = 1e-7) {
    if (r <= 0.0) throw ValidityError("gkp_state: squeezing r must be positive");
    if (dim < 100) throw DimensionError("gkp_state: dim must be >= 100");
    const int big = dim + kDisplacementPadding;
    CVec sq = squeeze(big, r).data * fock_vector(big, 0);
    const double step = std::sqrt(2.0 * kPi);
    const double weights[3] = {1.0, 2.0, 1.0};
    CVec acc = CVec::Zero(big);
    for (int n = -1; n <= 1; ++n) {
        CVec term = n == 0 ? sq : CVec(CMat(displacement(big, step * n).data) * sq);
        acc += weights[n + 1] * term;
    }
    acc /= acc.norm();
    const double tail = acc.segment(dim - 2, 2).squaredNorm();
    if (tail > tail_tol)
        throw TruncationError("gkp_state: tail population " + std::to_string(tail) + " above level dim-3", tail);
    CVec v = acc.head(dim);
    return QuantumState::pure(ModeLayout::fock(dim), v / v.norm());
}

// ---------------------------------------------------------------------------
// Tensor products and partial traces

inline Operator tensor(const std::vector<Operator>& ops) {
    if (ops.empty()) throw DimensionError("tensor: empty operand list");
    Operator out = ops.front();
    for (std::size_t i = 1; i < ops.size(); ++i) {
        SpMat k = Eigen::kroneckerProduct(out.data, ops[i].data).eval();
        out = Operator(out.layout.concat(ops[i].layout), k);
    }
    return out;
}

inline QuantumState tensor(const std::vector<QuantumState>& states) {
    if (states.empty()) throw DimensionError("tensor: empty operand list");
    bool all_pure = std::all_of(states.begin(), states.end(), [](const auto& s) { return s.is_pure(); });
    ModeLayout l = states.front().layout;
    if (all_pure) {
        CVec v = states.front().psi;
        for (std::size_t i = 1; i < states.size(); ++i) {
            v = Eigen::kroneckerProduct(v, states[i].psi).eval();
            l = l.concat(states[i].layout);
        }
        return QuantumState::pure(l, v);
    }
    CMat m = states.front().density_matrix();
    for (std::size_t i = 1; i < states.size(); ++i) {
        m = Eigen::kroneckerProduct(m, states[i].density_matrix()).eval();
        l = l.concat(states[i].layout);
    }
    return QuantumState::density(l, m);
}

/// Embed a single-mode operator at position `slot` of a layout.
inline Operator embed(const ModeLayout& layout, std::size_t slot, const Operator& op) {
    if (slot >= layout.size()) throw DimensionError("embed: slot out of range");
    if (op.layout.size() != 1 || !(op.layout[0] == layout[slot]))
        throw DimensionError("embed: operator layout does not match mode " + std::to_string(slot));
    std::vector<Operator> parts;
    for (std::size_t i = 0; i < layout.size(); ++i)
        parts.push_back(i == slot ? op : identity(ModeLayout({layout[i]})));
    return tensor(parts);
}

/// Index tables splitting each full index into (kept, traced) parts.
struct SplitIndex {
    int keep_dim = 1, trace_dim = 1;
    std::vector<int> full;  // full[t * keep_dim + k]
};

inline SplitIndex split_index(const ModeLayout& layout, const std::set<std::size_t>& keep) {
    const auto dims = layout.dims();
    const std::size_t m = dims.size();
    for (auto k : keep)
        if (k >= m) throw DimensionError("partial_trace: mode index out of range");
    if (keep.empty()) throw DimensionError("partial_trace: keep set is empty");
    SplitIndex s;
    std::vector<int> strides(m, 1);
    for (int i = int(m) - 2; i >= 0; --i) strides[i] = strides[i + 1] * dims[i + 1];
    for (std::size_t i = 0; i < m; ++i) (keep.count(i) ? s.keep_dim : s.trace_dim) *= dims[i];
    s.full.assign(std::size_t(s.keep_dim) * s.trace_dim, 0);
    const int total = layout.total_dim();
    for (int idx = 0; idx < total; ++idx) {
        int rem = idx, k = 0, t = 0;
        for (std::size_t i = 0; i < m; ++i) {
            const int digit = rem / strides[i];
            rem %= strides[i];
            if (keep.count(i))
                k = k * dims[i] + digit;
            else
                t = t * dims[i] + digit;
        }
        s.full[std::size_t(t) * s.keep_dim + k] = idx;
    }
    return s;
}

inline QuantumState partial_trace(const QuantumState& state, const std::set<std::size_t>& keep) {
    const SplitIndex s = split_index(state.layout, keep);
    std::vector<Mode> kept;
    for (auto k : keep) kept.push_back(state.layout[k]);
    CMat out = CMat::Zero(s.keep_dim, s.keep_dim);
    if (state.is_pure()) {
        CMat m(s.keep_dim, s.trace_dim);
        for (int t = 0; t < s.trace_dim; ++t)
            for (int k = 0; k < s.keep_dim; ++k) m(k, t) = state.psi(s.full[std::size_t(t) * s.keep_dim + k]);
        out = m * m.adjoint();
    } else {
        for (int t = 0; t < s.trace_dim; ++t) {
            const int* row = &s.full[std::size_t(t) * s.keep_dim];
            for (int j = 0; j < s.keep_dim; ++j)
                for (int i = 0; i < s.keep_dim; ++i) out(i, j) += state.rho(row[i], row[j]);
        }
    }
    return QuantumState::density(ModeLayout(kept), out);
}

inline cplx expectation(const Operator& op, const QuantumState& state) {
    require_same_layout(op.layout, state.layout, "expectation");
    if (state.is_pure()) return state.psi.dot(op.data * state.psi);
    cplx acc = 0.0;
    for (int k = 0; k < op.data.outerSize(); ++k)
        for (SpMat::InnerIterator it(op.data, k); it; ++it) acc += it.value() * state.rho(it.col(), it.row());
    return acc;
}

}  // namespace catsyn
