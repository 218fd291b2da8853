#include "sbias/bias.hpp"

#include <cmath>
#include <cstring>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>

#include "sbias/error.hpp"

namespace sbias {

namespace {

std::mutex& handler_mutex() {
    static std::mutex m;
    return m;
}

WarningHandler& handler() {
    static WarningHandler h = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
    return h;
}

using Llt = Eigen::LLT<Matrix>;

Llt factor_pd(const Matrix& m, const char* what) {
    if (m.rows() != m.cols()) throw InvalidArgument(std::string(what) + " must be square");
    Llt llt(m);
    if (llt.info() != Eigen::Success) throw InvalidArgument(std::string(what) + " is not positive definite");
    // 1-norm reciprocal condition estimate, O(n^2) given the factor.
    const double cond = 1.0 / llt.rcond();
    if (cond > condition_warning_threshold) {
        std::ostringstream msg;
        msg << what << " is ill-conditioned (condition number ~ " << std::scientific << std::setprecision(2)
            << cond << ")";
        warn(msg.str());
    }
    return llt;
}

void check_vector(const Vector& A, Eigen::Index n, const char* what) {
    if (A.size() != n) throw InvalidArgument(std::string(what) + ": dimension mismatch");
    if (!A.allFinite()) throw InvalidArgument(std::string(what) + ": non-finite treatment values");
    if (A.squaredNorm() == 0.0) throw InvalidArgument(std::string(what) + ": treatment vector is zero");
}

// a' W b / a' W a, W = I or Omega^-1.
double weighted_ratio(const Vector& a, const Vector& b, const std::optional<Matrix>& Omega, const char* what) {
    if (!Omega) return a.dot(b) / a.squaredNorm();
    if (Omega->rows() != a.size()) throw InvalidArgument(std::string(what) + ": covariance dimension mismatch");
    Llt llt = factor_pd(*Omega, "covariance");
    const Vector aw = llt.matrixL().solve(a);
    const Vector bw = llt.matrixL().solve(b);
    return aw.dot(bw) / aw.squaredNorm();
}

// M (A - mu 1) without forming M.
Vector m_times(const IndirectSCParams& p, const Vector& x) {
    const Matrix denom = p.sigma_a * p.sigma_a * p.Omega_a + p.sigma_u * p.sigma_u * p.Omega_u;
    Llt llt = factor_pd(denom, "M denominator");
    return p.rho * p.sigma_a * p.sigma_u * (p.Omega_u * llt.solve(x));
}

void check_indirect(const IndirectSCParams& p, Eigen::Index n) {
    if (p.Omega_a.rows() != n || p.Omega_u.rows() != n || p.Phi.rows() != n || p.Phi.cols() != n)
        throw InvalidArgument("indirect confounding parameters do not match the treatment length");
}

double indirect_term(const Vector& outer, const Vector& raw, const IndirectSCParams& p,
                     const std::optional<Matrix>& Omega) {
    if (p.beta_ut == 0.0 || p.rho == 0.0) return 0.0;
    const Vector v = p.Phi * m_times(p, (raw.array() - p.mu_a).matrix());
    return p.beta_ut * weighted_ratio(outer, v, Omega, "indirect_sc_bias");
}

}  // namespace

void set_warning_handler(WarningHandler h) {
    std::lock_guard lock(handler_mutex());
    handler() = std::move(h);
}

void warn(const std::string& message) {
    std::lock_guard lock(handler_mutex());
    if (handler()) handler()(message);
}

double si_bias_nonspatial(const Vector& A, const Matrix& psi, double beta_at) {
    check_vector(A, psi.rows(), "si_bias_nonspatial");
    if (beta_at == 0.0) return 0.0;
    return beta_at * weighted_ratio(A, psi * A, std::nullopt, "si_bias_nonspatial");
}

double si_bias_nonspatial(const Vector& A, const WeightMatrix& psi, double beta_at) {
    return si_bias_nonspatial(A, psi.values(), beta_at);
}

double si_bias_spatial(const Vector& A, const Matrix& psi, const Matrix& Omega, double beta_at) {
    check_vector(A, psi.rows(), "si_bias_spatial");
    if (Omega.rows() != A.size()) throw InvalidArgument("si_bias_spatial: covariance dimension mismatch");
    if (beta_at == 0.0) {
        factor_pd(Omega, "covariance");
        return 0.0;
    }
    return beta_at * weighted_ratio(A, psi * A, Omega, "si_bias_spatial");
}

double si_bias_spatial(const Vector& A, const WeightMatrix& psi, const Matrix& Omega, double beta_at) {
    return si_bias_spatial(A, psi.values(), Omega, beta_at);
}

double poisson_confounding_bias(double beta_u, const PoissonPairSpec& spec) {
    spec.validate();
    return beta_u * spec.confounder_share();
}

IndirectSCParams IndirectSCParams::from_pair(const GaussianPairSpec& pair, const DistanceMatrix& d, const Matrix& Phi,
                                             double beta_ut) {
    pair.validate();
    return {beta_ut,
            pair.rho,
            pair.sigma_a,
            pair.sigma_u,
            correlation_matrix(d, pair.corr_a),
            correlation_matrix(d, pair.corr_u),
            pair.mu_a,
            Phi};
}

Matrix m_matrix(const IndirectSCParams& p) {
    const auto n = p.Omega_u.rows();
    if (p.Omega_a.rows() != n || p.Omega_a.cols() != n || p.Omega_u.cols() != n)
        throw InvalidArgument("m_matrix: correlation matrices differ in size");
    if (p.rho == 0.0) return Matrix::Zero(n, n);
    const Matrix denom = p.sigma_a * p.sigma_a * p.Omega_a + p.sigma_u * p.sigma_u * p.Omega_u;
    Llt llt = factor_pd(denom, "M denominator");
    // Omega_u D^-1 = (D^-1 Omega_u)' since both are symmetric.
    return p.rho * p.sigma_a * p.sigma_u * llt.solve(p.Omega_u).transpose();
}

double indirect_sc_bias(const Vector& A, const IndirectSCParams& p, const std::optional<Matrix>& Omega) {
    check_vector(A, A.size(), "indirect_sc_bias");
    check_indirect(p, A.size());
    return indirect_term(A, A, p, Omega);
}

double DirectSCParams::p_c() const {
    const double denom = sigma_c * sigma_c + sigma_u * sigma_u;
    return (raw_sigma2 ? *raw_sigma2 : sigma_c * sigma_c) / denom;
}

DirectSCParams DirectSCParams::from_pair(const GaussianPairSpec& pair, const DistanceMatrix& d, double beta_u) {
    pair.validate();
    DirectSCParams p;
    p.beta_u = beta_u;
    p.rho = pair.rho;
    p.sigma_u = pair.sigma_a;
    p.sigma_a = pair.sigma_u;
    p.sigma_c = pair.sigma_u;
    p.Omega_u = correlation_matrix(d, pair.corr_a);
    p.Omega_c = correlation_matrix(d, pair.corr_u);
    p.mu_a = pair.mu_a;
    return p;
}

Vector apply_k(const DirectSCParams& p, const Vector& v) {
    if (!(p.sigma_u > 0.0) || !(p.sigma_a > 0.0) || !(p.sigma_c > 0.0))
        throw InvalidArgument("direct confounding: standard deviations must be positive");
    const double pc = p.p_c();
    if (!(pc > 0.0 && pc < 1.0)) throw InvalidArgument("direct confounding: p_c must lie in (0, 1)");
    const auto n = v.size();
    if (p.Omega_u.rows() != n || p.Omega_c.rows() != n) throw InvalidArgument("direct confounding: dimension mismatch");
    // (p I + (1-p) Ou Oc^-1)^-1 = Oc (p Oc + (1-p) Ou)^-1.
    Llt llt = factor_pd(pc * p.Omega_c + (1.0 - pc) * p.Omega_u, "K denominator");
    return pc * (p.Omega_c * llt.solve(v));
}

double direct_sc_bias(const Vector& A, const DirectSCParams& p, const std::optional<Matrix>& Omega) {
    check_vector(A, A.size(), "direct_sc_bias");
    if (p.beta_u == 0.0 || p.rho == 0.0) return 0.0;
    const auto n = A.size();
    Matrix Astar(n, 2);
    Astar.col(0).setOnes();
    Astar.col(1) = A;
    const Vector kv = apply_k(p, (A.array() - p.mu_a).matrix());
    Matrix Xw = Astar;
    Vector vw = kv;
    if (Omega) {
        if (Omega->rows() != n) throw InvalidArgument("direct_sc_bias: covariance dimension mismatch");
        Llt llt = factor_pd(*Omega, "covariance");
        Xw = llt.matrixL().solve(Astar);
        vw = llt.matrixL().solve(kv);
    }
    const Matrix gram = Xw.transpose() * Xw;
    Llt g(gram);
    if (g.info() != Eigen::Success || std::abs(gram.determinant()) <= 1e-12 * gram.squaredNorm())
        throw InvalidArgument("direct_sc_bias: [1 A] is rank deficient");
    const Vector coef = g.solve(Xw.transpose() * vw);
    return p.beta_u * p.rho * (p.sigma_u / p.sigma_a) * coef(1);
}

Vector center_for_intercept(const Vector& A, const std::optional<Matrix>& Omega) {
    if (!Omega) return (A.array() - A.mean()).matrix();
    Llt llt = factor_pd(*Omega, "covariance");
    const Vector w = llt.solve(Vector::Ones(A.size()));
    return (A.array() - w.dot(A) / w.sum()).matrix();
}

double combined_bias(const Vector& A, const WeightMatrix& psi, double beta_at, const DirectSCParams& direct,
                     const IndirectSCParams& indirect, const std::optional<Matrix>& Omega) {
    check_vector(A, Eigen::Index(psi.size()), "combined_bias");
    check_indirect(indirect, A.size());
    const Vector Ac = center_for_intercept(A, Omega);
    const double si =
        Omega ? si_bias_spatial(Ac, psi, *Omega, beta_at) : si_bias_nonspatial(Ac, psi, beta_at);
    return si + direct_sc_bias(A, direct, Omega) + indirect_term(Ac, A, indirect, Omega);
}

double correct_for_interference(double estimate, double beta_at, const Vector& A, const WeightMatrix& psi,
                                const std::optional<Matrix>& Omega) {
    const double b = Omega ? si_bias_spatial(A, psi, *Omega, beta_at) : si_bias_nonspatial(A, psi, beta_at);
    return estimate - b;
}

double projection_bias(const Matrix& X, const Vector& v, Eigen::Index column, const std::optional<Matrix>& Omega) {
    if (X.rows() != v.size()) throw InvalidArgument("projection_bias: dimension mismatch");
    if (column < 0 || column >= X.cols()) throw InvalidArgument("projection_bias: column out of range");
    Matrix Xw = X;
    Vector vw = v;
    if (Omega) {
        Llt llt = factor_pd(*Omega, "covariance");
        Xw = llt.matrixL().solve(X);
        vw = llt.matrixL().solve(v);
    }
    Llt g(Xw.transpose() * Xw);
    if (g.info() != Eigen::Success) throw InvalidArgument("projection_bias: design is rank deficient");
    return g.solve(Xw.transpose() * vw)(column);
}

void InputDigest::bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h_ ^= p[i];
        h_ *= 0x100000001b3ULL;
    }
}

InputDigest& InputDigest::add(double x) {
    bytes(&x, sizeof x);
    return *this;
}

InputDigest& InputDigest::add(const Eigen::Ref<const Matrix>& m) {
    const Eigen::Index dims[2] = {m.rows(), m.cols()};
    bytes(dims, sizeof dims);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) add(m(i, j));
    return *this;
}

InputDigest& InputDigest::add(const std::string& s) {
    bytes(s.data(), s.size());
    return *this;
}

std::string InputDigest::hex() const {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << h_;
    return s.str();
}

void to_json(nlohmann::json& j, const BiasRecord& r) {
    j = nlohmann::json{{"formula", r.formula}, {"inputs_digest", r.inputs_digest}, {"value", r.value}};
}

}  // namespace sbias
