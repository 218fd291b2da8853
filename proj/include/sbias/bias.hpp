#pragma once

#include <functional>
#include <optional>
#include <string>

#include "json.hpp"

#include "sbias/geo.hpp"
#include "sbias/weights.hpp"

namespace sbias {

// Receives numerical warnings (ill-conditioned systems). Defaults to stderr.
using WarningHandler = std::function<void(const std::string&)>;
void set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

inline constexpr double condition_warning_threshold = 1e10;

// beta_at * A'Psi A / A'A, on A exactly as given (centre it first when the
// fitted model has an intercept).
double si_bias_nonspatial(const Vector& A, const WeightMatrix& psi, double beta_at);
double si_bias_nonspatial(const Vector& A, const Matrix& psi, double beta_at);

// beta_at * A'Omega^-1 Psi A / A'Omega^-1 A.
double si_bias_spatial(const Vector& A, const WeightMatrix& psi, const Matrix& Omega, double beta_at);
double si_bias_spatial(const Vector& A, const Matrix& psi, const Matrix& Omega, double beta_at);

double poisson_confounding_bias(double beta_u, const PoissonPairSpec& spec);

struct IndirectSCParams {
    double beta_ut = 0.0;
    double rho = 0.0;
    double sigma_a = 1.0;
    double sigma_u = 1.0;
    Matrix Omega_a;
    Matrix Omega_u;
    double mu_a = 0.0;
    Matrix Phi;

    static IndirectSCParams from_pair(const GaussianPairSpec& pair, const DistanceMatrix& d, const Matrix& Phi,
                                      double beta_ut);
};

// M = rho sigma_a sigma_u Omega_u (sigma_a^2 Omega_a + sigma_u^2 Omega_u)^-1.
Matrix m_matrix(const IndirectSCParams& p);

// beta_ut * A'W Phi M (A - mu_a 1) / A'W A with W = I or Omega^-1.
double indirect_sc_bias(const Vector& A, const IndirectSCParams& p, const std::optional<Matrix>& Omega = std::nullopt);

struct DirectSCParams {
    double beta_u = 0.0;
    double rho = 0.0;
    double sigma_u = 1.0;
    double sigma_a = 1.0;
    double sigma_c = 1.0;
    Matrix Omega_u;  // Omega(omega_u)
    Matrix Omega_c;  // Omega(omega_c)
    double mu_a = 0.0;
    // Literal variant: p_c = raw_sigma2 / (sigma_c^2 + sigma_u^2).
    std::optional<double> raw_sigma2;

    double p_c() const;

    // Parameters under which the formula equals the exact conditional bias of
    // the Gaussian pair model: the "c" scale is the confounder-driven one.
    static DirectSCParams from_pair(const GaussianPairSpec& pair, const DistanceMatrix& d, double beta_u);
};

// Applies K = p_c (p_c I + (1 - p_c) Omega_u Omega_c^-1)^-1 to v.
Vector apply_k(const DirectSCParams& p, const Vector& v);

// beta_u rho (sigma_u / sigma_a) [(A*'W A*)^-1 A*'W K (A - mu_a 1)]_2 with A* = [1 A].
double direct_sc_bias(const Vector& A, const DirectSCParams& p, const std::optional<Matrix>& Omega = std::nullopt);

// SI and indirect terms on A centred for an intercept model (ordinary mean, or
// the GLS mean when Omega is given); the direct term on raw A.
double combined_bias(const Vector& A, const WeightMatrix& psi, double beta_at, const DirectSCParams& direct,
                     const IndirectSCParams& indirect, const std::optional<Matrix>& Omega = std::nullopt);

double correct_for_interference(double estimate, double beta_at, const Vector& A, const WeightMatrix& psi,
                                const std::optional<Matrix>& Omega = std::nullopt);

// A minus its (GLS) mean: the part of A orthogonal to the intercept under W.
Vector center_for_intercept(const Vector& A, const std::optional<Matrix>& Omega = std::nullopt);

// Coefficient `column` of the (GLS) projection of v onto the columns of X:
// the conditional bias contributed by an omitted component with mean v.
double projection_bias(const Matrix& X, const Vector& v, Eigen::Index column,
                       const std::optional<Matrix>& Omega = std::nullopt);

struct BiasRecord {
    std::string formula;
    std::string inputs_digest;
    double value = 0.0;
};

// FNV-1a over the raw bytes of the inputs, hex encoded.
class InputDigest {
public:
    InputDigest& add(double x);
    InputDigest& add(const Eigen::Ref<const Matrix>& m);
    InputDigest& add(const std::string& s);
    std::string hex() const;

private:
    void bytes(const void* data, std::size_t n);
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

void to_json(nlohmann::json& j, const BiasRecord& r);

}  // namespace sbias
