#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "sbias/rng.hpp"

namespace sbias {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct Point {
    double x = 0.0;
    double y = 0.0;
};

struct Bounds {
    double xmin = 0.0;
    double xmax = 10.0;
    double ymin = 0.0;
    double ymax = 10.0;

    bool contains(const Point& p) const noexcept {
        return p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax;
    }
    bool degenerate() const noexcept { return !(xmax > xmin) || !(ymax > ymin); }
};

// Planar point set. Construction enforces n >= 2, containment, and that no two
// points coincide.
class LocationSet {
public:
    LocationSet(std::vector<Point> points, Bounds bounds);

    std::size_t size() const noexcept { return points_.size(); }
    const std::vector<Point>& points() const noexcept { return points_; }
    const Point& operator[](std::size_t i) const { return points_[i]; }
    const Bounds& bounds() const noexcept { return bounds_; }

private:
    std::vector<Point> points_;
    Bounds bounds_;
};

// Uniform sampling over `bounds`. Coincident draws are rejected and redrawn
// (at most 100 retries per point).
LocationSet sample_locations(std::size_t n, const Bounds& bounds, std::uint64_t seed);

enum class DistanceMetric { planar, geodesic };

class DistanceMatrix {
public:
    explicit DistanceMatrix(Matrix values);

    const Matrix& values() const noexcept { return d_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(d_.rows()); }
    double operator()(std::size_t i, std::size_t j) const { return d_(Eigen::Index(i), Eigen::Index(j)); }
    double max_distance() const noexcept { return d_.maxCoeff(); }
    double min_offdiagonal() const noexcept;

private:
    Matrix d_;
};

// Euclidean distances. Geodesic treats x as longitude and y as latitude in
// degrees and returns great-circle kilometres.
DistanceMatrix distance_matrix(const LocationSet& loc, DistanceMetric metric = DistanceMetric::planar);

enum class CovarianceFamily { exponential, matern, identity };

// Sigma = variance * Omega(range) + nugget * I.
// Matern smoothness is restricted to the closed forms 0.5, 1.5, 2.5 with the
// scaling in which 0.5 reduces to exp(-d / range).
struct CovarianceSpec {
    CovarianceFamily family = CovarianceFamily::exponential;
    double range = 1.0;
    double smoothness = 0.5;
    double variance = 1.0;
    double nugget = 0.0;

    void validate() const;

    static CovarianceSpec exponential(double range, double variance = 1.0, double nugget = 0.0) {
        return {CovarianceFamily::exponential, range, 0.5, variance, nugget};
    }
    static CovarianceSpec iid(double variance = 1.0) {
        return {CovarianceFamily::identity, 1.0, 0.5, variance, 0.0};
    }
};

double correlation(double distance, const CovarianceSpec& spec);
Matrix correlation_matrix(const DistanceMatrix& d, const CovarianceSpec& spec);
Matrix covariance_matrix(const DistanceMatrix& d, const CovarianceSpec& spec);

enum class FieldKind { normal, poisson, binary };

struct SpatialFieldSample {
    Vector values;
    FieldKind kind = FieldKind::normal;
};

// Lower Cholesky factor of cov + jitter * I, where the jitter starts at
// 1e-8 * scale and grows by x10 up to 1e-4 * scale (scale = mean diagonal).
// Reusable across many draws.
class GaussianSampler {
public:
    GaussianSampler(Vector mean, const Matrix& cov);

    Vector draw(Engine& engine) const;
    Vector draw_from_normals(const Vector& z) const { return mean_ + factor_.triangularView<Eigen::Lower>() * z; }

    const Matrix& factor() const noexcept { return factor_; }
    double jitter() const noexcept { return jitter_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(mean_.size()); }

private:
    Vector mean_;
    Matrix factor_;
    double jitter_ = 0.0;
};

// Returns the lower factor L with L L^T = cov + jitter I, escalating jitter as
// described above. Throws NumericalError (with the final jitter) on failure.
Matrix jittered_cholesky(const Matrix& cov, double* used_jitter = nullptr);

Vector standard_normals(std::size_t n, Engine& engine);

SpatialFieldSample sample_gp(const Vector& mean, const Matrix& cov, std::uint64_t seed);

// Non-Gaussian fields are driven by a latent Gaussian field:
//   poisson: counts with rate exp(poisson_intercept + latent)
//   binary:  1 if latent > binary_threshold else 0 (strict)
struct LatentFieldSpec {
    Vector mean;
    Matrix cov;
    double poisson_intercept = 0.0;
    double binary_threshold = 0.0;
};

Vector transform_latent(FieldKind kind, const Vector& latent, double poisson_intercept, double binary_threshold,
                        Engine& engine);

SpatialFieldSample sample_field(FieldKind kind, const LatentFieldSpec& latent, std::uint64_t seed);

// Treatment/confounder pair with
//   Var(U) = sigma_u^2 Omega_u,  Var(A) = sigma_a^2 Omega_a + sigma_u^2 Omega_u,
//   Cov(A, U) = rho sigma_a sigma_u Omega_u,
// i.e. A = A_a + A_u where A_u carries the confounder-related scale.
struct GaussianPairSpec {
    double rho = 0.0;
    double sigma_a = 1.0;
    double sigma_u = 1.0;
    CovarianceSpec corr_a = CovarianceSpec::exponential(2.0);
    CovarianceSpec corr_u = CovarianceSpec::exponential(2.0);
    double mu_a = 0.0;
    double mu_u = 0.0;

    void validate() const;
};

struct FieldPair {
    SpatialFieldSample treatment;
    SpatialFieldSample confounder;
};

// Stacked (A, U) covariance, treatment block first.
Matrix pair_covariance(const GaussianPairSpec& spec, const DistanceMatrix& d);

// Joint Cholesky of the stacked 2n x 2n covariance. Because the treatment
// block comes first, A depends only on the treatment stream and U given A only
// on the confounder stream; holding the treatment stream fixed yields
// conditional draws of U | A.
class GaussianPairSampler {
public:
    GaussianPairSampler(const GaussianPairSpec& spec, const DistanceMatrix& d);

    FieldPair draw(Engine& treatment_stream, Engine& confounder_stream) const;
    std::size_t size() const noexcept { return n_; }

private:
    std::size_t n_;
    Vector mean_;
    Matrix factor_;
};

FieldPair sample_gaussian_pair(const GaussianPairSpec& spec, const DistanceMatrix& d, std::uint64_t seed);

struct PoissonPairSpec {
    double delta1 = 1.0;
    double delta2 = 1.0;

    void validate() const;
    double confounder_share() const noexcept { return delta2 / (delta1 + delta2); }
};

// A_a ~ Poisson(delta1), U ~ Poisson(delta2) independent per location; A = A_a + U.
FieldPair sample_poisson_pair(const PoissonPairSpec& spec, std::size_t n, std::uint64_t seed);
FieldPair sample_poisson_pair(const PoissonPairSpec& spec, std::size_t n, Engine& treatment_stream,
                              Engine& confounder_stream);

// U | A = a ~ Binomial(a, delta2 / (delta1 + delta2)), elementwise.
SpatialFieldSample sample_poisson_confounder_given(const PoissonPairSpec& spec, const Vector& treatment,
                                                   Engine& engine);

}  // namespace sbias
