#include "sbias/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>
#include <utility>

#include "sbias/error.hpp"

namespace sbias {

LocationSet::LocationSet(std::vector<Point> points, Bounds bounds) : points_(std::move(points)), bounds_(bounds) {
    if (points_.size() < 2) throw InvalidArgument("a location set needs at least 2 points");
    if (bounds_.degenerate()) throw InvalidArgument("degenerate bounds");
    for (std::size_t i = 0; i < points_.size(); ++i) {
        const auto& p = points_[i];
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw InvalidArgument("non-finite coordinate at point " + std::to_string(i));
        if (!bounds_.contains(p)) throw InvalidArgument("point " + std::to_string(i) + " lies outside the bounds");
    }
    std::vector<std::pair<double, double>> sorted;
    sorted.reserve(points_.size());
    for (const auto& p : points_) sorted.emplace_back(p.x, p.y);
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw DegenerateGeometry("coincident points in location set");
}

LocationSet sample_locations(std::size_t n, const Bounds& bounds, std::uint64_t seed) {
    if (n < 2) throw InvalidArgument("sample_locations: n must be at least 2");
    if (bounds.degenerate()) throw InvalidArgument("sample_locations: degenerate bounds");
    Engine engine = make_engine(seed);
    std::uniform_real_distribution<double> ux(bounds.xmin, bounds.xmax);
    std::uniform_real_distribution<double> uy(bounds.ymin, bounds.ymax);
    std::set<std::pair<double, double>> seen;
    std::vector<Point> points;
    points.reserve(n);
    constexpr int max_retries = 100;
    while (points.size() < n) {
        int attempt = 0;
        for (;; ++attempt) {
            if (attempt > max_retries) throw DegenerateGeometry("sample_locations: could not draw a non-coincident point");
            Point p{ux(engine), uy(engine)};
            if (seen.emplace(p.x, p.y).second) {
                points.push_back(p);
                break;
            }
        }
    }
    return LocationSet(std::move(points), bounds);
}

DistanceMatrix::DistanceMatrix(Matrix values) : d_(std::move(values)) {
    if (d_.rows() != d_.cols()) throw InvalidArgument("distance matrix must be square");
    if (d_.rows() < 2) throw InvalidArgument("distance matrix needs at least 2 points");
    const Eigen::Index n = d_.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (d_(i, i) != 0.0) throw InvalidArgument("distance matrix must have a zero diagonal");
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if (d_(i, j) != d_(j, i)) throw InvalidArgument("distance matrix must be symmetric");
            if (!(d_(i, j) > 0.0))
                throw DegenerateGeometry("coincident points " + std::to_string(i) + " and " + std::to_string(j));
        }
    }
}

double DistanceMatrix::min_offdiagonal() const noexcept {
    double m = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < d_.cols(); ++j)
        for (Eigen::Index i = 0; i < j; ++i) m = std::min(m, d_(i, j));
    return m;
}

namespace {

double haversine_km(const Point& a, const Point& b) {
    constexpr double earth_radius_km = 6371.0088;
    constexpr double rad = std::numbers::pi / 180.0;
    const double dlat = (b.y - a.y) * rad;
    const double dlon = (b.x - a.x) * rad;
    const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(a.y * rad) * std::cos(b.y * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * earth_radius_km * std::asin(std::min(1.0, std::sqrt(h)));
}

}  // namespace

DistanceMatrix distance_matrix(const LocationSet& loc, DistanceMetric metric) {
    const auto n = static_cast<Eigen::Index>(loc.size());
    Matrix d = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Point& a = loc[std::size_t(i)];
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const Point& b = loc[std::size_t(j)];
            double v = metric == DistanceMetric::planar ? std::hypot(a.x - b.x, a.y - b.y) : haversine_km(a, b);
            if (!(v > 0.0))
                throw DegenerateGeometry("coincident points " + std::to_string(i) + " and " + std::to_string(j));
            d(i, j) = v;
            d(j, i) = v;
        }
    }
    return DistanceMatrix(std::move(d));
}

void CovarianceSpec::validate() const {
    if (!(range > 0.0) || !std::isfinite(range)) throw InvalidArgument("covariance range must be positive");
    if (!(variance >= 0.0) || !std::isfinite(variance)) throw InvalidArgument("covariance variance must be nonnegative");
    if (!(nugget >= 0.0) || !std::isfinite(nugget)) throw InvalidArgument("covariance nugget must be nonnegative");
    if (family == CovarianceFamily::matern && smoothness != 0.5 && smoothness != 1.5 && smoothness != 2.5)
        throw InvalidArgument("matern smoothness must be one of 0.5, 1.5, 2.5");
}

double correlation(double distance, const CovarianceSpec& spec) {
    if (distance == 0.0) return 1.0;
    const double r = distance / spec.range;
    switch (spec.family) {
        case CovarianceFamily::identity:
            return 0.0;
        case CovarianceFamily::exponential:
            return std::exp(-r);
        case CovarianceFamily::matern:
            if (spec.smoothness == 0.5) return std::exp(-r);
            if (spec.smoothness == 1.5) {
                const double s = std::sqrt(3.0) * r;
                return (1.0 + s) * std::exp(-s);
            }
            {
                const double s = std::sqrt(5.0) * r;
                return (1.0 + s + s * s / 3.0) * std::exp(-s);
            }
    }
    return 0.0;
}

Matrix correlation_matrix(const DistanceMatrix& d, const CovarianceSpec& spec) {
    spec.validate();
    const auto n = static_cast<Eigen::Index>(d.size());
    if (spec.family == CovarianceFamily::identity) return Matrix::Identity(n, n);
    Matrix c(n, n);
    const Matrix& dv = d.values();
    for (Eigen::Index j = 0; j < n; ++j) {
        c(j, j) = 1.0;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            const double v = correlation(dv(i, j), spec);
            c(i, j) = v;
            c(j, i) = v;
        }
    }
    return c;
}

Matrix covariance_matrix(const DistanceMatrix& d, const CovarianceSpec& spec) {
    Matrix c = correlation_matrix(d, spec) * spec.variance;
    c.diagonal().array() += spec.nugget;
    return c;
}

Matrix jittered_cholesky(const Matrix& cov, double* used_jitter) {
    if (cov.rows() != cov.cols()) throw InvalidArgument("covariance must be square");
    const auto n = cov.rows();
    const double scale = n > 0 ? cov.diagonal().mean() : 0.0;
    if (scale == 0.0 && cov.isZero(0.0)) {
        if (used_jitter) *used_jitter = 0.0;
        return Matrix::Zero(n, n);
    }
    if (!(scale > 0.0)) throw NumericalError("covariance has a nonpositive mean diagonal");
    Matrix work;
    for (double rel = 1e-8; rel <= 1e-4 * 1.0000001; rel *= 10.0) {
        work = cov;
        work.diagonal().array() += rel * scale;
        Eigen::LLT<Eigen::Ref<Matrix>> llt(work);
        if (llt.info() == Eigen::Success) {
            if (used_jitter) *used_jitter = rel * scale;
            work.triangularView<Eigen::StrictlyUpper>().setZero();
            return work;
        }
    }
    std::ostringstream msg;
    msg << "Cholesky factorization failed after jitter up to " << 1e-4 * scale << " (n=" << n
        << ", min diagonal=" << cov.diagonal().minCoeff() << ")";
    throw NumericalError(msg.str());
}

GaussianSampler::GaussianSampler(Vector mean, const Matrix& cov) : mean_(std::move(mean)) {
    if (cov.rows() != mean_.size()) throw InvalidArgument("mean and covariance dimensions differ");
    factor_ = jittered_cholesky(cov, &jitter_);
}

Vector standard_normals(std::size_t n, Engine& engine) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector z(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(engine);
    return z;
}

Vector GaussianSampler::draw(Engine& engine) const { return draw_from_normals(standard_normals(size(), engine)); }

SpatialFieldSample sample_gp(const Vector& mean, const Matrix& cov, std::uint64_t seed) {
    GaussianSampler sampler(mean, cov);
    Engine engine = make_engine(seed);
    return {sampler.draw(engine), FieldKind::normal};
}

Vector transform_latent(FieldKind kind, const Vector& latent, double poisson_intercept, double binary_threshold,
                        Engine& engine) {
    switch (kind) {
        case FieldKind::normal:
            return latent;
        case FieldKind::binary:
            return (latent.array() > binary_threshold).cast<double>().matrix();
        case FieldKind::poisson: {
            Vector out(latent.size());
            for (Eigen::Index i = 0; i < latent.size(); ++i) {
                std::poisson_distribution<long> pois(std::exp(poisson_intercept + latent(i)));
                out(i) = static_cast<double>(pois(engine));
            }
            return out;
        }
    }
    return latent;
}

SpatialFieldSample sample_field(FieldKind kind, const LatentFieldSpec& latent, std::uint64_t seed) {
    GaussianSampler sampler(latent.mean, latent.cov);
    Engine engine = make_engine(seed);
    Vector z = sampler.draw(engine);
    return {transform_latent(kind, z, latent.poisson_intercept, latent.binary_threshold, engine), kind};
}

void GaussianPairSpec::validate() const {
    if (!(rho >= -1.0 && rho <= 1.0)) throw InvalidArgument("rho must lie in [-1, 1]");
    if (!(sigma_a > 0.0) || !(sigma_u > 0.0)) throw InvalidArgument("sigma_a and sigma_u must be positive");
    corr_a.validate();
    corr_u.validate();
}

Matrix pair_covariance(const GaussianPairSpec& spec, const DistanceMatrix& d) {
    spec.validate();
    const auto n = static_cast<Eigen::Index>(d.size());
    const Matrix omega_a = correlation_matrix(d, spec.corr_a);
    const Matrix omega_u = correlation_matrix(d, spec.corr_u);
    Matrix c(2 * n, 2 * n);
    c.topLeftCorner(n, n) = spec.sigma_a * spec.sigma_a * omega_a + spec.sigma_u * spec.sigma_u * omega_u;
    c.bottomRightCorner(n, n) = spec.sigma_u * spec.sigma_u * omega_u;
    c.topRightCorner(n, n) = spec.rho * spec.sigma_a * spec.sigma_u * omega_u;
    c.bottomLeftCorner(n, n) = c.topRightCorner(n, n).transpose();
    return c;
}

GaussianPairSampler::GaussianPairSampler(const GaussianPairSpec& spec, const DistanceMatrix& d) : n_(d.size()) {
    const Matrix joint = pair_covariance(spec, d);
    const auto n = static_cast<Eigen::Index>(n_);
    try {
        (void)jittered_cholesky(joint.topLeftCorner(n, n));
    } catch (const NumericalError&) {
        throw InvalidArgument("gaussian pair: treatment block is not positive semidefinite");
    }
    try {
        (void)jittered_cholesky(joint.bottomRightCorner(n, n));
    } catch (const NumericalError&) {
        throw InvalidArgument("gaussian pair: confounder block is not positive semidefinite");
    }
    try {
        factor_ = jittered_cholesky(joint);
    } catch (const NumericalError&) {
        throw InvalidArgument("gaussian pair: cross-covariance block makes the joint covariance indefinite");
    }
    mean_.resize(2 * n);
    mean_.head(n).setConstant(spec.mu_a);
    mean_.tail(n).setConstant(spec.mu_u);
}

FieldPair GaussianPairSampler::draw(Engine& treatment_stream, Engine& confounder_stream) const {
    const auto n = static_cast<Eigen::Index>(n_);
    Vector z(2 * n);
    z.head(n) = standard_normals(n_, treatment_stream);
    z.tail(n) = standard_normals(n_, confounder_stream);
    Vector x = mean_ + factor_.triangularView<Eigen::Lower>() * z;
    return {{x.head(n), FieldKind::normal}, {x.tail(n), FieldKind::normal}};
}

FieldPair sample_gaussian_pair(const GaussianPairSpec& spec, const DistanceMatrix& d, std::uint64_t seed) {
    GaussianPairSampler sampler(spec, d);
    Engine a = make_engine(stream_seed(seed, StreamId::treatment));
    Engine u = make_engine(stream_seed(seed, StreamId::confounder));
    return sampler.draw(a, u);
}

void PoissonPairSpec::validate() const {
    if (!(delta1 > 0.0) || !(delta2 > 0.0) || !std::isfinite(delta1) || !std::isfinite(delta2))
        throw InvalidArgument("poisson pair rates must be positive");
}

FieldPair sample_poisson_pair(const PoissonPairSpec& spec, std::size_t n, Engine& treatment_stream,
                              Engine& confounder_stream) {
    spec.validate();
    std::poisson_distribution<long> pa(spec.delta1);
    std::poisson_distribution<long> pu(spec.delta2);
    Vector a(static_cast<Eigen::Index>(n));
    Vector u(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double own = static_cast<double>(pa(treatment_stream));
        u(i) = static_cast<double>(pu(confounder_stream));
        a(i) = own + u(i);
    }
    return {{a, FieldKind::poisson}, {u, FieldKind::poisson}};
}

FieldPair sample_poisson_pair(const PoissonPairSpec& spec, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw InvalidArgument("sample_poisson_pair: n must be positive");
    Engine a = make_engine(stream_seed(seed, StreamId::treatment));
    Engine u = make_engine(stream_seed(seed, StreamId::confounder));
    return sample_poisson_pair(spec, n, a, u);
}

SpatialFieldSample sample_poisson_confounder_given(const PoissonPairSpec& spec, const Vector& treatment,
                                                   Engine& engine) {
    spec.validate();
    Vector u(treatment.size());
    for (Eigen::Index i = 0; i < treatment.size(); ++i) {
        const double a = treatment(i);
        if (a < 0.0 || a != std::floor(a)) throw InvalidArgument("poisson treatment must hold nonnegative integers");
        std::binomial_distribution<long> bin(static_cast<long>(a), spec.confounder_share());
        u(i) = static_cast<double>(bin(engine));
    }
    return {u, FieldKind::poisson};
}

}  // namespace sbias
