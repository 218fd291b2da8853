#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "sbias/geo.hpp"

namespace sbias {

inline constexpr double default_level = 0.95;

struct FitResult {
    std::vector<std::string> names;
    Vector coef;
    Matrix coef_cov;
    Vector se;
    Vector ci_low;
    Vector ci_high;
    double level = default_level;
    double sigma2 = 0.0;
    double loglik = 0.0;
    double aic = 0.0;
    int n_params = 0;
    std::optional<CovarianceSpec> fitted_cov;
    int evaluations = 0;

    std::size_t index_of(const std::string& name) const;
};

struct Interval {
    double low;
    double high;
};

std::vector<Interval> wald_ci(const FitResult& fit, double level);

// Residual variance RSS/(n-p) for the standard errors; the log-likelihood
// uses the ML variance RSS/n with p+1 estimated parameters.
FitResult ols_fit(const Matrix& X, const Vector& Y, double level = default_level);

// Omega is the error covariance up to scale; whitening by its Cholesky factor.
FitResult gls_fit(const Matrix& X, const Vector& Y, const Matrix& Omega, double level = default_level);

struct MlOptions {
    double level = default_level;
    CovarianceFamily family = CovarianceFamily::exponential;
    double smoothness = 0.5;
    bool nugget = true;
    int max_evaluations = 500;
    int restarts = 3;
    double tolerance = 1e-4;
    // Starting ranges as fractions of the largest distance, paired with
    // starting nugget shares.
    std::vector<std::pair<double, double>> starts{{0.05, 0.1}, {0.2, 0.5}, {0.5, 0.25}};
};

// Gaussian ML with Sigma = s2 * ((1-f) Omega(range) + f I). beta and s2 are
// profiled; Nelder-Mead runs over (log range, logit f). Parameters counted in
// the AIC: p coefficients, s2, range and (with a nugget) f.
FitResult ml_fit(const Matrix& X, const Vector& Y, const DistanceMatrix& d, const MlOptions& options = {});

// Profile negative log-likelihood (without the constant) at a given range and
// nugget share; exposed for tests.
double ml_profile_objective(const Matrix& X, const Vector& Y, const DistanceMatrix& d, const MlOptions& options,
                            double range, double nugget_share);

// Full Gaussian log-likelihood with beta and s2 profiled at fixed correlation.
double ml_loglik_at(const Matrix& X, const Vector& Y, const Matrix& correlation);

void to_json(nlohmann::json& j, const FitResult& fit);

}  // namespace sbias
