#include "sbias/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <boost/math/distributions/normal.hpp>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "sbias/error.hpp"

namespace sbias {

namespace {

constexpr double log_2pi = 1.8378770664093454835606594728112;

void check_shapes(const Matrix& X, const Vector& Y) {
    if (X.rows() != Y.size()) throw InvalidArgument("design and response lengths differ");
    if (X.cols() < 1) throw InvalidArgument("design has no columns");
    if (X.rows() < X.cols()) throw InvalidArgument("fewer observations than coefficients");
    if (!X.allFinite() || !Y.allFinite()) throw InvalidArgument("design or response contains non-finite values");
}

void check_level(double level) {
    if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("confidence level must lie in (0, 1)");
}

void check_rank(const Matrix& X) {
    Eigen::ColPivHouseholderQR<Matrix> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() == X.cols()) return;
    std::vector<std::size_t> dropped;
    for (Eigen::Index i = qr.rank(); i < X.cols(); ++i)
        dropped.push_back(static_cast<std::size_t>(qr.colsPermutation().indices()(i)));
    std::sort(dropped.begin(), dropped.end());
    std::ostringstream msg;
    msg << "design matrix is rank deficient (rank " << qr.rank() << " of " << X.cols() << "); collinear columns:";
    for (auto c : dropped) msg << ' ' << c;
    throw SingularDesign(msg.str(), dropped);
}

double z_quantile(double level) {
    return boost::math::quantile(boost::math::normal(), 0.5 + level / 2.0);
}

void fill_intervals(FitResult& fit) {
    const double z = z_quantile(fit.level);
    fit.ci_low = fit.coef - z * fit.se;
    fit.ci_high = fit.coef + z * fit.se;
}

struct Whitened {
    Vector coef;
    Matrix gram;  // Xw' Xw
    double rss;
};

Whitened solve_whitened(const Eigen::Ref<const Matrix>& Xw, const Eigen::Ref<const Vector>& Yw) {
    Whitened w;
    w.gram = Xw.transpose() * Xw;
    Eigen::LLT<Matrix> llt(w.gram);
    if (llt.info() != Eigen::Success) throw NumericalError("normal equations are not positive definite");
    w.coef = llt.solve(Xw.transpose() * Yw);
    w.rss = (Yw - Xw * w.coef).squaredNorm();
    return w;
}

FitResult finish(const Whitened& w, Eigen::Index n, double sigma2_se, double loglik, int n_params, double level) {
    FitResult fit;
    fit.level = level;
    fit.coef = w.coef;
    const auto p = w.coef.size();
    Eigen::LLT<Matrix> llt(w.gram);
    fit.coef_cov = sigma2_se * llt.solve(Matrix::Identity(p, p));
    fit.se = fit.coef_cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    fit.sigma2 = sigma2_se;
    fit.loglik = loglik;
    fit.n_params = n_params;
    fit.aic = -2.0 * loglik + 2.0 * n_params;
    (void)n;
    fill_intervals(fit);
    return fit;
}

double profiled_loglik(double rss, Eigen::Index n, double logdet) {
    const double nn = double(n);
    if (!(rss > 0.0)) return std::numeric_limits<double>::infinity();
    return -0.5 * (nn * (log_2pi + 1.0 + std::log(rss / nn)) + logdet);
}

}  // namespace

std::size_t FitResult::index_of(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw InvalidArgument("fit has no coefficient named " + name);
    return static_cast<std::size_t>(it - names.begin());
}

std::vector<Interval> wald_ci(const FitResult& fit, double level) {
    check_level(level);
    const double z = z_quantile(level);
    std::vector<Interval> out;
    for (Eigen::Index i = 0; i < fit.coef.size(); ++i)
        out.push_back({fit.coef(i) - z * fit.se(i), fit.coef(i) + z * fit.se(i)});
    return out;
}

FitResult ols_fit(const Matrix& X, const Vector& Y, double level) {
    check_shapes(X, Y);
    check_level(level);
    check_rank(X);
    const Whitened w = solve_whitened(X, Y);
    const auto n = X.rows(), p = X.cols();
    const double s2 = n > p ? w.rss / double(n - p) : 0.0;
    return finish(w, n, s2, profiled_loglik(w.rss, n, 0.0), int(p) + 1, level);
}

FitResult gls_fit(const Matrix& X, const Vector& Y, const Matrix& Omega, double level) {
    check_shapes(X, Y);
    check_level(level);
    if (Omega.rows() != X.rows() || Omega.cols() != X.rows()) throw InvalidArgument("covariance has the wrong size");
    Eigen::LLT<Matrix> llt(Omega);
    if (llt.info() != Eigen::Success) throw InvalidArgument("gls_fit: covariance is not positive definite");
    Matrix Xw = llt.matrixL().solve(X);
    Vector Yw = llt.matrixL().solve(Y);
    check_rank(Xw);
    const Whitened w = solve_whitened(Xw, Yw);
    const auto n = X.rows(), p = X.cols();
    const double logdet = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
    const double s2 = n > p ? w.rss / double(n - p) : 0.0;
    return finish(w, n, s2, profiled_loglik(w.rss, n, logdet), int(p) + 1, level);
}

namespace {

class Profile {
public:
    Profile(const Matrix& X, const Vector& Y, const DistanceMatrix& d, const MlOptions& o)
        : X_(X), Y_(Y), D_(d.values()), opt_(o), R_(X.rows(), X.rows()), XY_(X.rows(), X.cols() + 1) {}

    // Negative profile log-likelihood without constants: n/2 log(rss/n) + logdet/2.
    double objective(double range, double f) {
        if (!evaluate(range, f)) return std::numeric_limits<double>::max();
        const double nn = double(X_.rows());
        return 0.5 * (nn * std::log(rss_ / nn) + logdet_);
    }

    bool evaluate(double range, double f) {
        const auto n = X_.rows();
        const auto p = X_.cols();
        CovarianceSpec spec{opt_.family, range, opt_.smoothness, 1.0, 0.0};
        const double s = 1.0 - f;
        if (spec.family == CovarianceFamily::exponential ||
            (spec.family == CovarianceFamily::matern && spec.smoothness == 0.5)) {
            R_.array() = s * (D_.array() * (-1.0 / range)).exp();
            R_.diagonal().setOnes();
        } else {
            for (Eigen::Index j = 0; j < n; ++j) {
                R_(j, j) = 1.0;
                for (Eigen::Index i = j + 1; i < n; ++i) R_(i, j) = s * correlation(D_(i, j), spec);
            }
        }
        Eigen::LLT<Eigen::Ref<Matrix>> llt(R_);
        if (llt.info() != Eigen::Success) return false;
        XY_.leftCols(p) = X_;
        XY_.col(p) = Y_;
        llt.matrixL().solveInPlace(XY_);
        try {
            w_ = solve_whitened(XY_.leftCols(p), XY_.col(p));
        } catch (const NumericalError&) {
            return false;
        }
        rss_ = w_.rss;
        logdet_ = 2.0 * R_.diagonal().array().log().sum();
        return rss_ > 0.0 && std::isfinite(logdet_);
    }

    const Whitened& whitened() const { return w_; }
    double rss() const { return rss_; }
    double logdet() const { return logdet_; }

private:
    const Matrix& X_;
    const Vector& Y_;
    const Matrix& D_;
    const MlOptions& opt_;
    Matrix R_;
    Matrix XY_;
    Whitened w_;
    double rss_ = 0.0;
    double logdet_ = 0.0;
};

constexpr double logit_bound = 12.0;
constexpr double value_tolerance = 1e-8;

double inv_logit(double t) { return 1.0 / (1.0 + std::exp(-t)); }

struct SearchState {
    Profile* profile;
    bool nugget;
    double log_lo, log_hi;
    int evaluations = 0;
    double best_value = std::numeric_limits<double>::max();
    std::vector<double> best;
};

double map_range(const SearchState& s, double t) { return std::exp(std::clamp(t, s.log_lo, s.log_hi)); }
double map_share(double t) { return inv_logit(std::clamp(t, -logit_bound, logit_bound)); }

double search_objective(const gsl_vector* v, void* params) {
    auto* s = static_cast<SearchState*>(params);
    ++s->evaluations;
    const double t0 = gsl_vector_get(v, 0);
    const double t1 = s->nugget ? gsl_vector_get(v, 1) : -logit_bound * 4;
    const double f = s->nugget ? map_share(t1) : 0.0;
    // Outside the box the objective is evaluated at the clamped point plus a
    // quadratic penalty, so the simplex is pushed back instead of drifting on a plateau.
    const double excess0 = t0 - std::clamp(t0, s->log_lo, s->log_hi);
    const double excess1 = s->nugget ? t1 - std::clamp(t1, -logit_bound, logit_bound) : 0.0;
    const double value =
        s->profile->objective(map_range(*s, t0), f) + excess0 * excess0 + excess1 * excess1;
    if (value < s->best_value) {
        s->best_value = value;
        s->best = {t0, t1};
    }
    return value;
}

struct RunOutcome {
    bool converged;
    double value;
    std::vector<double> x;
};

RunOutcome nelder_mead(SearchState& state, std::vector<double> start, double tolerance, int budget) {
    const std::size_t dim = state.nugget ? 2 : 1;
    gsl_multimin_function fn{&search_objective, dim, &state};
    gsl_vector* x = gsl_vector_alloc(dim);
    gsl_vector* step = gsl_vector_alloc(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        gsl_vector_set(x, i, start[i]);
        gsl_vector_set(step, i, 1.0);
    }
    gsl_multimin_fminimizer* m = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, dim);
    const int first = state.evaluations;
    gsl_multimin_fminimizer_set(m, &fn, x, step);
    bool converged = false;
    // On a flat ridge (range at its bound, nugget share irrelevant) the simplex
    // never shrinks, so a stalled best value also counts as convergence.
    const int window = 25 * int(dim);
    double anchor = m->fval;
    int stalled = 0;
    while (state.evaluations - first < budget) {
        if (gsl_multimin_fminimizer_iterate(m) != GSL_SUCCESS) break;
        if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(m), tolerance) == GSL_SUCCESS) {
            converged = true;
            break;
        }
        if (anchor - m->fval > value_tolerance * (std::abs(m->fval) + value_tolerance)) {
            anchor = m->fval;
            stalled = 0;
        } else if (++stalled >= window) {
            converged = true;
            break;
        }
    }
    RunOutcome out{converged, m->fval, {}};
    for (std::size_t i = 0; i < dim; ++i) out.x.push_back(gsl_vector_get(m->x, i));
    gsl_multimin_fminimizer_free(m);
    gsl_vector_free(step);
    gsl_vector_free(x);
    return out;
}

}  // namespace

double ml_profile_objective(const Matrix& X, const Vector& Y, const DistanceMatrix& d, const MlOptions& options,
                            double range, double nugget_share) {
    check_shapes(X, Y);
    Profile prof(X, Y, d, options);
    return prof.objective(range, nugget_share);
}

double ml_loglik_at(const Matrix& X, const Vector& Y, const Matrix& correlation) {
    check_shapes(X, Y);
    Eigen::LLT<Matrix> llt(correlation);
    if (llt.info() != Eigen::Success) throw InvalidArgument("correlation matrix is not positive definite");
    Matrix Xw = llt.matrixL().solve(X);
    Vector Yw = llt.matrixL().solve(Y);
    const Whitened w = solve_whitened(Xw, Yw);
    const double logdet = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
    return profiled_loglik(w.rss, X.rows(), logdet);
}

FitResult ml_fit(const Matrix& X, const Vector& Y, const DistanceMatrix& d, const MlOptions& options) {
    check_shapes(X, Y);
    check_level(options.level);
    const auto n = X.rows(), p = X.cols();
    if (Eigen::Index(d.size()) != n) throw InvalidArgument("ml_fit: distance matrix does not match the data");
    const int n_cov = options.nugget ? 3 : 2;
    if (n < p + n_cov + 2) throw InvalidArgument("ml_fit: too few observations for the number of parameters");
    if (options.restarts < 1 || options.max_evaluations < 1) throw InvalidArgument("ml_fit: empty search budget");
    check_rank(X);
    {
        const Whitened ols = solve_whitened(X, Y);
        if (!(ols.rss > 1e-24 * std::max(1.0, Y.squaredNorm())))
            throw DegenerateFit("ml_fit: response is an exact linear function of the design (zero residual variance)");
    }

    Profile profile(X, Y, d, options);
    const double dmax = d.max_distance();
    const double dmin = d.min_offdiagonal();
    SearchState state{&profile, options.nugget, std::log(dmin * 1e-3), std::log(dmax * 1e2), 0,
                      std::numeric_limits<double>::max(), {}};

    RunOutcome best{false, std::numeric_limits<double>::max(), {}};
    bool any_converged = false;
    const std::size_t runs = std::min<std::size_t>(std::size_t(options.restarts), options.starts.size());
    for (std::size_t r = 0; r < std::max<std::size_t>(runs, 1); ++r) {
        const auto& s = options.starts[std::min(r, options.starts.size() - 1)];
        const double share = std::clamp(s.second, 1e-4, 1.0 - 1e-4);
        std::vector<double> start{std::log(s.first * dmax), std::log(share / (1.0 - share))};
        RunOutcome run = nelder_mead(state, start, options.tolerance, options.max_evaluations);
        any_converged = any_converged || run.converged;
        if (run.value < best.value) best = run;
    }
    if (!any_converged)
        throw ConvergenceError("ml_fit: Nelder-Mead did not converge within the evaluation budget", state.best,
                               state.best_value);
    // The best point ever evaluated can beat the final simplex vertex of a run.
    if (state.best_value < best.value) best.x = state.best;

    const double range = map_range(state, best.x[0]);
    const double f = options.nugget ? map_share(best.x[1]) : 0.0;
    if (!profile.evaluate(range, f)) throw NumericalError("ml_fit: covariance at the optimum is not positive definite");

    const double s2 = profile.rss() / double(n);
    const double loglik = profiled_loglik(profile.rss(), n, profile.logdet());
    FitResult fit = finish(profile.whitened(), n, s2, loglik, int(p) + n_cov, options.level);
    fit.fitted_cov = CovarianceSpec{options.family, range, options.smoothness, s2 * (1.0 - f), s2 * f};
    fit.evaluations = state.evaluations;
    return fit;
}

void to_json(nlohmann::json& j, const FitResult& fit) {
    auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    j = nlohmann::json{{"names", fit.names},         {"coef", vec(fit.coef)},
                       {"se", vec(fit.se)},          {"ci_low", vec(fit.ci_low)},
                       {"ci_high", vec(fit.ci_high)}, {"level", fit.level},
                       {"loglik", fit.loglik},       {"aic", fit.aic},
                       {"n_params", fit.n_params}};
    if (fit.fitted_cov) {
        const auto& c = *fit.fitted_cov;
        j["fitted_cov"] = {{"range", c.range}, {"variance", c.variance}, {"nugget", c.nugget},
                           {"smoothness", c.smoothness}};
    }
}

}  // namespace sbias
