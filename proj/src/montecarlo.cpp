#include "sbias/montecarlo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

#include "sbias/bias.hpp"
#include "sbias/error.hpp"

namespace sbias {

std::string to_string(Estimator e) {
    switch (e) {
        case Estimator::ols:
            return "ols";
        case Estimator::gls_known:
            return "gls-known";
        case Estimator::gls_ml:
            return "gls-ml";
    }
    return "?";
}

Estimator parse_estimator(const std::string& s) {
    if (s == "ols") return Estimator::ols;
    if (s == "gls-known" || s == "gls_known") return Estimator::gls_known;
    if (s == "gls-ml" || s == "gls_ml" || s == "ml") return Estimator::gls_ml;
    throw InvalidArgument("unknown estimator '" + s + "' (expected ols, gls-known or gls-ml)");
}

void ExperimentConfig::validate() const {
    if (replicates < 1) throw InvalidArgument("experiment needs at least one replicate");
    if (n_locations < 2) throw InvalidArgument("experiment needs at least two locations");
    if (!fitted.has(Term::treatment)) throw InvalidArgument("fitted model must include the treatment");
    if (scenario < 0 || scenario > 4) throw InvalidArgument("scenario must be 1-4 (or 0 when not applicable)");
    generator.validate();
    const bool gen_i = generator.terms.has(Term::interference);
    const bool fit_i = fitted.has(Term::interference);
    const int expected = gen_i ? (fit_i ? 2 : 1) : (fit_i ? 4 : 3);
    if (scenario != 0 && scenario != expected)
        throw InvalidArgument("scenario " + std::to_string(scenario) + " does not match the generator/fitted terms (expected " +
                              std::to_string(expected) + ")");
    if (fit_i && !generator.psi) throw InvalidArgument("fitting interference requires a treatment weight config");
    if ((fitted.has(Term::direct) || fitted.has(Term::indirect)) && !generator.has_confounder())
        throw InvalidArgument("fitted confounder terms require a generator with a confounder");
    if (fitted.has(Term::indirect) && !generator.phi)
        throw InvalidArgument("fitting the indirect confounder requires a confounder weight config");
}

namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();

Matrix error_covariance(const ModelSpec& spec, const DistanceMatrix& d) {
    if (spec.error.family == CovarianceFamily::identity) {
        const auto n = Eigen::Index(d.size());
        return Matrix::Identity(n, n) * (spec.error.variance + spec.error.nugget);
    }
    return covariance_matrix(d, spec.error);
}

// E[U | A], or nullopt when only a constant is known to matter (returned as
// `constant_only`) or nothing closed-form is available.
struct ConditionalMean {
    std::optional<Vector> value;
    bool constant_only = false;
};

ConditionalMean confounder_mean(const ModelSpec& spec, const DataSet& data, const DistanceMatrix& d) {
    if (spec.mechanism == ConfounderMechanism::poisson_pair) return {data.A * spec.poisson_pair.confounder_share()};
    const auto& p = spec.pair;
    const bool gaussian = spec.treatment_kind == FieldKind::normal && spec.confounder_kind == FieldKind::normal;
    if (p.rho == 0.0) {
        if (gaussian) return {Vector::Constant(data.A.size(), p.mu_u)};
        return {std::nullopt, true};
    }
    if (!gaussian) return {};
    IndirectSCParams ip = IndirectSCParams::from_pair(p, d, Matrix::Zero(1, 1), 0.0);
    ip.Phi = Matrix::Identity(data.A.size(), data.A.size());
    ip.beta_ut = 1.0;
    const Vector centred = (data.A.array() - p.mu_a).matrix();
    return {(p.mu_u + (m_matrix(ip) * centred).array()).matrix()};
}

double analytical_bias(const ExperimentConfig& cfg, const DataSet& data, const Design& design,
                       const DistanceMatrix& d, const std::optional<Matrix>& W) {
    const ModelSpec& g = cfg.generator;
    const TermSet& f = cfg.fitted;
    const bool omit_i = g.terms.has(Term::interference) && !f.has(Term::interference);
    const bool omit_u = g.terms.has(Term::direct) && !f.has(Term::direct);
    const bool omit_ut = g.terms.has(Term::indirect) && !f.has(Term::indirect);
    if (!omit_i && !omit_u && !omit_ut) return 0.0;

    const bool intercept = f.has(Term::intercept);
    // The interference-only omission is the textbook case.
    if (omit_i && !omit_u && !omit_ut && intercept && design.X.cols() == 2) {
        const Vector Ac = center_for_intercept(data.A, W);
        return W ? si_bias_spatial(Ac, *data.psi, *W, g.beta.atilde) : si_bias_nonspatial(Ac, *data.psi, g.beta.atilde);
    }

    Vector v = Vector::Zero(data.A.size());
    if (omit_i) v += g.beta.atilde * *data.Atilde;
    if (omit_u || omit_ut) {
        // With Utilde in the design, U given the regressors is no longer U given A.
        if (omit_u && f.has(Term::indirect)) return nan;
        if (!omit_u && omit_ut) {
            // U is in the design, so Phi U is fixed given the regressors.
            v += g.beta.utilde * *data.Utilde;
        } else {
            const ConditionalMean m = confounder_mean(g, data, d);
            if (m.value) {
                if (omit_u) v += g.beta.u * *m.value;
                if (omit_ut) v += g.beta.utilde * (data.phi->values() * *m.value);
            } else if (!(m.constant_only && intercept && !omit_ut)) {
                return nan;
            }
        }
    }
    return projection_bias(design.X, v, design.treatment_column, W);
}

}  // namespace

ReplicateRecord run_replicate(const ExperimentConfig& cfg, std::size_t index) {
    ReplicateRecord rec;
    rec.index = index;
    rec.seed = replicate_seed(cfg.base_seed, index);
    try {
        const std::uint64_t fixed = derive_seed(cfg.base_seed, {0x6669786564ULL});
        const bool same_places = !cfg.redraw_locations || !cfg.redraw_treatment;
        const std::uint64_t loc_seed = stream_seed(same_places ? fixed : rec.seed, StreamId::locations);
        StreamSeeds seeds = StreamSeeds::from(rec.seed);
        if (!cfg.redraw_treatment) seeds.treatment = stream_seed(fixed, StreamId::treatment);

        const LocationSet loc = sample_locations(cfg.n_locations, cfg.bounds, loc_seed);
        const DistanceMatrix d = distance_matrix(loc);
        DataSet data = generate(cfg.generator, loc, d, seeds);
        const Design design = design_matrix(data, cfg.fitted);

        std::optional<Matrix> W;
        if (cfg.estimator != Estimator::ols && cfg.spatial_error()) W = error_covariance(cfg.generator, d);

        FitResult fit;
        switch (cfg.estimator) {
            case Estimator::ols:
                fit = ols_fit(design.X, data.Y);
                break;
            case Estimator::gls_known:
                fit = gls_fit(design.X, data.Y, W ? *W : error_covariance(cfg.generator, d));
                break;
            case Estimator::gls_ml:
                fit = ml_fit(design.X, data.Y, d, cfg.ml);
                break;
        }
        const auto c = design.treatment_column;
        rec.estimate = fit.coef(c);
        rec.se = fit.se(c);
        rec.ci_low = fit.ci_low(c);
        rec.ci_high = fit.ci_high(c);
        rec.aic = fit.aic;
        rec.analytical_bias = analytical_bias(cfg, data, design, d, W);
        rec.ok = std::isfinite(rec.estimate) && std::isfinite(rec.se);
        if (!rec.ok) rec.failure = "non-finite estimate";
    } catch (const NumericalError& e) {
        rec.ok = false;
        rec.failure = e.what();
    } catch (const InvalidArgument& e) {
        // Degenerate draws (e.g. an all-zero binary treatment) are failures of
        // the replicate, not of the experiment definition.
        rec.ok = false;
        rec.failure = e.what();
    }
    return rec;
}

double rmse(const std::vector<double>& estimates, double truth) {
    if (estimates.size() < 2) throw InvalidArgument("rmse needs at least two estimates");
    const double n = double(estimates.size());
    double mean = 0.0;
    for (double e : estimates) mean += e;
    mean /= n;
    double ss = 0.0;
    for (double e : estimates) ss += (e - mean) * (e - mean);
    const double bias = mean - truth;
    return std::sqrt(ss / (n - 1.0) + bias * bias);
}

double coverage(const std::vector<Interval>& intervals, double truth) {
    if (intervals.empty()) throw InvalidArgument("coverage needs at least one interval");
    std::size_t hit = 0;
    for (const auto& iv : intervals)
        if (iv.low <= truth && truth <= iv.high) ++hit;
    return double(hit) / double(intervals.size());
}

MetricsSummary summarize(const ExperimentConfig& cfg, std::vector<ReplicateRecord> records) {
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
    MetricsSummary s;
    s.config = cfg;
    std::vector<double> est;
    std::vector<Interval> ivs;
    std::vector<double> analytic, diff;
    for (const auto& r : records) {
        if (!r.ok) {
            ++s.n_fail;
            continue;
        }
        est.push_back(r.estimate);
        ivs.push_back({r.ci_low, r.ci_high});
        analytic.push_back(r.analytical_bias);
        diff.push_back(r.estimate - cfg.truth() - r.analytical_bias);
    }
    s.n_ok = est.size();
    const std::size_t total = records.size();
    if (total > 0 && double(s.n_fail) > 0.05 * double(total)) {
        std::string msg = "experiment " + cfg.id + ": " + std::to_string(s.n_fail) + " of " + std::to_string(total) +
                          " replicates failed";
        for (const auto& r : records)
            if (!r.ok) {
                msg += " (first failure: " + r.failure + ")";
                break;
            }
        throw NumericalError(msg);
    }
    if (s.n_ok == 0) throw NumericalError("experiment " + cfg.id + ": no successful replicates");
    const double n = double(s.n_ok);
    auto mean_of = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m += x;
        return m / double(v.size());
    };
    auto sd_of = [](const std::vector<double>& v, double m) {
        if (v.size() < 2) return 0.0;
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        return std::sqrt(ss / double(v.size() - 1));
    };
    const double m = mean_of(est);
    s.mean_bias = m - cfg.truth();
    s.rmse = s.n_ok >= 2 ? rmse(est, cfg.truth()) : std::abs(s.mean_bias);
    s.coverage = coverage(ivs, cfg.truth());
    s.mc_se = sd_of(est, m) / std::sqrt(n);
    const bool analytic_ok = std::all_of(analytic.begin(), analytic.end(), [](double x) { return std::isfinite(x); });
    if (analytic_ok) {
        s.mean_analytical_bias = mean_of(analytic);
        const double md = mean_of(diff);
        s.mc_se_difference = sd_of(diff, md) / std::sqrt(n);
    }
    s.records = std::move(records);
    return s;
}

MetricsSummary run_experiment(const ExperimentConfig& cfg, unsigned threads) {
    cfg.validate();
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = unsigned(std::min<std::size_t>(threads, cfg.replicates));
    std::vector<ReplicateRecord> records(cfg.replicates);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cfg.replicates; i = next++) records[i] = run_replicate(cfg, i);
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    return summarize(cfg, std::move(records));
}

namespace {

struct CaseCoefs {
    int id;
    double a;
    double at;
};
constexpr CaseCoefs interference_cases[] = {{1, 8.0, 2.0}, {2, 3.0, 9.0}};

struct KindLabel {
    FieldKind kind;
    const char* label;
};
constexpr KindLabel interference_kinds[] = {{FieldKind::binary, "discrete"}, {FieldKind::normal, "continuous"}};

ExperimentConfig interference_cell(const std::string& table, FieldKind kind, const char* kind_label, bool spatial,
                                   const CaseCoefs& cs, int scenario, const WeightConfig& w) {
    ExperimentConfig c;
    c.table = table;
    const CovarianceSpec error = spatial ? CovarianceSpec::exponential(2.0, 1.0, 0.0) : CovarianceSpec::iid(1.0);
    const bool gen_i = scenario <= 2;
    c.generator = gen_i ? ModelSpec::m2(0.0, cs.a, cs.at, w, error) : ModelSpec::m1(0.0, cs.a, error);
    c.generator.psi = w;
    c.generator.treatment_kind = kind;
    c.generator.treatment_cov = CovarianceSpec::exponential(1.0);
    const bool fit_i = scenario == 2 || scenario == 4;
    c.fitted = fit_i ? TermSet{Term::intercept, Term::treatment, Term::interference}
                     : TermSet{Term::intercept, Term::treatment};
    c.scenario = scenario;
    c.case_id = cs.id;
    c.replicates = 1000;
    c.estimator = spatial ? Estimator::gls_ml : Estimator::ols;
    c.treatment_label = kind_label;
    c.setting_label = spatial ? "spatial" : "non-spatial";
    c.weight_label = w.label();
    c.id = table + "/" + c.setting_label + "/" + kind_label + "/case" + std::to_string(cs.id) + "/S" +
           std::to_string(scenario) + "/" + c.weight_label;
    return c;
}

void interference_grid(std::vector<ExperimentConfig>& out, const std::string& table,
                       const std::vector<WeightConfig>& weights, const std::vector<bool>& settings) {
    for (bool spatial : settings)
        for (const auto& k : interference_kinds)
            for (const auto& cs : interference_cases)
                for (int scenario = 1; scenario <= 4; ++scenario)
                    for (const auto& w : weights)
                        out.push_back(interference_cell(table, k.kind, k.label, spatial, cs, scenario, w));
}

}  // namespace

std::vector<ExperimentConfig> scenario_grid(const std::string& table) {
    std::vector<ExperimentConfig> out;
    const std::vector<WeightConfig> grid_weights{WeightConfig::knn(4), WeightConfig::distance(0.95)};
    if (table == "T1") {
        interference_grid(out, table, grid_weights, {false});
    } else if (table == "T2") {
        interference_grid(out, table, grid_weights, {true});
    } else if (table == "B1") {
        std::vector<WeightConfig> ws;
        for (std::size_t k : {1, 2, 3, 5}) ws.push_back(WeightConfig::knn(k));
        interference_grid(out, table, ws, {false, true});
    } else if (table == "B2") {
        std::vector<WeightConfig> ws;
        for (double p : {0.90, 0.80, 0.75, 0.50}) ws.push_back(WeightConfig::distance(p));
        interference_grid(out, table, ws, {false, true});
    } else if (table == "T3") {
        const KindLabel kinds[] = {{FieldKind::normal, "normal"}, {FieldKind::binary, "binary"}, {FieldKind::poisson, "poisson"}};
        for (const auto& k : kinds) {
            ExperimentConfig c;
            c.table = table;
            c.generator = ModelSpec::m4(0.0, 2.0, 1.5, CovarianceSpec::exponential(2.0, 1.0, 0.0));
            c.generator.pair = GaussianPairSpec{0.0, 1.0, 1.0, CovarianceSpec::exponential(2.0),
                                                CovarianceSpec::exponential(2.0), 0.0, 0.0};
            c.generator.treatment_kind = k.kind;
            c.generator.confounder_kind = k.kind;
            c.fitted = {Term::intercept, Term::treatment};
            c.replicates = 10000;
            c.estimator = Estimator::gls_ml;
            c.treatment_label = k.label;
            c.setting_label = "spatial";
            c.id = table + "/" + k.label;
            out.push_back(c);
        }
    } else if (table == "T4") {
        const char* models[] = {"T+I", "T+DSC", "T+ISC", "T+I+DSC", "T+I+ISC", "T+DSC+ISC", "T+I+DSC+ISC"};
        for (const auto& w : grid_weights)
            for (const char* m : models) {
                ExperimentConfig c;
                c.table = table;
                // Error with partial sill and nugget both equal to sigma^2.
                c.generator = ModelSpec::m6(0.0, 5.0, 3.0, 2.5, 2.0, w, w, CovarianceSpec::exponential(2.0, 1.0, 1.0));
                c.generator.pair = GaussianPairSpec{0.0, 1.0, 1.0, CovarianceSpec::exponential(2.0),
                                                    CovarianceSpec::exponential(2.0), 0.0, 0.0};
                c.fitted = TermSet::parse(m);
                c.replicates = 1000;
                c.estimator = Estimator::gls_ml;
                c.treatment_label = "normal";
                c.setting_label = "spatial";
                c.weight_label = w.label();
                c.id = table + "/" + c.weight_label + "/" + m;
                out.push_back(c);
            }
    } else {
        throw InvalidArgument("unknown table id '" + table + "' (expected T1, T2, T3, T4, B1 or B2)");
    }
    return out;
}

namespace {

std::string fmt(double x, int precision = 4) {
    if (!std::isfinite(x)) return "NA";
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << x;
    return s.str();
}

std::string model_label(const ExperimentConfig& c) {
    if (c.scenario) return "Scenario " + std::to_string(c.scenario);
    return c.fitted.label();
}

}  // namespace

void write_summary_csv(const std::vector<MetricsSummary>& rows, std::ostream& out) {
    out << "cell_id,bias,rmse,coverage,mc_se,n_fail,table,setting,treatment,case,scenario,model,weights,estimator,"
           "replicates,analytical_bias,mc_se_difference\n";
    for (const auto& r : rows) {
        const auto& c = r.config;
        out << c.id << ',' << fmt(r.mean_bias, 6) << ',' << fmt(r.rmse, 6) << ',' << fmt(r.coverage, 4) << ','
            << fmt(r.mc_se, 6) << ',' << r.n_fail << ',' << c.table << ',' << c.setting_label << ','
            << c.treatment_label << ',' << c.case_id << ',' << c.scenario << ',' << c.fitted.label() << ','
            << c.weight_label << ',' << to_string(c.estimator) << ',' << c.replicates << ','
            << fmt(r.mean_analytical_bias, 6) << ',' << fmt(r.mc_se_difference, 6) << '\n';
    }
}

void write_summary_markdown(const std::vector<MetricsSummary>& rows, std::ostream& out) {
    std::string table;
    for (const auto& r : rows) {
        const auto& c = r.config;
        if (c.table != table) {
            if (!table.empty()) out << '\n';
            table = c.table;
            out << "### " << table << "\n\n"
                << "| Setting | Treatment | Case | Model | Weights | Bias | RMSE | Coverage | MC s.e. | Failed |\n"
                << "|---|---|---|---|---|---|---|---|---|---|\n";
        }
        out << "| " << c.setting_label << " | " << c.treatment_label << " | "
            << (c.case_id ? "Case " + std::to_string(c.case_id) : std::string("-")) << " | " << model_label(c) << " | "
            << (c.weight_label.empty() ? "-" : c.weight_label) << " | " << fmt(r.mean_bias) << " | " << fmt(r.rmse)
            << " | " << fmt(r.coverage, 3) << " | " << fmt(r.mc_se) << " | " << r.n_fail << " |\n";
    }
}

}  // namespace sbias
