#pragma once

#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "sbias/dgp.hpp"
#include "sbias/estimate.hpp"

namespace sbias {

enum class Estimator { ols, gls_known, gls_ml };

std::string to_string(Estimator e);
Estimator parse_estimator(const std::string& s);

struct ExperimentConfig {
    std::string id;
    std::string table;
    ModelSpec generator;
    TermSet fitted{Term::intercept, Term::treatment};
    int scenario = 0;  // 1-4 for the interference tables, 0 otherwise
    int case_id = 0;   // 1: beta_a > beta_at, 2: beta_a < beta_at
    std::size_t n_locations = 100;
    Bounds bounds;
    std::size_t replicates = 1000;
    std::uint64_t base_seed = 1;
    bool redraw_treatment = true;
    bool redraw_locations = true;
    Estimator estimator = Estimator::ols;
    MlOptions ml;

    // Layout labels for reports.
    std::string treatment_label;
    std::string setting_label;
    std::string weight_label;

    double truth() const noexcept { return generator.beta.a; }
    bool spatial_error() const noexcept { return generator.error.family != CovarianceFamily::identity; }
    void validate() const;
};

struct ReplicateRecord {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string failure;
    double estimate = std::numeric_limits<double>::quiet_NaN();
    double se = std::numeric_limits<double>::quiet_NaN();
    double ci_low = std::numeric_limits<double>::quiet_NaN();
    double ci_high = std::numeric_limits<double>::quiet_NaN();
    // Conditional bias given the realised fields; NaN where no closed form applies.
    double analytical_bias = std::numeric_limits<double>::quiet_NaN();
    double aic = std::numeric_limits<double>::quiet_NaN();
};

struct MetricsSummary {
    ExperimentConfig config;
    std::size_t n_ok = 0;
    std::size_t n_fail = 0;
    double mean_bias = 0.0;
    double rmse = 0.0;
    double coverage = 0.0;
    double mc_se = 0.0;  // sd(estimates) / sqrt(n_ok)
    double mean_analytical_bias = std::numeric_limits<double>::quiet_NaN();
    double mc_se_difference = std::numeric_limits<double>::quiet_NaN();  // of (error - analytical)
    std::vector<ReplicateRecord> records;
};

inline std::uint64_t replicate_seed(std::uint64_t base_seed, std::size_t index) {
    return derive_seed(base_seed, {0x7265706cULL, index});
}

ReplicateRecord run_replicate(const ExperimentConfig& cfg, std::size_t index);

// Replicates are distributed over `threads` workers (0: hardware concurrency).
// Aggregation runs over the records in index order, so the result does not
// depend on scheduling. More than 5% failed replicates is an error.
MetricsSummary run_experiment(const ExperimentConfig& cfg, unsigned threads = 1);

MetricsSummary summarize(const ExperimentConfig& cfg, std::vector<ReplicateRecord> records);

double rmse(const std::vector<double>& estimates, double truth);
double coverage(const std::vector<Interval>& intervals, double truth);

// T1, T2 (interference tables), T3 (distributions), T4 (full model),
// B1 (k sweep), B2 (threshold sweep).
std::vector<ExperimentConfig> scenario_grid(const std::string& table);

void write_summary_csv(const std::vector<MetricsSummary>& rows, std::ostream& out);
void write_summary_markdown(const std::vector<MetricsSummary>& rows, std::ostream& out);

}  // namespace sbias
