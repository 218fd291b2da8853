#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "sbias/dgp.hpp"
#include "sbias/estimate.hpp"
#include "sbias/montecarlo.hpp"

namespace sbias {

struct ColumnMap {
    std::string x = "x";
    std::string y = "y";
    std::string outcome = "Y";
    std::string treatment = "A";
    std::optional<std::string> confounder = "U";
};

struct CsvReport {
    std::size_t rows_read = 0;
    std::size_t rows_dropped = 0;   // missing values in a mapped column
    std::size_t jittered = 0;       // duplicate coordinates moved by 1e-6
};

inline constexpr double duplicate_jitter = 1e-6;

DataSet read_spatial_csv(std::istream& in, const ColumnMap& map, CsvReport* report = nullptr);
DataSet read_spatial_csv(const std::filesystem::path& path, const ColumnMap& map, CsvReport* report = nullptr);

inline const std::vector<std::string>& application_models() {
    static const std::vector<std::string> m{"T+I", "T+DSC", "T+ISC", "T+I+DSC", "T+I+ISC", "T+DSC+ISC", "T+I+DSC+ISC"};
    return m;
}

struct ApplicationRow {
    std::string weights;
    std::string model;
    bool ok = false;
    std::string failure;
    double estimate = 0.0;
    double se = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double aic = 0.0;
    bool min_aic = false;
};

struct ApplicationTable {
    std::vector<ApplicationRow> rows;

    // Model with the smallest AIC in a weight block, empty if none succeeded.
    std::string best_model(const std::string& weights) const;
};

struct ApplicationOptions {
    bool geodesic = false;
    MlOptions ml;
};

// Builds Psi and Phi from the data's own locations for each scheme and fits
// the seven models by ML. Fit failures are recorded per row.
ApplicationTable application_pipeline(const DataSet& data, const std::vector<WeightConfig>& schemes,
                                      const ApplicationOptions& options = {});

enum class TableFormat { csv, json, markdown };

void emit_table(const std::vector<MetricsSummary>& rows, TableFormat format, std::ostream& out);
void emit_table(const ApplicationTable& table, TableFormat format, std::ostream& out);

// Writes results.csv, results.json and tables.md into `dir`.
void emit_tables(const std::vector<MetricsSummary>& rows, const std::filesystem::path& dir);
void emit_tables(const ApplicationTable& table, const std::filesystem::path& dir);

void to_json(nlohmann::json& j, const MetricsSummary& s);
void to_json(nlohmann::json& j, const ApplicationRow& r);

}  // namespace sbias
