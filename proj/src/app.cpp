#include "sbias/app.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <sstream>

#include "sbias/error.hpp"

namespace sbias {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    cells.push_back(cur);
    return cells;
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

bool is_missing(const std::string& s) {
    return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == "null";
}

double parse_cell(const std::string& s, const std::string& column, std::size_t row) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size() || !std::isfinite(v))
        throw ParseError("non-numeric value '" + s + "' in column " + column, row);
    return v;
}

}  // namespace

DataSet read_spatial_csv(std::istream& in, const ColumnMap& map, CsvReport* report) {
    std::string line;
    if (!std::getline(in, line)) throw InvalidArgument("empty CSV input");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    std::vector<std::string> header = split_csv_line(line);
    for (auto& h : header) h = trim(h);

    auto find = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw SchemaError(name);
        return static_cast<std::size_t>(it - header.begin());
    };
    std::vector<std::pair<std::string, std::size_t>> cols{{map.x, find(map.x)},
                                                          {map.y, find(map.y)},
                                                          {map.outcome, find(map.outcome)},
                                                          {map.treatment, find(map.treatment)}};
    if (map.confounder) cols.emplace_back(*map.confounder, find(*map.confounder));

    CsvReport rep;
    std::vector<std::vector<double>> values(cols.size());
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty() || line == "\r") continue;
        ++rep.rows_read;
        const auto cells = split_csv_line(line);
        std::vector<double> parsed;
        bool missing = false;
        for (const auto& [name, idx] : cols) {
            const std::string cell = idx < cells.size() ? trim(cells[idx]) : std::string();
            if (is_missing(cell)) {
                missing = true;
                break;
            }
            parsed.push_back(parse_cell(cell, name, row));
        }
        if (missing) {
            ++rep.rows_dropped;
            continue;
        }
        for (std::size_t c = 0; c < cols.size(); ++c) values[c].push_back(parsed[c]);
    }
    const std::size_t n = values[0].size();
    if (n < 2) throw InvalidArgument("CSV has fewer than two complete rows");

    std::vector<Point> pts(n);
    std::map<std::pair<double, double>, int> seen;
    for (std::size_t i = 0; i < n; ++i) {
        Point p{values[0][i], values[1][i]};
        int& count = seen[{p.x, p.y}];
        if (count > 0) {
            p.x += duplicate_jitter * count;
            ++rep.jittered;
        }
        ++count;
        pts[i] = p;
    }
    Bounds b{std::numeric_limits<double>::max(), std::numeric_limits<double>::lowest(),
             std::numeric_limits<double>::max(), std::numeric_limits<double>::lowest()};
    for (const auto& p : pts) {
        b.xmin = std::min(b.xmin, p.x);
        b.xmax = std::max(b.xmax, p.x);
        b.ymin = std::min(b.ymin, p.y);
        b.ymax = std::max(b.ymax, p.y);
    }
    if (!(b.xmax > b.xmin)) b.xmax = b.xmin + 1.0;
    if (!(b.ymax > b.ymin)) b.ymax = b.ymin + 1.0;

    auto to_vec = [](const std::vector<double>& v) { return Vector(Eigen::Map<const Vector>(v.data(), Eigen::Index(v.size()))); };
    DataSet data{LocationSet(std::move(pts), b), to_vec(values[2]), to_vec(values[3]), {}, {}, {}, {}, {}, {}, {}};
    if (map.confounder) data.U = to_vec(values[4]);
    if (report) *report = rep;
    if (rep.jittered > 0)
        std::cerr << "warning: " << rep.jittered << " duplicate coordinate(s) moved by " << duplicate_jitter << '\n';
    return data;
}

DataSet read_spatial_csv(const std::filesystem::path& path, const ColumnMap& map, CsvReport* report) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return read_spatial_csv(in, map, report);
}

std::string ApplicationTable::best_model(const std::string& weights) const {
    for (const auto& r : rows)
        if (r.weights == weights && r.min_aic) return r.model;
    return {};
}

ApplicationTable application_pipeline(const DataSet& data, const std::vector<WeightConfig>& schemes,
                                      const ApplicationOptions& options) {
    if (schemes.empty()) throw InvalidArgument("application_pipeline: no weight schemes");
    if (!data.U) throw InvalidArgument("application_pipeline: the data have no confounder column");
    const DistanceMatrix d =
        distance_matrix(data.loc, options.geodesic ? DistanceMetric::geodesic : DistanceMetric::planar);
    ApplicationTable table;
    for (const auto& scheme : schemes) {
        DataSet local = data;
        local.psi = std::make_shared<const WeightMatrix>(scheme.build(d));
        local.phi = local.psi;
        local.Atilde = apply_weights(*local.psi, local.A);
        local.Utilde = apply_weights(*local.phi, *local.U);
        const std::string label = scheme.label();
        const std::size_t first = table.rows.size();
        for (const auto& model : application_models()) {
            ApplicationRow row;
            row.weights = label;
            row.model = model;
            try {
                const Design design = design_matrix(local, TermSet::parse(model));
                const FitResult fit = ml_fit(design.X, local.Y, d, options.ml);
                const auto c = design.treatment_column;
                row.estimate = fit.coef(c);
                row.se = fit.se(c);
                row.ci_low = fit.ci_low(c);
                row.ci_high = fit.ci_high(c);
                row.aic = fit.aic;
                row.ok = std::isfinite(row.aic);
                if (!row.ok) row.failure = "non-finite AIC";
            } catch (const NumericalError& e) {
                row.failure = e.what();
            }
            table.rows.push_back(row);
        }
        std::size_t best = table.rows.size();
        for (std::size_t i = first; i < table.rows.size(); ++i)
            if (table.rows[i].ok && (best == table.rows.size() || table.rows[i].aic < table.rows[best].aic)) best = i;
        if (best < table.rows.size()) table.rows[best].min_aic = true;
    }
    return table;
}

namespace {

std::string num(double x, int precision = 6) {
    if (!std::isfinite(x)) return "NA";
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << x;
    return s.str();
}

}  // namespace

void to_json(nlohmann::json& j, const MetricsSummary& s) {
    const auto& c = s.config;
    auto finite_or_null = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
    j = nlohmann::json{{"cell_id", c.id},
                       {"table", c.table},
                       {"setting", c.setting_label},
                       {"treatment", c.treatment_label},
                       {"case", c.case_id},
                       {"scenario", c.scenario},
                       {"model", c.fitted.label()},
                       {"weights", c.weight_label},
                       {"estimator", to_string(c.estimator)},
                       {"replicates", c.replicates},
                       {"redraw_treatment", c.redraw_treatment},
                       {"bias", s.mean_bias},
                       {"rmse", s.rmse},
                       {"coverage", s.coverage},
                       {"mc_se", s.mc_se},
                       {"n_fail", s.n_fail},
                       {"analytical_bias", finite_or_null(s.mean_analytical_bias)},
                       {"mc_se_difference", finite_or_null(s.mc_se_difference)}};
}

void to_json(nlohmann::json& j, const ApplicationRow& r) {
    j = nlohmann::json{{"weights", r.weights}, {"model", r.model}, {"ok", r.ok}, {"min_aic", r.min_aic}};
    if (r.ok) {
        j["estimate"] = r.estimate;
        j["se"] = r.se;
        j["ci_low"] = r.ci_low;
        j["ci_high"] = r.ci_high;
        j["aic"] = r.aic;
    } else {
        j["failure"] = r.failure;
    }
}

void emit_table(const std::vector<MetricsSummary>& rows, TableFormat format, std::ostream& out) {
    if (rows.empty()) throw InvalidArgument("emit_table: no summaries");
    switch (format) {
        case TableFormat::csv:
            write_summary_csv(rows, out);
            break;
        case TableFormat::markdown:
            write_summary_markdown(rows, out);
            break;
        case TableFormat::json:
            out << nlohmann::json(rows).dump(2) << '\n';
            break;
    }
}

void emit_table(const ApplicationTable& table, TableFormat format, std::ostream& out) {
    if (table.rows.empty()) throw InvalidArgument("emit_table: empty application table");
    switch (format) {
        case TableFormat::csv:
            out << "weights,model,estimate,se,ci_low,ci_high,aic,min_aic,status\n";
            for (const auto& r : table.rows)
                out << r.weights << ',' << r.model << ',' << (r.ok ? num(r.estimate) : "NA") << ','
                    << (r.ok ? num(r.se) : "NA") << ',' << (r.ok ? num(r.ci_low) : "NA") << ','
                    << (r.ok ? num(r.ci_high) : "NA") << ',' << (r.ok ? num(r.aic, 4) : "NA") << ','
                    << (r.min_aic ? 1 : 0) << ',' << (r.ok ? "ok" : "failed") << '\n';
            break;
        case TableFormat::json:
            out << nlohmann::json(table.rows).dump(2) << '\n';
            break;
        case TableFormat::markdown: {
            std::string block;
            for (const auto& r : table.rows) {
                if (r.weights != block) {
                    if (!block.empty()) out << '\n';
                    block = r.weights;
                    out << "### " << block << "\n\n| S/N | Model | Estimate | Conf. Interval | AIC |\n|---|---|---|---|---|\n";
                }
                const auto sn = 1 + std::count_if(table.rows.begin(), table.rows.end(), [&](const auto& o) {
                                    return o.weights == r.weights && &o < &r;
                                });
                out << "| " << sn << " | " << r.model << (r.min_aic ? " *" : "") << " | ";
                if (r.ok)
                    out << num(r.estimate, 4) << " | (" << num(r.ci_low, 4) << ", " << num(r.ci_high, 4) << ") | "
                        << num(r.aic, 2) << " |\n";
                else
                    out << "failed | - | - |\n";
            }
            break;
        }
    }
}

namespace {

template <class T>
void emit_all(const T& x, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    const std::pair<const char*, TableFormat> files[] = {
        {"results.csv", TableFormat::csv}, {"results.json", TableFormat::json}, {"tables.md", TableFormat::markdown}};
    for (const auto& [name, format] : files) {
        const auto path = dir / name;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write " + path.string());
        emit_table(x, format, out);
        if (!out) throw IoError("failed while writing " + path.string());
    }
}

}  // namespace

void emit_tables(const std::vector<MetricsSummary>& rows, const std::filesystem::path& dir) {
    if (rows.empty()) throw InvalidArgument("emit_tables: no summaries");
    emit_all(rows, dir);
}

void emit_tables(const ApplicationTable& table, const std::filesystem::path& dir) {
    if (table.rows.empty()) throw InvalidArgument("emit_tables: empty application table");
    emit_all(table, dir);
}

}  // namespace sbias
