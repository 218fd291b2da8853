// Command-line front end: simulate, weights, bias, fit, experiment, tables, apply.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "sbias/app.hpp"
#include "sbias/bias.hpp"
#include "sbias/error.hpp"

namespace fs = std::filesystem;
using namespace sbias;

namespace {

constexpr int exit_validation = 2;
constexpr int exit_numerical = 3;

// "knn:4", "dist:0.95" or "dist:0.95:raw".
WeightConfig parse_weights(const std::string& s) {
    std::stringstream ss(s);
    std::string kind, value, flag;
    std::getline(ss, kind, ':');
    std::getline(ss, value, ':');
    std::getline(ss, flag, ':');
    try {
        if (kind == "knn") return WeightConfig::knn(std::stoul(value));
        if (kind == "dist" || kind == "distance") return WeightConfig::distance(std::stod(value), flag != "raw");
    } catch (const std::logic_error&) {
    }
    throw InvalidArgument("bad weight scheme '" + s + "' (expected knn:K or dist:P[:raw])");
}

FieldKind parse_kind(const std::string& s) {
    if (s == "normal" || s == "continuous") return FieldKind::normal;
    if (s == "binary" || s == "discrete") return FieldKind::binary;
    if (s == "poisson") return FieldKind::poisson;
    throw InvalidArgument("unknown field kind '" + s + "'");
}

fs::path default_out_dir() {
    if (const char* env = std::getenv("SBIAS_OUT_DIR"); env && *env) return env;
    return ".";
}

struct ModelArgs {
    std::string model = "M2";
    double b0 = 0.0, ba = 8.0, bat = 2.0, bu = 0.0, but = 0.0;
    std::string weights = "knn:4";
    std::string phi_weights;
    double error_range = 0.0;
    double error_variance = 1.0;
    double error_nugget = 0.0;
    std::string treatment = "normal";
    double treatment_range = 1.0;
    double rho = 0.0;

    void add(CLI::App* app) {
        app->add_option("--model", model, "Generating model M1-M6")->check(CLI::IsMember({"M1", "M2", "M3", "M4", "M5", "M6"}));
        app->add_option("--b0", b0, "Intercept");
        app->add_option("--ba", ba, "Treatment effect");
        app->add_option("--bat", bat, "Interference effect");
        app->add_option("--bu", bu, "Direct confounder effect");
        app->add_option("--but", but, "Indirect confounder effect");
        app->add_option("--weights", weights, "Treatment weights: knn:K or dist:P[:raw]");
        app->add_option("--phi-weights", phi_weights, "Confounder weights (default: same as --weights)");
        app->add_option("--error-range", error_range, "Exponential error range (0: iid errors)");
        app->add_option("--error-variance", error_variance, "Error partial sill");
        app->add_option("--error-nugget", error_nugget, "Error nugget");
        app->add_option("--treatment", treatment, "Treatment kind: normal, binary, poisson");
        app->add_option("--treatment-range", treatment_range, "Range of the treatment field without confounder");
        app->add_option("--rho", rho, "Treatment-confounder correlation");
    }

    ModelSpec build() const {
        const CovarianceSpec err = error_range > 0 ? CovarianceSpec::exponential(error_range, error_variance, error_nugget)
                                                   : CovarianceSpec::iid(error_variance + error_nugget);
        const WeightConfig psi = parse_weights(weights);
        const WeightConfig phi = phi_weights.empty() ? psi : parse_weights(phi_weights);
        ModelSpec s;
        if (model == "M1") s = ModelSpec::m1(b0, ba, err);
        if (model == "M2") s = ModelSpec::m2(b0, ba, bat, psi, err);
        if (model == "M3") s = ModelSpec::m3(b0, ba, bat, bu, psi, err);
        if (model == "M4") s = ModelSpec::m4(b0, ba, bu, err);
        if (model == "M5") s = ModelSpec::m5(b0, ba, bu, but, phi, err);
        if (model == "M6") s = ModelSpec::m6(b0, ba, bat, bu, but, psi, phi, err);
        s.psi = psi;
        if (s.has_confounder()) s.phi = phi;
        s.treatment_kind = parse_kind(treatment);
        s.confounder_kind = s.treatment_kind;
        s.treatment_cov = CovarianceSpec::exponential(treatment_range);
        s.pair.rho = rho;
        return s;
    }
};

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
}

std::vector<MetricsSummary> run_cells(const std::vector<ExperimentConfig>& cells, unsigned threads, bool verbose) {
    std::vector<MetricsSummary> out;
    for (const auto& c : cells) {
        if (verbose) std::cerr << "running " << c.id << " (" << c.replicates << " replicates)\n";
        out.push_back(run_experiment(c, threads));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spatial interference and confounding bias laboratory"};
    app.set_config("--config", "", "Key-value configuration file (INI/TOML); flags override it");
    app.require_subcommand(1);
    app.fallthrough();

    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::string out_dir = default_out_dir().string();
    bool quiet = false;
    app.add_option("--threads", threads, "Worker threads (0: all cores)");
    app.add_option("--out", out_dir, "Output directory (default: $SBIAS_OUT_DIR or .)");
    app.add_flag("--quiet", quiet, "Suppress progress messages");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Generate one dataset and write it as CSV");
    ModelArgs sim_model;
    sim_model.add(sim);
    std::size_t sim_n = 100;
    sim->add_option("--seed", seed, "Random seed")->required();
    sim->add_option("--n", sim_n, "Number of locations");

    // weights
    auto* wts = app.add_subcommand("weights", "Build a weight matrix and write it as a CSV grid");
    std::string wts_scheme = "knn:4", wts_input;
    std::size_t wts_n = 100;
    bool wts_geodesic = false;
    wts->add_option("--scheme", wts_scheme, "knn:K or dist:P[:raw]");
    wts->add_option("--input", wts_input, "CSV with x,y columns (otherwise random locations)");
    wts->add_option("--n", wts_n, "Number of random locations");
    wts->add_option("--seed", seed, "Random seed (random locations)");
    wts->add_flag("--geodesic", wts_geodesic, "Great-circle distances for lon/lat input");

    // bias
    auto* bs = app.add_subcommand("bias", "Evaluate an analytical bias formula on a dataset");
    std::string bs_input, bs_formula = "si", bs_scheme = "knn:4";
    double bs_beta = 1.0, bs_range = 0.0, bs_d1 = 1.0, bs_d2 = 1.0, bs_estimate = std::nan("");
    bs->add_option("--formula", bs_formula, "si | poisson")->check(CLI::IsMember({"si", "poisson"}));
    bs->add_option("--input", bs_input, "Dataset CSV (x,y,Y,A)");
    bs->add_option("--scheme", bs_scheme, "Weight scheme for the interference term");
    bs->add_option("--beta", bs_beta, "Effect size of the omitted term");
    bs->add_option("--error-range", bs_range, "Exponential covariance range for the spatial formula (0: non-spatial)");
    bs->add_option("--delta1", bs_d1, "Poisson rate of the treatment-only part");
    bs->add_option("--delta2", bs_d2, "Poisson rate of the confounder");
    bs->add_option("--estimate", bs_estimate, "Also report this estimate corrected for interference");

    // fit
    auto* ft = app.add_subcommand("fit", "Fit a model to a dataset CSV");
    std::string ft_input, ft_model = "T", ft_estimator = "ols", ft_scheme = "knn:4";
    bool ft_geodesic = false;
    ColumnMap ft_cols;
    ft->add_option("--input", ft_input, "Dataset CSV")->required();
    ft->add_option("--model", ft_model, "Fitted terms, e.g. T, T+I, T+I+DSC+ISC");
    ft->add_option("--estimator", ft_estimator, "ols | gls-ml");
    ft->add_option("--weights", ft_scheme, "Weight scheme for I/ISC terms");
    ft->add_flag("--geodesic", ft_geodesic, "Great-circle distances for lon/lat input");

    // experiment / tables
    auto* ex = app.add_subcommand("experiment", "Run selected Monte Carlo cells and print their summaries");
    auto* tb = app.add_subcommand("tables", "Run whole tables and write results.csv, results.json, tables.md");
    std::vector<std::string> tables{"T1"};
    std::string cell_filter, estimator_override;
    std::size_t replicates = 0;
    bool fixed_treatment = false;
    for (auto* sub : {ex, tb}) {
        sub->add_option("--table", tables, "Table ids: T1 T2 T3 T4 B1 B2")->expected(1, -1);
        sub->add_option("--seed", seed, "Base seed")->required();
        sub->add_option("--replicates", replicates, "Override the replicate count");
        sub->add_option("--estimator", estimator_override, "Override the estimator: ols, gls-known, gls-ml");
        sub->add_flag("--fixed-treatment", fixed_treatment, "Keep locations and treatment fixed across replicates");
    }
    ex->add_option("--cell", cell_filter, "Only cells whose id contains this text");

    // apply
    auto* ap = app.add_subcommand("apply", "Seven-model comparison on a point CSV");
    std::string ap_input;
    std::vector<std::string> ap_schemes{"knn:4", "dist:0.5"};
    bool ap_geodesic = false;
    ColumnMap ap_cols;
    std::string ap_conf = "U";
    for (auto* sub : {ap, ft}) {
        ColumnMap& cm = sub == ap ? ap_cols : ft_cols;
        sub->add_option("--col-x", cm.x, "Column holding x / longitude");
        sub->add_option("--col-y", cm.y, "Column holding y / latitude");
        sub->add_option("--col-outcome", cm.outcome, "Outcome column");
        sub->add_option("--col-treatment", cm.treatment, "Treatment column");
    }
    ap->add_option("--col-confounder", ap_conf, "Confounder column");
    ap->add_option("--input", ap_input, "Point CSV")->required();
    ap->add_option("--weights", ap_schemes, "Weight schemes")->expected(1, -1);
    ap->add_flag("--geodesic", ap_geodesic, "Great-circle distances for lon/lat input");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_validation;
    }

    try {
        const fs::path out = out_dir;
        if (*sim) {
            const ModelSpec spec = sim_model.build();
            const LocationSet loc = sample_locations(sim_n, Bounds{}, derive_seed(seed, {1}));
            const DataSet data = generate(spec, loc, derive_seed(seed, {2}));
            std::ostringstream s;
            write_dataset_csv(data, s);
            write_file(out / "dataset.csv", s.str());
            if (!quiet) std::cerr << "wrote " << (out / "dataset.csv").string() << '\n';
        } else if (*wts) {
            std::optional<LocationSet> loc;
            if (!wts_input.empty()) {
                ColumnMap cm;
                cm.outcome = cm.x;
                cm.treatment = cm.y;
                cm.confounder.reset();
                loc = read_spatial_csv(fs::path(wts_input), cm).loc;
            } else {
                if (wts->count("--seed") == 0) throw InvalidArgument("weights: --seed is required for random locations");
                loc = sample_locations(wts_n, Bounds{}, seed);
            }
            const DistanceMatrix d = distance_matrix(*loc, wts_geodesic ? DistanceMetric::geodesic : DistanceMetric::planar);
            const WeightMatrix w = parse_weights(wts_scheme).build(d);
            std::ostringstream s;
            write_weights_csv(w, s);
            write_file(out / "weights.csv", s.str());
            if (w.empty_neighbourhood()) std::cerr << "warning: weight matrix is empty\n";
            if (!quiet) std::cerr << "wrote " << (out / "weights.csv").string() << '\n';
        } else if (*bs) {
            BiasRecord rec;
            if (bs_formula == "poisson") {
                const PoissonPairSpec spec{bs_d1, bs_d2};
                rec = {"poisson_confounding", InputDigest().add(bs_beta).add(bs_d1).add(bs_d2).hex(),
                       poisson_confounding_bias(bs_beta, spec)};
            } else {
                if (bs_input.empty()) throw InvalidArgument("bias --formula si needs --input");
                ColumnMap cm;
                cm.confounder.reset();
                const DataSet data = read_spatial_csv(fs::path(bs_input), cm);
                const DistanceMatrix d = distance_matrix(data.loc);
                const WeightMatrix psi = parse_weights(bs_scheme).build(d);
                std::optional<Matrix> omega;
                if (bs_range > 0) omega = covariance_matrix(d, CovarianceSpec::exponential(bs_range));
                const Vector Ac = center_for_intercept(data.A, omega);
                const double value = omega ? si_bias_spatial(Ac, psi, *omega, bs_beta) : si_bias_nonspatial(Ac, psi, bs_beta);
                InputDigest dig;
                dig.add(Ac).add(psi.values()).add(bs_beta).add(bs_range);
                rec = {omega ? "si_spatial" : "si_nonspatial", dig.hex(), value};
                if (std::isfinite(bs_estimate)) {
                    nlohmann::json j = rec;
                    j["corrected_estimate"] = bs_estimate - value;
                    std::cout << j.dump(2) << '\n';
                    return 0;
                }
            }
            std::cout << nlohmann::json(rec).dump(2) << '\n';
        } else if (*ft) {
            ColumnMap cm = ft_cols;
            const TermSet terms = TermSet::parse(ft_model);
            if (!(terms.has(Term::direct) || terms.has(Term::indirect))) cm.confounder.reset();
            DataSet data = read_spatial_csv(fs::path(ft_input), cm);
            const DistanceMatrix d = distance_matrix(data.loc, ft_geodesic ? DistanceMetric::geodesic : DistanceMetric::planar);
            const WeightMatrix w = parse_weights(ft_scheme).build(d);
            data.Atilde = apply_weights(w, data.A);
            if (data.U) data.Utilde = apply_weights(w, *data.U);
            const Design design = design_matrix(data, terms);
            FitResult fit;
            const Estimator est = parse_estimator(ft_estimator);
            if (est == Estimator::gls_known) throw InvalidArgument("fit supports ols and gls-ml");
            fit = est == Estimator::ols ? ols_fit(design.X, data.Y) : ml_fit(design.X, data.Y, d);
            fit.names = design.names;
            std::cout << nlohmann::json(fit).dump(2) << '\n';
        } else if (*ex || *tb) {
            std::vector<ExperimentConfig> cells;
            for (const auto& t : tables)
                for (auto c : scenario_grid(t)) {
                    if (!cell_filter.empty() && c.id.find(cell_filter) == std::string::npos) continue;
                    c.base_seed = seed;
                    if (replicates) c.replicates = replicates;
                    if (!estimator_override.empty()) c.estimator = parse_estimator(estimator_override);
                    if (fixed_treatment) c.redraw_treatment = false;
                    cells.push_back(c);
                }
            if (cells.empty()) throw InvalidArgument("no experiment cells match the selection");
            const auto rows = run_cells(cells, threads, !quiet);
            if (*tb) {
                emit_tables(rows, out);
                if (!quiet) std::cerr << "wrote results.csv, results.json, tables.md to " << out.string() << '\n';
            } else {
                emit_table(rows, TableFormat::csv, std::cout);
            }
        } else if (*ap) {
            ColumnMap cm = ap_cols;
            cm.confounder = ap_conf;
            CsvReport rep;
            const DataSet data = read_spatial_csv(fs::path(ap_input), cm, &rep);
            if (!quiet && rep.rows_dropped)
                std::cerr << "dropped " << rep.rows_dropped << " row(s) with missing values\n";
            std::vector<WeightConfig> schemes;
            for (const auto& s : ap_schemes) schemes.push_back(parse_weights(s));
            ApplicationOptions opt;
            opt.geodesic = ap_geodesic;
            const ApplicationTable table = application_pipeline(data, schemes, opt);
            emit_tables(table, out);
            emit_table(table, TableFormat::markdown, std::cout);
        }
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_validation;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_validation;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return exit_numerical;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_validation;
    }
    return 0;
}
