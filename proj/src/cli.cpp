#include "rdd/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "rdd/bandwidth.hpp"
#include "rdd/continuity.hpp"
#include "rdd/dataset.hpp"
#include "rdd/dgp.hpp"
#include "rdd/error.hpp"
#include "rdd/falsify.hpp"
#include "rdd/locrand.hpp"
#include "rdd/rdplot.hpp"

namespace rdd::cli {

namespace {

using ojson = nlohmann::ordered_json;
constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

struct Config {
    std::string command;
    std::string config_path;
    // data
    std::string data;
    std::string score;
    std::string outcome;
    std::string received;
    std::vector<std::string> covariates;
    double cutoff = kUnset;
    std::string treated = "above";
    bool fuzzy = false;
    // continuity estimation
    std::string kernel = "tri";
    int p = 1;
    double h = kUnset;
    double b = kUnset;
    std::string vce = "nn";
    double level = 0.95;
    bool separate_b = false;
    // randomization
    std::uint64_t seed = 0;
    std::size_t reps = 1000;
    double wl = kUnset;
    double wr = kUnset;
    double wstep = kUnset;
    double wmin = kUnset;
    std::size_t nwindows = 10;
    std::size_t min_side = 10;
    double threshold = 0.15;
    std::string growth = "auto";
    std::vector<double> ci_grid;
    double alpha = 0.05;
    // falsification
    std::vector<double> donut;
    std::vector<double> placebo_cutoffs;
    std::vector<double> bandwidths;
    std::vector<std::string> windows;
    std::string framework = "continuity";
    double bin_width = kUnset;
    double h_density = kUnset;
    // plot
    int p_global = 4;
    std::size_t nbins = 20;
    std::string binning = "auto";
    bool bin_ci = false;
    bool histogram = false;
    double hist_width = kUnset;
    std::vector<double> range;
    // simulate
    std::string study;
    std::string dgp = "curved";
    std::size_t n = 1000;
    std::string replications_csv;
    // outputs
    std::string out;
    std::string json;
    std::string markdown;
};

std::optional<double> opt(double v) {
    if (std::isnan(v)) return std::nullopt;
    return v;
}

ojson nullable(double v) { return std::isnan(v) ? ojson() : ojson(v); }

ojson resolved_config(const Config& c) {
    ojson j = ojson::object();
    j["command"] = c.command;
    if (c.command != "simulate") {
        j["data"] = c.data;
        j["score"] = c.score;
        j["outcome"] = c.outcome.empty() ? ojson() : ojson(c.outcome);
        j["received"] = c.received.empty() ? ojson() : ojson(c.received);
        j["covariates"] = c.covariates;
        j["cutoff"] = nullable(c.cutoff);
        j["treated"] = c.treated;
        j["fuzzy"] = c.fuzzy;
    }
    if (c.command == "estimate" || c.command == "falsify" || c.command == "simulate") {
        j["kernel"] = c.kernel;
        j["p"] = c.p;
        j["h"] = nullable(c.h);
        j["b"] = nullable(c.b);
        j["vce"] = c.vce;
        j["level"] = c.level;
        j["separate_b"] = c.separate_b;
    }
    if (c.command == "randinf" || c.command == "winselect" || c.command == "falsify" || c.command == "density") {
        j["seed"] = c.seed;
        j["reps"] = c.reps;
        j["wl"] = nullable(c.wl);
        j["wr"] = nullable(c.wr);
    }
    if (c.command == "winselect") {
        j["wstep"] = nullable(c.wstep);
        j["wmin"] = nullable(c.wmin);
        j["nwindows"] = c.nwindows;
        j["min_side"] = c.min_side;
        j["threshold"] = c.threshold;
        j["growth"] = c.growth;
    }
    if (c.command == "randinf") {
        j["ci_grid"] = c.ci_grid;
        j["alpha"] = c.alpha;
        j["level"] = c.level;
    }
    if (c.command == "density" || c.command == "falsify") {
        j["bin_width"] = nullable(c.bin_width);
        j["h_density"] = nullable(c.h_density);
    }
    if (c.command == "falsify") {
        j["framework"] = c.framework;
        j["donut"] = c.donut;
        j["placebo_cutoffs"] = c.placebo_cutoffs;
        j["bandwidths"] = c.bandwidths;
        j["windows"] = c.windows;
    }
    if (c.command == "plot") {
        j["p_global"] = c.p_global;
        j["nbins"] = c.nbins;
        j["binning"] = c.binning;
        j["bin_ci"] = c.bin_ci;
        j["histogram"] = c.histogram;
        j["hist_width"] = nullable(c.hist_width);
        j["range"] = c.range;
    }
    if (c.command == "simulate") {
        j["study"] = c.study;
        j["dgp"] = c.dgp;
        j["n"] = c.n;
        j["reps"] = c.reps;
        j["seed"] = c.seed;
    }
    return j;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::InvalidInput, "cannot write '" + path + "'");
    f << content;
}

std::string f2(double v) {
    if (!std::isfinite(v)) return std::isnan(v) ? "NA" : (v > 0 ? "Inf" : "-Inf");
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v;
    std::string s = os.str();
    if (s == "-0.00") s = "0.00";
    return s;
}

std::string f3(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << v;
    return os.str();
}

std::string interval(double lo, double hi) { return "[" + f2(lo) + ", " + f2(hi) + "]"; }
std::string interval(const Interval& i) { return interval(i.lower, i.upper); }

std::string pad_right(const std::string& s, std::size_t w) { return s.size() >= w ? s + " " : s + std::string(w - s.size(), ' '); }
std::string pad_left(const std::string& s, std::size_t w) { return s.size() >= w ? " " + s : std::string(w - s.size(), ' ') + s; }

RDDesign design_of(const Config& c) {
    if (std::isnan(c.cutoff)) throw Error(ErrorKind::InvalidInput, "--cutoff is required");
    RDDesign d;
    d.cutoff = c.cutoff;
    d.treated_side = c.treated == "below" ? TreatedSide::Below : TreatedSide::AtOrAbove;
    d.compliance = c.fuzzy ? Compliance::Fuzzy : Compliance::Sharp;
    return d;
}

RDDataset load(const Config& c, bool need_outcome, std::ostream& err) {
    if (c.data.empty()) throw Error(ErrorKind::InvalidInput, "--data is required");
    if (c.score.empty()) throw Error(ErrorKind::InvalidInput, "--score is required");
    if (need_outcome && c.outcome.empty()) throw Error(ErrorKind::InvalidInput, "--outcome is required");
    if (c.fuzzy && c.received.empty()) throw Error(ErrorKind::InvalidInput, "--fuzzy requires --received");
    if (!c.fuzzy && !c.received.empty())
        err << "warning: --received is ignored without --fuzzy (sharp design)\n";
    ColumnMap m;
    m.score = c.score;
    m.outcome = c.outcome;
    if (c.fuzzy) m.received = c.received;
    m.covariates = c.covariates;
    RDDataset d = load_csv(c.data, m);
    if (d.dropped_rows() > 0)
        err << "note: " << d.dropped_rows() << " rows with a missing score, outcome or treatment were dropped\n";
    return d;
}

EstimationSpec spec_of(const Config& c) {
    EstimationSpec s;
    s.kernel = parse_kernel(c.kernel);
    s.p = c.p;
    s.h = opt(c.h);
    s.b = opt(c.b);
    s.variance = parse_variance_method(c.vce);
    s.level = c.level;
    s.bias_bandwidth = c.separate_b ? BiasBandwidth::Separate : BiasBandwidth::EqualToMain;
    if (s.p < 0) throw Error(ErrorKind::InvalidInput, "--p must be nonnegative");
    if (!(s.level > 0.0 && s.level < 1.0)) throw Error(ErrorKind::InvalidInput, "--level must be in (0,1)");
    return s;
}

std::optional<Window> window_of(const Config& c, const RDDataset& data, const RDDesign& design) {
    if (std::isnan(c.wl) && std::isnan(c.wr)) return std::nullopt;
    if (std::isnan(c.wl) || std::isnan(c.wr)) throw Error(ErrorKind::InvalidInput, "--wl and --wr go together");
    return make_window(data.score(), design.cutoff, c.wl, c.wr);
}

RandOptions rand_of(const Config& c) {
    RandOptions r;
    r.seed = c.seed;
    r.reps = c.reps;
    return r;
}

void emit_json(const Config& c, const ojson& report, std::ostream& out, bool to_stdout_if_unset) {
    const std::string text = report.dump(2) + "\n";
    if (!c.json.empty()) write_file(c.json, text);
    if (c.json.empty() && to_stdout_if_unset) out << text;
}

void print_warnings(const std::vector<std::string>& ws, std::ostream& err) {
    for (const auto& w : ws) err << "warning: " << w << "\n";
}

// ---- estimate ------------------------------------------------------------

void table_row(std::ostream& out, const std::string& label, const RDResult& r) {
    out << pad_right(label, 34) << pad_left(f2(r.point), 10) << pad_left(interval(r.ci_rbc), 20)
        << pad_left(f2(r.h), 11) << pad_left(std::to_string(r.n_minus_h), 8) << pad_left(std::to_string(r.n_plus_h), 8)
        << "\n";
}

int cmd_estimate(const Config& c, std::ostream& out, std::ostream& err) {
    const RDDataset data = load(c, true, err);
    const RDDesign design = design_of(c);
    const EstimationSpec spec = spec_of(c);
    ojson report = ojson::object();
    report["command"] = "estimate";
    report["config"] = resolved_config(c);
    std::optional<FuzzyResult> fuzzy;
    std::optional<RDResult> sharp;
    if (c.fuzzy)
        fuzzy = estimate_fuzzy(data, design, spec);
    else
        sharp = estimate_sharp(data, design, spec);
    const std::string level = std::to_string(static_cast<int>(std::lround(spec.level * 100)));
    out << pad_right("", 34) << pad_left("RD Effect", 10) << pad_left(level + "% Robust CI", 20)
        << pad_left("Bandwidth", 11) << pad_left("N-_h", 8) << pad_left("N+_h", 8) << "\n";
    const RDResult* first = nullptr;
    std::vector<std::string> warnings;
    if (fuzzy) {
        table_row(out, "First stage (take-up)", fuzzy->first_stage);
        table_row(out, "ITT (outcome)", fuzzy->itt);
        table_row(out, "Fuzzy RD effect", fuzzy->fuzzy);
        report["result"] = *fuzzy;
        first = &fuzzy->fuzzy;
        warnings = fuzzy->fuzzy.warnings;
    } else {
        table_row(out, "RD effect", *sharp);
        report["result"] = *sharp;
        first = &*sharp;
        warnings = sharp->warnings;
    }
    out << "\nKernel: " << to_string(first->kernel) << ", p = " << first->p << ", q = " << first->q
        << ", b = " << f2(first->b) << ", variance: " << to_string(first->variance_method) << ", cutoff = "
        << design.cutoff << "\n";
    out << "Effects are the limit from above the cutoff minus the limit from below.\n";
    if (fuzzy) out << "First-stage F = " << f2(fuzzy->first_stage_f) << (fuzzy->weak_first_stage ? " (weak)" : "") << "\n";
    print_warnings(warnings, err);
    emit_json(c, report, out, false);
    return kExitOk;
}

// ---- plot ----------------------------------------------------------------

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

int cmd_plot(const Config& c, std::ostream& out, std::ostream& err) {
    const RDDataset data = load(c, !c.histogram, err);
    const RDDesign design = design_of(c);
    ojson report = ojson::object();
    report["command"] = "plot";
    report["config"] = resolved_config(c);
    std::string csv, svg;
    if (c.histogram) {
        std::optional<std::pair<double, double>> range;
        if (!c.range.empty()) {
            if (c.range.size() != 2) throw Error(ErrorKind::InvalidInput, "--range takes lo,hi");
            range = std::make_pair(c.range[0], c.range[1]);
        }
        const Histogram hist = score_histogram(data.score(), design.cutoff, opt(c.hist_width), range);
        report["histogram"] = hist;
        csv = histogram_to_csv(hist);
        svg = histogram_to_svg(hist);
    } else {
        RDPlotOptions o;
        o.p_global = c.p_global;
        o.bins_per_side = c.nbins;
        o.binning = parse_binning(c.binning);
        o.bin_ci = c.bin_ci;
        const RDPlotData plot = build_rdplot(data, design, o);
        print_warnings(plot.flags, err);
        report["plot"] = plot;
        csv = plot_to_csv(plot);
        svg = plot_to_svg(plot);
    }
    const std::string text = report.dump(2) + "\n";
    if (!c.out.empty()) {
        if (ends_with(c.out, ".csv"))
            write_file(c.out, csv);
        else if (ends_with(c.out, ".svg"))
            write_file(c.out, svg);
        else
            write_file(c.out, text);
    }
    if (!c.json.empty()) write_file(c.json, text);
    if (c.out.empty() && c.json.empty()) out << text;
    return kExitOk;
}

// ---- winselect -----------------------------------------------------------

int cmd_winselect(const Config& c, std::ostream& out, std::ostream& err) {
    if (c.covariates.empty()) throw Error(ErrorKind::InvalidInput, "winselect needs --covariates");
    const RDDataset data = load(c, false, err);
    const RDDesign design = design_of(c);
    WindowSelectOptions o;
    o.threshold = c.threshold;
    o.min_side = c.min_side;
    o.max_windows = c.nwindows;
    o.wstep = opt(c.wstep);
    o.wmin = opt(c.wmin);
    o.rand = rand_of(c);
    if (c.growth == "mass")
        o.growth = WindowGrowth::MassPoints;
    else if (c.growth == "symmetric")
        o.growth = WindowGrowth::Symmetric;
    const WindowSelectionTrace trace = select_window(data, design, c.covariates, o);
    out << pad_right("Window", 26) << pad_left("min p", 8) << pad_left("N-", 8) << pad_left("N+", 8) << "\n";
    for (const auto& cand : trace.candidate_windows) {
        const bool chosen = cand.window.lower == trace.chosen.lower && cand.window.upper == trace.chosen.upper;
        out << pad_right(interval(cand.window.lower, cand.window.upper), 26) << pad_left(f3(cand.min_p_value), 8)
            << pad_left(std::to_string(cand.window.n_minus), 8) << pad_left(std::to_string(cand.window.n_plus), 8)
            << (chosen ? "  <- chosen" : "") << "\n";
    }
    if (!trace.balanced) err << "warning: NoBalancedWindow: even the smallest window rejects balance\n";
    ojson report = ojson::object();
    report["command"] = "winselect";
    report["config"] = resolved_config(c);
    report["result"] = trace;
    emit_json(c, report, out, false);
    return kExitOk;
}

// ---- randinf -------------------------------------------------------------

void rand_row(std::ostream& out, const std::string& label, double stat, double p, const std::string& method,
              std::size_t nm, std::size_t np) {
    out << pad_right(label, 30) << pad_left(f3(stat), 11) << pad_left(f3(p), 9) << "  " << pad_right(method, 20)
        << pad_left(std::to_string(nm), 6) << pad_left(std::to_string(np), 6) << "\n";
}

int cmd_randinf(const Config& c, std::ostream& out, std::ostream& err) {
    const RDDataset data = load(c, true, err);
    const RDDesign design = design_of(c);
    const auto window = window_of(c, data, design);
    if (!window) throw Error(ErrorKind::InvalidInput, "randinf needs --wl and --wr");
    const RandOptions ro = rand_of(c);
    ojson report = ojson::object();
    report["command"] = "randinf";
    report["config"] = resolved_config(c);
    report["window"] = *window;
    out << "Window [" << f2(window->lower) << ", " << f2(window->upper) << "], seed " << c.seed << "\n";
    out << pad_right("", 30) << pad_left("Statistic", 11) << pad_left("p-value", 9) << "  " << pad_right("Method", 20)
        << pad_left("N-", 6) << pad_left("N+", 6) << "\n";
    const RandInfResult itt = fisher_test(data, design, *window, "outcome", RandStatistic::DiffMeans, ro);
    rand_row(out, c.fuzzy ? "ITT (diff. in means)" : "Diff. in means", itt.statistic, itt.p_value,
             to_string(itt.method), itt.n_minus, itt.n_plus);
    report["fisher_outcome"] = itt;
    if (c.fuzzy) {
        const RandInfResult fs = fisher_test(data, design, *window, "received", RandStatistic::DiffMeans, ro);
        rand_row(out, "First stage (diff. in means)", fs.statistic, fs.p_value, to_string(fs.method), fs.n_minus,
                 fs.n_plus);
        report["fisher_received"] = fs;
    }
    if (window->n_minus >= 2 && window->n_plus >= 2) {
        const SuperPopResult sp = superpop_estimate(data, design, *window, c.fuzzy, c.level);
        if (c.fuzzy) {
            rand_row(out, "Two-stage ratio", sp.ratio->estimate, sp.ratio->p_value, "large_sample", sp.n_minus,
                     sp.n_plus);
            out << "Two-stage " << static_cast<int>(std::lround(c.level * 100)) << "% CI " << interval(sp.ratio->ci)
                << ", first-stage F = " << f2(*sp.first_stage_f) << (*sp.first_stage_f < 10.0 ? " (weak)" : "")
                << "\n";
        } else {
            out << "Large-sample " << static_cast<int>(std::lround(c.level * 100)) << "% CI "
                << interval(sp.outcome.ci) << ", p = " << f3(sp.outcome.p_value) << "\n";
        }
        report["large_sample"] = sp;
    }
    if (!c.ci_grid.empty()) {
        if (c.ci_grid.size() != 3) throw Error(ErrorKind::InvalidInput, "--ci-grid takes from,to,step");
        const auto grid = make_grid(c.ci_grid[0], c.ci_grid[1], c.ci_grid[2]);
        const FisherCI ci = fisher_ci(data, design, *window, grid, c.alpha, ro);
        out << "Fisher " << f2(100.0 * (1.0 - c.alpha)) << "% CI (constant effect): "
            << (ci.ci ? interval(*ci.ci) : std::string("empty on grid")) << "\n";
        report["fisher_ci"] = ci;
    }
    emit_json(c, report, out, false);
    return kExitOk;
}

// ---- density -------------------------------------------------------------

void density_rows(std::ostream& out, const DiagnosticReport& rep) {
    out << pad_right("Test", 24) << pad_left("Statistic", 11) << pad_left("p-value", 9) << pad_left("N-", 8)
        << pad_left("N+", 8) << "\n";
    for (const auto* d : {rep.binomial ? &*rep.binomial : nullptr, rep.density ? &*rep.density : nullptr}) {
        if (!d) continue;
        out << pad_right(to_string(d->method), 24) << pad_left(f3(d->statistic), 11) << pad_left(f3(d->p_value), 9)
            << pad_left(std::to_string(d->n_below), 8) << pad_left(std::to_string(d->n_above), 8) << "\n";
    }
}

void run_density(const Config& c, const RDDataset& data, const RDDesign& design, DiagnosticReport& rep) {
    if (const auto w = window_of(c, data, design)) rep.binomial = binomial_density_test(data, design, w->lower, w->upper);
    DensityOptions o;
    o.bin_width = opt(c.bin_width);
    o.h = opt(c.h_density);
    try {
        rep.density = density_discontinuity_test(data, design, o);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::DiscreteScore && e.kind() != ErrorKind::InsufficientBins) throw;
        rep.flags.push_back(e.what());
    }
}

int cmd_density(const Config& c, std::ostream& out, std::ostream& err) {
    const RDDataset data = load(c, false, err);
    const RDDesign design = design_of(c);
    DiagnosticReport rep;
    run_density(c, data, design, rep);
    if (!rep.binomial && !rep.density) throw Error(ErrorKind::DiscreteScore, rep.flags.front() + "; pass --wl/--wr for the binomial test");
    density_rows(out, rep);
    print_warnings(rep.flags, err);
    ojson report = ojson::object();
    report["command"] = "density";
    report["config"] = resolved_config(c);
    report["result"] = rep;
    emit_json(c, report, out, false);
    return kExitOk;
}

// ---- falsify -------------------------------------------------------------

std::pair<double, double> parse_window(const std::string& s) {
    const auto pos = s.find(':');
    if (pos == std::string::npos) throw Error(ErrorKind::InvalidInput, "window '" + s + "' must be lo:hi");
    try {
        return {std::stod(s.substr(0, pos)), std::stod(s.substr(pos + 1))};
    } catch (const std::exception&) {
        throw Error(ErrorKind::InvalidInput, "window '" + s + "' must be lo:hi");
    }
}

int cmd_falsify(const Config& c, std::ostream& out, std::ostream& err) {
    const RDDataset data = load(c, true, err);
    const RDDesign design = design_of(c);
    const EstimationSpec spec = spec_of(c);
    DiagnosticReport rep;
    run_density(c, data, design, rep);
    const auto window = window_of(c, data, design);
    if (c.fuzzy) {
        const FuzzyResult main = estimate_fuzzy(data, design, spec);
        rep.first_stage_f = main.first_stage_f;
        if (main.weak_first_stage) rep.flags.push_back("WeakFirstStage: first-stage F < 10");
        if (window && window->n_minus >= 2 && window->n_plus >= 2) {
            const SuperPopResult sp = superpop_estimate(data, design, *window, true, c.level);
            if (*sp.first_stage_f < 10.0)
                rep.flags.push_back("WeakFirstStage: large-sample F in the window is " + f2(*sp.first_stage_f));
        }
    }
    if (!c.covariates.empty()) {
        BalanceFramework fw = BalanceFramework::Continuity;
        if (c.framework == "randomization")
            fw = BalanceFramework::LocalRandomization;
        else if (c.framework == "fuzzy")
            fw = BalanceFramework::FuzzyRatio;
        rep.balance_rows = covariate_balance(data, design, c.covariates, fw, spec, window, rand_of(c));
    }
    if (!c.placebo_cutoffs.empty()) rep.placebo_rows = placebo_cutoffs(data, design, c.placebo_cutoffs, spec);
    if (!c.donut.empty()) rep.donut_rows = donut_hole(data, design, spec, c.donut);
    if (!c.bandwidths.empty()) rep.sensitivity_rows = sensitivity_sweep(data, design, spec, c.bandwidths);
    if (!c.windows.empty()) {
        std::vector<std::pair<double, double>> ws;
        for (const auto& s : c.windows) ws.push_back(parse_window(s));
        auto rows = sensitivity_sweep(data, design, ws, rand_of(c), c.level);
        rep.sensitivity_rows.insert(rep.sensitivity_rows.end(), rows.begin(), rows.end());
    }
    const std::string md = to_markdown(rep);
    out << md;
    if (!c.markdown.empty()) write_file(c.markdown, md);
    ojson report = ojson::object();
    report["command"] = "falsify";
    report["config"] = resolved_config(c);
    report["result"] = rep;
    emit_json(c, report, out, false);
    return kExitOk;
}

// ---- simulate ------------------------------------------------------------

int cmd_simulate(const Config& c, const std::vector<std::string>& given, std::ostream& out, std::ostream&) {
    StudySpec study;
    if (!c.study.empty()) {
        std::ifstream f(c.study);
        if (!f) throw Error(ErrorKind::MissingFile, "cannot open study spec '" + c.study + "'");
        nlohmann::json j;
        try {
            f >> j;
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::InvalidSpec, std::string("malformed study spec: ") + e.what());
        }
        study = parse_study(j);
    } else {
        study.dgp = c.dgp == "linear" ? DGPSpec::linear(c.n) : DGPSpec::curved(c.n);
        if (c.dgp != "linear" && c.dgp != "curved") throw Error(ErrorKind::InvalidSpec, "--dgp is curved or linear");
        study.replications = c.reps;
        study.seed = c.seed;
        study.estimator = spec_of(c);
    }
    auto flag_given = [&](const std::string& name) { return std::find(given.begin(), given.end(), name) != given.end(); };
    if (!c.study.empty()) {
        if (flag_given("--reps")) study.replications = c.reps;
        if (flag_given("--seed")) study.seed = c.seed;
    }
    const CoverageTable t = coverage_study(study.dgp, study.replications, study.estimator, study.seed);
    out << "Replications: " << t.replications << " (failed " << t.failures << "), n = " << study.dgp.n
        << ", true effect " << t.tau_true << "\n";
    out << pad_right("", 16) << pad_left("Coverage", 10) << pad_left("Std.err", 10) << pad_left("Length", 10) << "\n";
    out << pad_right("Conventional", 16) << pad_left(f3(t.coverage_conventional), 10) << pad_left(f3(t.se_conventional), 10)
        << pad_left(f3(t.mean_length_conventional), 10) << "\n";
    out << pad_right("Robust", 16) << pad_left(f3(t.coverage_rbc), 10) << pad_left(f3(t.se_rbc), 10)
        << pad_left(f3(t.mean_length_rbc), 10) << "\n";
    out << "Mean h " << f3(t.mean_h) << ", bias " << f3(t.bias) << ", RMSE " << f3(t.rmse) << "\n";
    if (!c.out.empty()) write_file(c.out, coverage_to_csv(t));
    if (!c.replications_csv.empty()) write_file(c.replications_csv, replications_to_csv(t));
    ojson report = ojson::object();
    report["command"] = "simulate";
    ojson cfg = resolved_config(c);
    cfg["resolved_study"] = {{"dgp", study.dgp},
                             {"replications", study.replications},
                             {"seed", study.seed},
                             {"kernel", to_string(study.estimator.kernel)},
                             {"p", study.estimator.p},
                             {"level", study.estimator.level}};
    report["config"] = cfg;
    report["result"] = t;
    emit_json(c, report, out, false);
    return kExitOk;
}

// ---- argument plumbing ---------------------------------------------------

void add_data(CLI::App* s, Config& c, bool outcome) {
    s->add_option("--data", c.data, "input CSV file");
    s->add_option("--score", c.score, "score column");
    if (outcome) s->add_option("--outcome", c.outcome, "outcome column");
    s->add_option("--received", c.received, "received-treatment column (0/1)");
    s->add_option("--covariates", c.covariates, "comma-separated covariate columns")->delimiter(',');
    s->add_option("--cutoff", c.cutoff, "cutoff value");
    s->add_option("--treated", c.treated, "treated side")->check(CLI::IsMember({"above", "below"}));
    s->add_flag("--fuzzy", c.fuzzy, "fuzzy design (needs --received)");
    s->add_option("--config", c.config_path, "JSON file with default flag values");
    s->add_option("--json", c.json, "write the JSON report here");
}

void add_estimation(CLI::App* s, Config& c) {
    s->add_option("--kernel", c.kernel, "tri, uni or epa");
    s->add_option("--p", c.p, "local polynomial order");
    s->add_option("--h", c.h, "main bandwidth (selected when absent)");
    s->add_option("--b", c.b, "bias bandwidth (defaults to h)");
    s->add_option("--vce", c.vce, "nn or plugin");
    s->add_option("--level", c.level, "confidence level");
    s->add_flag("--separate-b", c.separate_b, "select a separate bias bandwidth");
}

void add_random(CLI::App* s, Config& c) {
    s->add_option("--seed", c.seed, "master seed");
    s->add_option("--reps", c.reps, "Monte Carlo permutations");
    s->add_option("--wl", c.wl, "window lower end");
    s->add_option("--wr", c.wr, "window upper end");
}

std::string usage_text(CLI::App& app) { return app.help(); }

// Inserts `--key value` pairs from a JSON config for every key not already
// given on the command line, right after the subcommand name.
std::vector<std::string> merge_config(const std::vector<std::string>& args) {
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (path.empty() || args.empty()) return args;
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::MissingFile, "cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidInput, std::string("malformed config: ") + e.what());
    }
    if (!j.is_object()) throw Error(ErrorKind::InvalidInput, "config must be a JSON object");
    auto given = [&](const std::string& flag) {
        return std::any_of(args.begin(), args.end(),
                           [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
    };
    std::vector<std::string> extra;
    for (const auto& [key, value] : j.items()) {
        std::string flag = "--" + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        if (given(flag)) continue;
        if (value.is_boolean()) {
            if (value.get<bool>()) extra.push_back(flag);
            continue;
        }
        std::string v;
        if (value.is_array()) {
            for (const auto& e : value) v += (v.empty() ? "" : ",") + (e.is_string() ? e.get<std::string>() : e.dump());
        } else {
            v = value.is_string() ? value.get<std::string>() : value.dump();
        }
        extra.push_back(flag + "=" + v);
    }
    std::vector<std::string> merged{args.front()};
    merged.insert(merged.end(), extra.begin(), extra.end());
    merged.insert(merged.end(), args.begin() + 1, args.end());
    return merged;
}

bool is_validation(ErrorKind k) {
    switch (k) {
        case ErrorKind::InvalidInput:
        case ErrorKind::MissingFile:
        case ErrorKind::MissingColumn:
        case ErrorKind::DuplicateColumn:
        case ErrorKind::NonNumericCell:
        case ErrorKind::InvalidSpec:
        case ErrorKind::EmptyGrid:
        case ErrorKind::SideAmbiguous:
        case ErrorKind::CutoffOutsideSupport:
            return true;
        default:
            return false;
    }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Config c;
    CLI::App app{"Regression-discontinuity analysis: estimation, inference, falsification and plots", "rdd"};
    app.set_help_flag("--help", "show this help");  // -h would clash with --h
    app.set_help_all_flag("--help-all", "show help for every subcommand");

    auto* estimate = app.add_subcommand("estimate", "local polynomial estimate with robust bias-corrected inference");
    add_data(estimate, c, true);
    add_estimation(estimate, c);

    auto* plot = app.add_subcommand("plot", "binned-means RD plot data, or a score histogram");
    add_data(plot, c, true);
    plot->add_option("--p-global", c.p_global, "global polynomial order of the overlay");
    plot->add_option("--nbins", c.nbins, "bins per side");
    plot->add_option("--binning", c.binning, "auto, es, qs or mp");
    plot->add_flag("--bin-ci", c.bin_ci, "add per-bin normal confidence intervals");
    plot->add_flag("--histogram", c.histogram, "histogram of the score instead");
    plot->add_option("--hist-width", c.hist_width, "histogram bin width");
    plot->add_option("--range", c.range, "histogram range lo,hi")->delimiter(',');
    plot->add_option("--out", c.out, "output file: .json, .csv or .svg");

    auto* winselect = app.add_subcommand("winselect", "covariate-balance window selection");
    add_data(winselect, c, false);
    add_random(winselect, c);
    winselect->add_option("--wstep", c.wstep, "symmetric window step");
    winselect->add_option("--wmin", c.wmin, "first window half-width");
    winselect->add_option("--nwindows", c.nwindows, "maximum number of windows");
    winselect->add_option("--min-side", c.min_side, "observations per side in the first window");
    winselect->add_option("--threshold", c.threshold, "balance p-value threshold");
    winselect->add_option("--growth", c.growth, "auto, mass or symmetric")
        ->check(CLI::IsMember({"auto", "mass", "symmetric"}));

    auto* randinf = app.add_subcommand("randinf", "Fisherian and large-sample inference in a window");
    add_data(randinf, c, true);
    add_random(randinf, c);
    randinf->add_option("--ci-grid", c.ci_grid, "from,to,step for the Fisher confidence interval")->delimiter(',');
    randinf->add_option("--alpha", c.alpha, "Fisher confidence-interval level is 1 - alpha");
    randinf->add_option("--level", c.level, "large-sample confidence level");

    auto* density = app.add_subcommand("density", "score density tests");
    add_data(density, c, false);
    add_random(density, c);
    density->add_option("--bin-width", c.bin_width, "histogram bin width of the density test");
    density->add_option("--h-density", c.h_density, "bandwidth of the density test");

    auto* falsify = app.add_subcommand("falsify", "falsification battery");
    add_data(falsify, c, true);
    add_estimation(falsify, c);
    add_random(falsify, c);
    falsify->add_option("--framework", c.framework, "balance framework")
        ->check(CLI::IsMember({"continuity", "randomization", "fuzzy"}));
    falsify->add_option("--donut", c.donut, "donut radii")->delimiter(',');
    falsify->add_option("--placebo-cutoffs", c.placebo_cutoffs, "placebo cutoffs")->delimiter(',');
    falsify->add_option("--bandwidths", c.bandwidths, "bandwidths for the sensitivity sweep")->delimiter(',');
    falsify->add_option("--windows", c.windows, "windows lo:hi for the sensitivity sweep")->delimiter(',');
    falsify->add_option("--bin-width", c.bin_width, "histogram bin width of the density test");
    falsify->add_option("--h-density", c.h_density, "bandwidth of the density test");
    falsify->add_option("--markdown", c.markdown, "write the markdown report here");

    auto* simulate = app.add_subcommand("simulate", "Monte Carlo coverage study");
    simulate->add_option("--study", c.study, "JSON study spec");
    simulate->add_option("--dgp", c.dgp, "curved or linear");
    simulate->add_option("--n", c.n, "sample size");
    simulate->add_option("--reps", c.reps, "replications");
    simulate->add_option("--seed", c.seed, "master seed");
    add_estimation(simulate, c);
    simulate->add_option("--out", c.out, "summary CSV");
    simulate->add_option("--replications-csv", c.replications_csv, "per-replication CSV");
    simulate->add_option("--json", c.json, "write the JSON report here");
    simulate->add_option("--config", c.config_path, "JSON file with default flag values");

    if (args.empty()) {
        err << usage_text(app);
        return kExitUsage;
    }
    try {
        std::vector<std::string> merged = merge_config(args);
        std::vector<std::string> reversed(merged.rbegin(), merged.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << usage_text(app);
        return kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    try {
        for (auto* sub : app.get_subcommands()) {
            c.command = sub->get_name();
            if (sub == estimate) return cmd_estimate(c, out, err);
            if (sub == plot) return cmd_plot(c, out, err);
            if (sub == winselect) return cmd_winselect(c, out, err);
            if (sub == randinf) return cmd_randinf(c, out, err);
            if (sub == density) return cmd_density(c, out, err);
            if (sub == falsify) return cmd_falsify(c, out, err);
            if (sub == simulate) return cmd_simulate(c, args, out, err);
        }
        err << usage_text(app);
        return kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return is_validation(e.kind()) ? kExitUsage : kExitAnalysis;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitAnalysis;
    }
}

}  // namespace rdd::cli
