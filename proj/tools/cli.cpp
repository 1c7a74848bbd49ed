#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "treesense/data_aware.hpp"
#include "treesense/encoding.hpp"
#include "treesense/ensemble.hpp"
#include "treesense/metrics.hpp"
#include "treesense/query.hpp"
#include "treesense/reductions.hpp"
#include "treesense/solver.hpp"

namespace treesense::cli {

namespace {

using json = nlohmann::json;

struct UsageError : Error {
    using Error::Error;
};

std::string num(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << text;
    if (!out) throw Error("write failed for " + path);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',' || std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

template <class T>
T parse_number(const std::string& token, const char* what) {
    T v{};
    auto [p, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || p != token.data() + token.size())
        throw UsageError(std::string("invalid ") + what + " '" + token + "'");
    return v;
}

std::vector<FeatureId> parse_features(const Ensemble& e, const std::string& selector) {
    std::vector<std::string> tokens;
    for (auto& t : split_list(selector)) {
        if (t.front() == '@') {
            for (auto& u : split_list(read_file(t.substr(1)))) tokens.push_back(std::move(u));
        } else {
            tokens.push_back(std::move(t));
        }
    }
    if (tokens.empty()) throw UsageError("empty feature selector");
    std::vector<FeatureId> out;
    for (const auto& t : tokens) {
        auto f = e.find_feature(t);
        if (!f) throw UsageError("unknown feature '" + t + "'");
        out.push_back(*f);
    }
    return out;
}

/** Options shared by verify and export-lp. */
struct QueryArgs {
    std::string model;
    std::string features;
    double gap_prob = 0.0;
    double gap_raw = 0.0;
    double gap_ratio = 1.0;
    CLI::Option* gap_prob_opt = nullptr;
    CLI::Option* gap_raw_opt = nullptr;
    CLI::Option* gap_ratio_opt = nullptr;
    std::string classes;
    std::string mode = "none";
    std::string data;
    std::string marginals;
    std::string clauses;
    bool strict_zero = false;

    void attach(CLI::App* app) {
        app->add_option("--model", model, "Model JSON")->required();
        app->add_option("--features", features, "Sensitive features: names or indices, comma list, @file")
            ->required();
        gap_prob_opt = app->add_option("--gap-prob", gap_prob, "Probability gap g in [0, 0.5)");
        gap_raw_opt = app->add_option("--gap-raw", gap_raw, "Raw-score gap delta >= 0");
        gap_ratio_opt = app->add_option("--gap-ratio", gap_ratio, "Multiclass softmax ratio g >= 1");
        gap_prob_opt->excludes(gap_raw_opt)->excludes(gap_ratio_opt);
        gap_raw_opt->excludes(gap_ratio_opt);
        app->add_option("--classes", classes, "Multiclass pair c1,c2");
        app->add_option("--mode", mode, "none, prob, clause or probclause");
        app->add_option("--data", data, "Numeric CSV dataset");
        app->add_option("--marginals", marginals, "Marginal table JSON");
        app->add_option("--clauses", clauses, "Clause JSON");
        app->add_flag("--strict-zero", strict_zero, "Make the binary gap strict at g = 0");
    }
};

struct Context {
    Ensemble model;
    GuardIndex gi;
    SensitivityQuery query;
    std::optional<Dataset> data;
    std::optional<DataHint> hint;
};

Context build_context(QueryArgs& a) {
    Context ctx;
    ctx.model = load_model_file(a.model);
    ctx.gi = GuardIndex(ctx.model);
    SensitivityQuery& q = ctx.query;
    q.features = parse_features(ctx.model, a.features);
    try {
        q.mode = parse_data_mode(a.mode);
    } catch (const Error& ex) {
        throw UsageError(ex.what());
    }
    if (a.gap_prob_opt->count())
        q.gap = ProbGap{a.gap_prob};
    else if (a.gap_raw_opt->count())
        q.gap = RawGap{a.gap_raw};
    else if (a.gap_ratio_opt->count() || !ctx.model.is_binary())
        q.gap = RatioGap{a.gap_ratio};
    else
        q.gap = ProbGap{0.0};
    if (!a.classes.empty()) {
        auto parts = split_list(a.classes);
        if (parts.size() != 2) throw UsageError("--classes expects two class ids c1,c2");
        q.classes = {parse_number<int>(parts[0], "class id"), parse_number<int>(parts[1], "class id")};
    }
    q.strict_zero = a.strict_zero;

    if (!a.data.empty()) {
        ctx.data = load_csv(a.data);
        validate_dataset(*ctx.data, ctx.model.num_features());
        ctx.hint = make_data_hint(*ctx.data);
    }
    if (!a.marginals.empty())
        q.marginals = load_marginals(read_file(a.marginals), ctx.gi);
    else if (ctx.data)
        q.marginals = estimate_marginals(ctx.gi, *ctx.data);
    if (uses_marginals(q.mode) && !q.marginals)
        throw UsageError("mode " + a.mode + " requires --data or --marginals");
    if (uses_clauses(q.mode)) {
        if (!a.clauses.empty())
            q.clauses = load_clauses(read_file(a.clauses), ctx.gi);
        else if (ctx.data)
            q.clauses = mine_clauses(ctx.model, ctx.gi, *ctx.data);
        else
            throw UsageError("mode " + a.mode + " requires --clauses or --data");
    }
    try {
        validate_query(ctx.model, q);
    } catch (const Error& ex) {
        throw UsageError(ex.what());
    }
    return ctx;
}

json assignment_json(const IntervalAssignment& a) { return json(a); }

json pair_json(const CounterexamplePair& p) {
    json j{{"x1", p.x1},           {"x2", p.x2},       {"raw1", p.raw1},   {"raw2", p.raw2},
           {"prob1", p.prob1},     {"prob2", p.prob2}, {"objective", p.objective}};
    j["region1"] = assignment_json(p.region1);
    j["region2"] = assignment_json(p.region2);
    return j;
}

int exit_for(Verdict v) {
    switch (v) {
        case Verdict::sensitive: return kSensitive;
        case Verdict::not_sensitive: return kNotSensitive;
        case Verdict::timeout: return kTimeout;
    }
    return kFailure;
}

struct VerifyArgs : QueryArgs {
    std::string level = "full";
    double timeout = 3600.0;
    std::uint64_t node_limit = 0;
    bool json_out = false;
    std::string output;
    std::string instance;
};

int cmd_verify(VerifyArgs& a, std::ostream& out) {
    Context ctx = build_context(a);
    SolveOptions opts;
    try {
        opts.level = parse_opt_level(a.level);
    } catch (const Error& ex) {
        throw UsageError(ex.what());
    }
    if (!(a.timeout > 0.0)) throw UsageError("--timeout must be positive");
    opts.budget.time_limit_s = a.timeout;
    opts.budget.node_limit = a.node_limit;
    if (ctx.hint) opts.data_hint = &*ctx.hint;
    const Outcome res = solve(ctx.model, ctx.gi, ctx.query, opts);

    std::optional<RegionDistanceReport> dist;
    if (res.pair && ctx.data)
        dist = region_distance(ctx.model, *ctx.data, *res.pair, ctx.query.features, fit_scaler(*ctx.data));

    const std::string instance =
        a.instance.empty() ? std::filesystem::path(a.model).stem().string() : a.instance;
    json report{{"instance", instance},
                {"mode", to_string(ctx.query.mode)},
                {"level", to_string(opts.level)},
                {"verdict", to_string(res.verdict)},
                {"runtime_ms", res.stats.wall_ms},
                {"features", ctx.query.features},
                {"stats",
                 {{"nodes", res.stats.nodes},
                  {"pruned_bound", res.stats.pruned_bound},
                  {"pruned_clause", res.stats.pruned_clause}}}};
    std::vector<std::string> names;
    for (FeatureId f : ctx.query.features) names.push_back(ctx.model.feature_label(f));
    report["feature_names"] = names;
    report["pair"] = res.pair ? pair_json(*res.pair) : json();
    report["utility_log"] = res.pair && res.pair->utility_log ? json(*res.pair->utility_log) : json();
    report["distance"] = dist ? json(dist->distance) : json();
    if (dist) report["nearest_row_index"] = dist->nearest_row_index;

    if (!a.output.empty()) write_file(a.output, report.dump(2) + "\n");
    if (a.json_out) {
        out << report.dump(2) << "\n";
        return exit_for(res.verdict);
    }

    out << "verdict: " << to_string(res.verdict) << "\n";
    out << "features:";
    for (const auto& n : names) out << " " << n;
    out << "\n";
    if (res.pair) {
        const auto& p = *res.pair;
        size_t width = 7;
        for (int f = 0; f < ctx.model.num_features(); ++f) width = std::max(width, ctx.model.feature_label(f).size());
        out << std::left << std::setw(static_cast<int>(width) + 2) << "feature" << std::setw(24) << "x1"
            << "x2\n";
        for (int f = 0; f < ctx.model.num_features(); ++f)
            out << std::setw(static_cast<int>(width) + 2) << ctx.model.feature_label(f) << std::setw(24)
                << num(p.x1[f]) << num(p.x2[f]) << (ctx.query.in_f(f) ? "  *" : "") << "\n";
        out << std::right;
        auto vec = [](const std::vector<double>& v) {
            std::string s = "[";
            for (size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + num(v[i]);
            return s + "]";
        };
        out << "raw: x1 " << vec(p.raw1) << "  x2 " << vec(p.raw2) << "\n";
        out << "prob: x1 " << vec(p.prob1) << "  x2 " << vec(p.prob2) << "\n";
        if (p.utility_log) out << "utility_log: " << num(*p.utility_log) << "\n";
        if (dist) out << "distance: " << num(dist->distance) << " (row " << dist->nearest_row_index << ")\n";
    }
    out << "nodes: " << res.stats.nodes << "  time_ms: " << num(res.stats.wall_ms) << "\n";
    return exit_for(res.verdict);
}

struct ExportArgs : QueryArgs {
    std::string level = "full";
    std::string output;
};

int cmd_export_lp(ExportArgs& a, std::ostream& out) {
    Context ctx = build_context(a);
    OptLevel level;
    try {
        level = parse_opt_level(a.level);
    } catch (const Error& ex) {
        throw UsageError(ex.what());
    }
    const EncodingArtifact art = encode(ctx.model, ctx.gi, ctx.query, level);
    const std::string lp = export_lp_string(art);
    if (a.output.empty()) {
        out << lp;
    } else {
        write_file(a.output, lp);
        out << "wrote " << art.constraints.size() << " rows, " << art.variables.size() << " variables to "
            << a.output << "\n";
    }
    return 0;
}

struct MineArgs {
    std::string model;
    std::string data;
    std::string output;
    std::string marginals_out;
    int max_width = 3;
    int max_clauses = 1500;
    int feature_budget = 64;
};

int cmd_mine(const MineArgs& a, std::ostream& out) {
    if (a.max_width < 1) throw UsageError("--max-width must be >= 1");
    if (a.max_clauses < 0) throw UsageError("--max-clauses must be >= 0");
    if (a.feature_budget < 0) throw UsageError("--feature-budget must be >= 0");
    const Ensemble e = load_model_file(a.model);
    const GuardIndex gi(e);
    const Dataset d = load_csv(a.data);
    validate_dataset(d, e.num_features());
    MineOptions opts;
    opts.max_width = a.max_width;
    opts.max_clauses = a.max_clauses;
    if (a.feature_budget > 0)
        opts.feature_budget = a.feature_budget;
    else
        opts.feature_budget.reset();
    const auto clauses = mine_clauses(e, gi, d, opts);
    write_file(a.output, dump_clauses(clauses, gi) + "\n");
    if (!a.marginals_out.empty()) write_file(a.marginals_out, dump_marginals(estimate_marginals(gi, d)) + "\n");
    out << clauses.size() << " clauses\n";
    std::map<int, int> hist;
    for (const auto& c : clauses) ++hist[c.width()];
    for (auto [w, n] : hist) out << "  width " << w << ": " << n << "\n";
    return 0;
}

struct SubsetArgs {
    std::string set;
    std::int64_t target = 0;
    CLI::Option* target_opt = nullptr;
    int random_n = 0;
    int max_value = 20;
    std::uint64_t seed = 0;
    std::string output;
};

int cmd_gen_subsetsum(const SubsetArgs& a, std::ostream& out) {
    SubsetSumInstance inst;
    if (!a.set.empty()) {
        for (const auto& t : split_list(a.set)) inst.U.push_back(parse_number<std::int64_t>(t, "integer"));
        if (!a.target_opt->count()) throw UsageError("--set requires --target");
        inst.k = a.target;
    } else if (a.random_n > 0) {
        if (a.max_value < 1) throw UsageError("--max-value must be >= 1");
        std::mt19937_64 rng(a.seed);
        std::uniform_int_distribution<std::int64_t> val(1, a.max_value);
        std::int64_t total = 0;
        for (int i = 0; i < a.random_n; ++i) total += inst.U.emplace_back(val(rng));
        inst.k = a.target_opt->count() ? a.target : std::uniform_int_distribution<std::int64_t>(0, total)(rng);
    } else {
        throw UsageError("give --set and --target, or --random-n");
    }
    if (inst.U.empty()) throw UsageError("--set is empty");
    for (auto u : inst.U)
        if (u <= 0) throw UsageError("subset-sum integers must be positive");
    const auto [e, q] = gen_subsetsum_ensemble(inst);
    const std::string text = dump_model(e) + "\n";
    if (a.output.empty()) {
        out << text;
    } else {
        write_file(a.output, text);
        out << "wrote " << e.trees().size() << " stumps to " << a.output << " (target " << inst.k
            << "; query: --features f_prime --gap-raw 0)\n";
    }
    return 0;
}

struct DistanceArgs {
    std::string model;
    std::string data;
    std::string pair;
    std::string output;
};

int cmd_distance(const DistanceArgs& a, std::ostream& out) {
    const Ensemble e = load_model_file(a.model);
    const Dataset d = load_csv(a.data);
    validate_dataset(d, e.num_features());
    json doc;
    try {
        doc = json::parse(read_file(a.pair));
    } catch (const json::parse_error& ex) {
        throw Error(std::string("pair file is not valid JSON: ") + ex.what());
    }
    const json* pj = doc.contains("pair") ? &doc["pair"] : &doc;
    if (pj->is_null()) throw UsageError("report has no counterexample pair");
    CounterexamplePair p;
    std::vector<FeatureId> F;
    try {
        p.x1 = pj->at("x1").get<Input>();
        p.x2 = pj->at("x2").get<Input>();
        F = doc.at("features").get<std::vector<FeatureId>>();
    } catch (const json::exception& ex) {
        throw Error(std::string("malformed pair file: ") + ex.what());
    }
    require_finite(p.x1, e.num_features());
    require_finite(p.x2, e.num_features());
    for (FeatureId f : F)
        if (f < 0 || f >= e.num_features()) throw Error("pair file feature id out of range");
    const auto rep = region_distance(e, d, p, F, fit_scaler(d));
    const json j{{"distance", rep.distance},
                 {"nearest_row_index", rep.nearest_row_index},
                 {"contributions", rep.contributions}};
    if (!a.output.empty()) write_file(a.output, j.dump(2) + "\n");
    out << j.dump(2) << "\n";
    return 0;
}

struct CompareArgs {
    std::vector<std::string> files;
    double tie_eps = 1e-9;
    std::string output;
};

int cmd_compare(const CompareArgs& a, std::ostream& out) {
    std::vector<InstanceResult> all;
    for (const auto& f : a.files)
        for (auto& r : load_results(read_file(f))) all.push_back(std::move(r));
    const std::string text = dump_report(compare_modes(all, a.tie_eps));
    if (!a.output.empty()) write_file(a.output, text);
    out << text;
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Exact feature-sensitivity verifier for tree ensembles", "treesense"};
    app.require_subcommand(1);

    VerifyArgs verify;
    auto* v = app.add_subcommand("verify", "Decide sensitivity and report a counterexample pair");
    verify.attach(v);
    v->add_option("--level", verify.level, "base, +unaff, +aff or full");
    v->add_option("--timeout", verify.timeout, "Time limit in seconds");
    v->add_option("--node-limit", verify.node_limit, "Search node limit (0 = none)");
    v->add_flag("--json", verify.json_out, "Print the JSON report");
    v->add_option("--output", verify.output, "Write the JSON report to a file");
    v->add_option("--instance", verify.instance, "Instance id recorded in the report");

    MineArgs mine;
    auto* m = app.add_subcommand("mine-clauses", "Mine data-cavity clauses");
    m->add_option("--model", mine.model, "Model JSON")->required();
    m->add_option("--data", mine.data, "Numeric CSV dataset")->required();
    m->add_option("--output", mine.output, "Clause JSON to write")->required();
    m->add_option("--max-width", mine.max_width, "Maximum literals per clause");
    m->add_option("--max-clauses", mine.max_clauses, "Maximum clauses");
    m->add_option("--feature-budget", mine.feature_budget, "Features considered (0 = all)");
    m->add_option("--marginals-out", mine.marginals_out, "Also write the marginal table");

    ExportArgs exp;
    auto* x = app.add_subcommand("export-lp", "Write the MILP in LP format");
    exp.attach(x);
    x->add_option("--level", exp.level, "base, +unaff, +aff or full");
    x->add_option("--output", exp.output, "LP file (default stdout)");

    SubsetArgs ss;
    auto* g = app.add_subcommand("gen-subsetsum", "Generate a subset-sum reduction ensemble");
    g->add_option("--set", ss.set, "Comma list of positive integers");
    ss.target_opt = g->add_option("--target", ss.target, "Target sum k");
    g->add_option("--random-n", ss.random_n, "Draw this many random integers instead of --set");
    g->add_option("--max-value", ss.max_value, "Largest random integer");
    g->add_option("--seed", ss.seed, "Random seed");
    g->add_option("--output", ss.output, "Model JSON (default stdout)");

    DistanceArgs dist;
    auto* d = app.add_subcommand("distance", "Distance from a dataset to a counterexample region");
    d->add_option("--model", dist.model, "Model JSON")->required();
    d->add_option("--data", dist.data, "Numeric CSV dataset")->required();
    d->add_option("--pair", dist.pair, "Report written by verify --output")->required();
    d->add_option("--output", dist.output, "Write the distance report to a file");

    CompareArgs cmp;
    auto* c = app.add_subcommand("compare", "Win/draw/loss table across per-mode reports");
    c->add_option("reports", cmp.files, "Report files")->required();
    c->add_option("--tie-eps", cmp.tie_eps, "Draw tolerance");
    c->add_option("--output", cmp.output, "Write the comparison to a file");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& ex) {
        const int code = app.exit(ex, out, err);
        return code == 0 ? 0 : kUsage;
    }

    try {
        if (v->parsed()) return cmd_verify(verify, out);
        if (m->parsed()) return cmd_mine(mine, out);
        if (x->parsed()) return cmd_export_lp(exp, out);
        if (g->parsed()) return cmd_gen_subsetsum(ss, out);
        if (d->parsed()) return cmd_distance(dist, out);
        if (c->parsed()) return cmd_compare(cmp, out);
    } catch (const UsageError& ex) {
        err << "error: " << ex.what() << "\n";
        return kUsage;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kFailure;
    }
    return kUsage;
}

}  // namespace treesense::cli
