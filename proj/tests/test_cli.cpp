#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cli.hpp"
#include "encoding_support.hpp"

using namespace testing_support;
namespace fs = std::filesystem;
using treesense::cli::run_cli;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("treesense_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name, const std::string& content = {}) const {
        const auto p = (path / name).string();
        if (!content.empty()) std::ofstream(p) << content;
        return p;
    }
};

std::string slurp(const std::string& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), {}};
}

const char* kGridModel = R"({"num_features": 2, "num_classes": 2, "feature_names": ["a", "b"], "trees": [
  {"root": {"feature": 0, "threshold": 2, "yes": {"leaf": 1}, "no":
    {"feature": 0, "threshold": 4, "yes": {"leaf": -1}, "no": {"leaf": 1}}}},
  {"root": {"feature": 1, "threshold": 2, "yes": {"leaf": 1}, "no":
    {"feature": 1, "threshold": 4, "yes": {"leaf": -1}, "no": {"leaf": 1}}}}]})";

const char* kCavityCsv = "a,b\n1,1\n3,1\n5,1\n1,3\n5,3\n1,5\n3,5\n5,5\n0,0\n4.5,2.5\n2.5,4.5\n";

}  // namespace

TEST_CASE("verify exit codes") {
    TempDir t;
    const std::string ss = t.file("ss.json");
    REQUIRE(run({"gen-subsetsum", "--set", "1,2", "--target", "3", "--output", ss}).code == 0);
    auto r = run({"verify", "--model", ss, "--features", "f_prime", "--gap-raw", "0"});
    CHECK(r.code == 0);
    CHECK(r.out.find("verdict: sensitive") != std::string::npos);

    const std::string no = t.file("no.json");
    REQUIRE(run({"gen-subsetsum", "--set", "2,4", "--target", "3", "--output", no}).code == 0);
    CHECK(run({"verify", "--model", no, "--features", "f_prime", "--gap-raw", "0"}).code == 1);

    r = run({"verify", "--model", ss, "--features", "f_prime", "--gap-prob", "0.6"});
    CHECK(r.code == 3);
    CHECK_FALSE(r.err.empty());
    CHECK(run({"verify", "--model", ss, "--features", "f_prime", "--gap-prob", "0", "--classes", "0,2"}).code == 3);
    CHECK(run({"verify", "--model", ss, "--features", "nope", "--gap-prob", "0"}).code == 3);
    CHECK(run({"verify", "--model", ss, "--features", "f_prime", "--gap-prob", "0.1", "--gap-raw", "1"}).code == 3);
    CHECK(run({"verify", "--model", t.file("missing.json"), "--features", "0", "--gap-prob", "0"}).code == 4);
    CHECK(run({"verify", "--features", "0"}).code == 3);
    CHECK(run({"frobnicate"}).code == 3);
    CHECK(run({"--help"}).code == 0);
}

TEST_CASE("verify timeout on an exhausted node budget") {
    TempDir t;
    const std::string ss = t.file("ss.json");
    REQUIRE(run({"gen-subsetsum", "--set", "2,4,6,8,10,12,14,16,18,20", "--target", "55", "--output", ss}).code == 0);
    CHECK(run({"verify", "--model", ss, "--features", "f_prime", "--gap-raw", "0", "--level", "base", "--node-limit",
               "5"})
              .code == 2);
}

TEST_CASE("verify json report and features from a file") {
    TempDir t;
    const std::string model = t.file("m.json", kTwoTreeModel);
    const std::string sel = t.file("sel.txt", "4\n");
    const std::string report = t.file("r.json");
    const auto r = run({"verify", "--model", model, "--features", "@" + sel, "--gap-prob", "0", "--json", "--output",
                        report, "--instance", "fixture"});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j == nlohmann::json::parse(slurp(report)));
    CHECK(j["verdict"] == "sensitive");
    CHECK(j["instance"] == "fixture");
    CHECK(j["features"] == nlohmann::json::array({4}));
    const auto x1 = j["pair"]["x1"].get<std::vector<double>>();
    const auto x2 = j["pair"]["x2"].get<std::vector<double>>();
    REQUIRE(x1.size() == 10);
    for (int f = 0; f < 10; ++f)
        if (f != 4) CHECK(x1[f] == x2[f]);
    const Ensemble e = load_model(kTwoTreeModel);
    CHECK(ref_raw(e, x1)[1] >= 0.0);
    CHECK(ref_raw(e, x2)[1] <= 0.0);
}

TEST_CASE("verify with data modes") {
    TempDir t;
    const std::string model = t.file("m.json", kGridModel);
    const std::string csv = t.file("d.csv", kCavityCsv);
    for (const char* mode : {"none", "prob", "clause", "probclause"}) {
        const auto r = run({"verify", "--model", model, "--features", "a", "--gap-raw", "0", "--mode", mode, "--data",
                            csv, "--json"});
        REQUIRE(r.code == 0);
        const auto j = nlohmann::json::parse(r.out);
        CHECK(j["mode"] == mode);
        CHECK(j["distance"].is_number());
        CHECK(j["utility_log"].is_number());
    }
    CHECK(run({"verify", "--model", model, "--features", "a", "--gap-raw", "0", "--mode", "prob"}).code == 3);
}

TEST_CASE("mine-clauses") {
    TempDir t;
    const std::string model = t.file("m.json", kGridModel);
    const std::string clauses = t.file("c.json");
    const std::string marg = t.file("marg.json");
    auto r = run({"mine-clauses", "--model", model, "--data", t.file("d.csv", kCavityCsv), "--output", clauses,
                  "--marginals-out", marg});
    REQUIRE(r.code == 0);
    CHECK(r.out.rfind("1 clauses", 0) == 0);
    const Ensemble e = load_model(kGridModel);
    const GuardIndex gi(e);
    const auto loaded = load_clauses(slurp(clauses), gi);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].width() == 2);
    CHECK(load_marginals(slurp(marg), gi).probs[0].size() == 3);

    r = run({"mine-clauses", "--model", model, "--data", t.file("dense.csv", "a,b\n1,1\n3,3\n5,5\n1,3\n3,1\n1,5\n5,1\n3,5\n5,3\n"),
             "--output", clauses});
    REQUIRE(r.code == 0);
    CHECK(r.out.rfind("0 clauses", 0) == 0);
    CHECK(load_clauses(slurp(clauses), gi).empty());

    // Diagonal rows on a 4x4 grid leave six maximal empty boxes.
    const std::string grid4 = t.file("g4.json", R"({"num_features": 2, "num_classes": 2, "trees": [
      {"root": {"feature": 0, "threshold": 2, "yes": {"leaf": 1}, "no": {"feature": 0, "threshold": 4,
        "yes": {"leaf": -1}, "no": {"feature": 0, "threshold": 6, "yes": {"leaf": 1}, "no": {"leaf": -1}}}}},
      {"root": {"feature": 1, "threshold": 2, "yes": {"leaf": 1}, "no": {"feature": 1, "threshold": 4,
        "yes": {"leaf": -1}, "no": {"feature": 1, "threshold": 6, "yes": {"leaf": 1}, "no": {"leaf": -1}}}}}]})");
    const std::string diag = t.file("diag.csv", "a,b\n1,1\n3,3\n5,5\n7,7\n");
    r = run({"mine-clauses", "--model", grid4, "--data", diag, "--output", clauses});
    REQUIRE(r.code == 0);
    CHECK(r.out.rfind("6 clauses", 0) == 0);
    r = run({"mine-clauses", "--model", grid4, "--data", diag, "--output", clauses, "--max-clauses", "5"});
    REQUIRE(r.code == 0);
    CHECK(r.out.rfind("5 clauses", 0) == 0);
    CHECK(load_clauses(slurp(clauses), GuardIndex(load_model(slurp(grid4)))).size() == 5);
    CHECK(run({"mine-clauses", "--model", model, "--data", t.file("bad.csv", "a,b\n1\n"), "--output", clauses}).code == 4);
}

TEST_CASE("export-lp") {
    TempDir t;
    const std::string model = t.file("m.json", kTwoTreeModel);
    const auto full = run({"export-lp", "--model", model, "--features", "4", "--gap-prob", "0"});
    REQUIRE(full.code == 0);
    const auto census = lp_row_census(full.out);
    CHECK(census.at("predord") == 2);
    CHECK(census.at("leafsum") == 4);
    CHECK(census.at("rootlink") == 8);
    CHECK(census.at("nodelink") == 16);
    CHECK(census.at("same") == 3);
    CHECK(census.at("gap") == 2);
    CHECK(census.at("unaff") == 6);
    CHECK(census.at("aff") == 1);
    CHECK(run({"export-lp", "--model", model, "--features", "4", "--gap-prob", "0"}).out == full.out);

    const std::string lp = t.file("base.lp");
    REQUIRE(run({"export-lp", "--model", model, "--features", "4", "--gap-prob", "0", "--level", "base", "--output", lp})
                .code == 0);
    const auto base = lp_row_census(slurp(lp));
    CHECK(base.count("unaff") == 0);
    CHECK(base.count("aff") == 0);
    CHECK(run({"export-lp", "--model", model, "--features", "4", "--gap-prob", "0", "--level", "turbo"}).code == 3);
}

TEST_CASE("gen-subsetsum") {
    const auto r = run({"gen-subsetsum", "--set", "1,2", "--target", "3"});
    REQUIRE(r.code == 0);
    const Ensemble e = load_model(r.out);
    CHECK(e.trees().size() == 3);
    CHECK(ref_raw(e, {1, 1, 1})[1] == doctest::Approx(0.5));

    const auto a = run({"gen-subsetsum", "--random-n", "6", "--seed", "7", "--target", "10"});
    const auto b = run({"gen-subsetsum", "--random-n", "6", "--seed", "7", "--target", "10"});
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    CHECK(load_model(a.out).trees().size() == 7);
    CHECK(run({"gen-subsetsum", "--set", "1,-2", "--target", "3"}).code == 3);
    CHECK(run({"gen-subsetsum", "--set", "1,2"}).code == 3);
}

TEST_CASE("distance and compare") {
    TempDir t;
    const std::string model = t.file("m.json", kGridModel);
    const std::string csv = t.file("d.csv", kCavityCsv);
    std::vector<std::string> reports;
    for (const char* mode : {"none", "prob", "clause", "probclause"})
        for (const char* inst : {"i1", "i2"}) {
            const std::string rep = t.file(std::string(mode) + inst + ".json");
            const std::string feature = inst == std::string("i1") ? "a" : "b";
            REQUIRE(run({"verify", "--model", model, "--features", feature, "--gap-raw", "0", "--mode", mode, "--data", csv,
                         "--output", rep, "--instance", inst})
                        .code == 0);
            reports.push_back(rep);
        }

    const auto d = run({"distance", "--model", model, "--data", csv, "--pair", reports[0]});
    REQUIRE(d.code == 0);
    const auto dj = nlohmann::json::parse(d.out);
    CHECK(dj["distance"].is_number());
    CHECK(dj["distance"].get<double>() >= 0.0);
    CHECK(dj["nearest_row_index"].get<int>() >= 0);
    CHECK(dj["distance"] == nlohmann::json::parse(slurp(reports[0]))["distance"]);

    std::vector<std::string> args{"compare"};
    args.insert(args.end(), reports.begin(), reports.end());
    const auto c = run(args);
    REQUIRE(c.code == 0);
    const auto cj = nlohmann::json::parse(c.out);
    CHECK(cj["modes"].size() == 4);
    REQUIRE(cj["pairwise"].size() == 6);
    for (const auto& p : cj["pairwise"]) {
        CHECK(p["instances"] == 2);
        CHECK(p["win_pct"].get<double>() + p["draw_pct"].get<double>() + p["loss_pct"].get<double>() ==
              doctest::Approx(100.0));
    }
    CHECK(run({"compare", reports[0], reports[3]}).code == 4);
}
