#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "hcdb/hcdb.hpp"

using namespace hcdb;
namespace fs = std::filesystem;

namespace {

const std::string kDataDir = HCDB_DATA_DIR;
const std::string kCli = HCDB_CLI;

StudyData parse_text(const std::string& text, bool require_current = true) {
    std::istringstream is(text);
    return parse_study_stream(is, "mem", require_current);
}

std::string error_of(const std::string& text) {
    try {
        parse_text(text);
    } catch (const InputError& e) {
        return e.what();
    }
    return "";
}

class TempDir {
public:
    TempDir() {
        path_ = fs::temp_directory_path() / ("hcdb_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    fs::path path_;
    static inline int counter_ = 0;
};

void write(const std::string& path, const std::string& text) {
    std::ofstream(path) << text;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cli(const std::string& args) {
    const int rc = std::system((kCli + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

MethodSettings fast_settings() {
    MethodSettings s;
    s.posterior_draws = 2000;
    s.nnhm.iterations = 1500;
    s.nnhm.warmup = 500;
    return s;
}

// MoM ICC below zero: near-identical groups.
const char* kHomogeneousStudy =
    "section,id,events,size\n"
    "historical,A,5,50\nhistorical,B,5,50\nhistorical,C,6,50\nhistorical,D,5,50\n"
    "control,c,5,50\ntreatment,t1,6,50\ntreatment,t2,12,50\n";

}  // namespace

TEST(ParseStudy, ExampleFile) {
    const auto d = parse_study_file(kDataDir + "/example_study.csv");
    EXPECT_EQ(d.historical.count(), 16u);
    EXPECT_EQ(d.trial.arms(), 4u);
    EXPECT_EQ(d.control_id, "dose0");
    EXPECT_EQ(d.treatment_ids.front(), "dose1");
    EXPECT_EQ(d.trial.treatments.back().events, 12);
    for (const auto& g : d.historical.groups) {
        EXPECT_GE(g.size, 47);
        EXPECT_LE(g.size, 89);
    }
}

TEST(ParseStudy, Errors) {
    const std::string h = "section,id,events,size\nhistorical,A,1,10\n";
    EXPECT_NE(error_of(h + "control,c,1,10\n").find("at least one treatment arm"), std::string::npos);
    EXPECT_NE(error_of(h + "treatment,t,1,10\n").find("missing control"), std::string::npos);
    const std::string e = error_of(h + "historical,B,11,10\ncontrol,c,1,10\ntreatment,t,1,10\n");
    EXPECT_NE(e.find("events > size in row 'B'"), std::string::npos) << e;
    EXPECT_NE(e.find("mem:3"), std::string::npos) << e;
    EXPECT_NE(error_of(h + "historical,A,1,10\ncontrol,c,1,10\ntreatment,t,1,10\n").find("duplicate"),
              std::string::npos);
    EXPECT_NE(error_of(h + "control,c,x,10\ntreatment,t,1,10\n").find("events must be"), std::string::npos);
    EXPECT_NE(error_of(h + "control,c,1\n").find("expected 4 fields"), std::string::npos);
    EXPECT_NE(error_of("a,b,c,d\n").find("expected header"), std::string::npos);
    EXPECT_NE(error_of(h + "bogus,c,1,10\n").find("unknown section"), std::string::npos);
    EXPECT_NO_THROW(parse_text(h, false));
}

TEST(ParseStudy, CsvAndJsonRoundTrip) {
    const auto d = parse_study_file(kDataDir + "/example_study.csv");
    std::ostringstream os;
    write_study_csv(os, d);
    EXPECT_EQ(parse_text(os.str()), d);
    EXPECT_EQ(study_from_json(study_to_json(d)), d);
    EXPECT_EQ(study_from_json(json::parse(study_to_json(d).dump())), d);
    const auto hist_only = parse_text("section,id,events,size\nhistorical,A,1,10\nhistorical,B,2,12\n", false);
    EXPECT_EQ(study_from_json(study_to_json(hist_only)), hist_only);
}

TEST(MixtureJson, RoundTripAndValidation) {
    const BetaMixture m({0.6494, 0.1506, 0.2}, {{23.1972, 411.6442}, {3.9494, 61.46489}, {1, 1}});
    EXPECT_EQ(mixture_from_json(mixture_to_json(m)), m);
    const auto file = mixture_from_json(read_json_file(kDataDir + "/map_prior_nonrobust.json"));
    EXPECT_EQ(file.size(), 2u);
    EXPECT_THROW(mixture_from_json(json::parse(R"([{"weight":0.5,"a":1,"b":1}])")), InputError);
    EXPECT_THROW(mixture_from_json(json::parse(R"([{"weight":1,"a":-1,"b":1}])")), InputError);
    EXPECT_THROW(mixture_from_json(json::parse(R"({"nope":1})")), InputError);
}

TEST(AnnexConversion, MapsRolesAndDoses) {
    std::istringstream is(
        "study,dose,animals,affected,role,notes\n"
        "S1,0,50,3,HCD,x\nS2,0,60,4,HCD,y\n"
        "T,10,50,6,current,\nT,0,50,2,current,\nT,5,50,4,current,\n");
    const auto d = convert_annex_stream(is, "annex");
    EXPECT_EQ(d.historical.count(), 2u);
    EXPECT_EQ(d.trial.control.events, 2);
    ASSERT_EQ(d.trial.arms(), 2u);
    EXPECT_EQ(d.trial.treatments[0].events, 4);
    EXPECT_EQ(d.trial.treatments[1].events, 6);
}

TEST(Analyze, Beta11MatchesDirectInference) {
    const auto d = parse_study_file(kDataDir + "/example_study.csv");
    const MethodSettings s = fast_settings();
    const std::uint64_t seed = 99;
    const auto r = analyze_study(d, {MethodId::BETA11}, s, seed);
    ASSERT_EQ(r.outcomes.size(), 1u);
    const RngStream stream = analysis_method_stream(seed).child(detail::method_index(MethodId::BETA11));
    const auto joint = sample_joint_posterior(d.trial, BetaMixture::uniform(), s.posterior_draws, stream);
    const auto direct = besag_lower_limits(ratio_draws(joint), s.alpha);
    EXPECT_EQ(r.outcomes[0].limits.lower, direct.lower);
}

TEST(Analyze, ReportContentsAndClampNote) {
    const auto d = parse_text(kHomogeneousStudy);
    MethodSettings s = fast_settings();
    const auto r = analyze_study(d, {MethodId::GLM, MethodId::EMP_BAYES_ROBUST}, s, 7);
    EXPECT_LT(r.screen.mom.rho_hat, 0.0);
    const json j = report_to_json(r);
    EXPECT_NE(j["screen"]["note"].get<std::string>().find("set to 1e-05"), std::string::npos);
    EXPECT_EQ(j["software"]["version"], std::string(kVersion));
    EXPECT_EQ(study_from_json(j["dataset"]), d);
    ASSERT_EQ(j["methods"].size(), 2u);
    for (const auto& m : j["methods"]) {
        EXPECT_EQ(m["seed"], 7u);
        EXPECT_EQ(m["version"], std::string(kVersion));
        EXPECT_EQ(m["arms"].size(), 2u);
    }
    // robust prior table: informative component(s) then the Beta(1, 1) row
    const auto& prior = j["methods"][1]["prior"]["components"];
    ASSERT_EQ(prior.size(), 2u);
    EXPECT_NEAR(prior[1]["weight"].get<double>(), 0.2, 1e-15);
    EXPECT_EQ(prior[1]["a"].get<double>(), 1.0);
    EXPECT_EQ(prior[1]["b"].get<double>(), 1.0);

    std::ostringstream csv;
    write_limits_csv(csv, r);
    std::string line;
    std::istringstream is(csv.str());
    std::getline(is, line);
    EXPECT_EQ(line, "method,arm,estimate,lower_limit,rejected,ok,seed,version");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    EXPECT_EQ(rows, 4);
}

TEST(Analyze, MethodFailuresAreIsolated) {
    // all-zero history: MoM prior is degenerate but usable, MAP's tau scale throws
    const auto d = parse_text(
        "section,id,events,size\nhistorical,A,0,50\nhistorical,B,0,50\n"
        "control,c,0,50\ntreatment,t,3,50\n");
    const auto r = analyze_study(d, {MethodId::MAP, MethodId::BETA11}, fast_settings(), 1);
    EXPECT_FALSE(r.outcomes[0].ok);
    EXPECT_FALSE(r.outcomes[0].diagnostic.empty());
    EXPECT_TRUE(r.outcomes[1].ok);
}

TEST(Plan, CurvesAndDeterminism) {
    const auto prior = mixture_from_json(read_json_file(kDataDir + "/map_prior_nonrobust.json"));
    const auto p = plan_study(prior, 50, {0.2, 0.5});
    ASSERT_EQ(p.curves.size(), 2u);
    for (int y = 0; y <= 50; ++y) EXPECT_GE(p.curves[1][y].weight, p.curves[0][y].weight);
    EXPECT_LE(p.predictive.central_lower, 2);
    EXPECT_GE(p.predictive.central_upper, 5);
    std::ostringstream a, b;
    write_plan_csv(a, p);
    write_plan_csv(b, plan_study(prior, 50, {0.2, 0.5}));
    EXPECT_EQ(a.str(), b.str());
    EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "y,pmf,in_central95,w0.2,w0.5");
    EXPECT_THROW(plan_study(prior, 50, {1.5}), InputError);
}

TEST(FitPrior, EmpiricalBayesAndMap) {
    const auto d = parse_study_file(kDataDir + "/example_study.csv");
    const auto eb = fit_prior(d.historical, "EMP_BAYES", fast_settings(), 1);
    EXPECT_EQ(eb.prior.size(), 1u);
    MethodSettings s = fast_settings();
    const auto map = fit_prior(d.historical, "MAP", s, 1);
    EXPECT_TRUE(map.map->converged);
    EXPECT_NEAR(map.prior.mean(), map.map->draws_mean, 0.005);
    // homogeneous rare-tumor history: two informative components close to
    // the pooled rate, as in published MAP priors for such data
    EXPECT_GE(map.prior.size(), 2u);
    int major = 0;
    for (std::size_t k = 0; k < map.prior.size(); ++k) {
        if (map.prior.weight(k) < 0.1) continue;
        ++major;
        EXPECT_GT(map.prior.component(k).mean(), 0.045);
        EXPECT_LT(map.prior.component(k).mean(), 0.065);
    }
    EXPECT_GE(major, 2);
    const json j = fitted_prior_to_json(map, 1);
    EXPECT_EQ(j["meta"]["method"], "MAP");
    EXPECT_EQ(mixture_from_json(j), map.prior);
    EXPECT_THROW(fit_prior(d.historical, "OTHER", s, 1), InputError);
}

TEST(Cli, ExitCodes) {
    TempDir tmp;
    EXPECT_EQ(cli("--help"), 0);
    EXPECT_EQ(cli(""), 1);
    EXPECT_EQ(cli("analyze " + tmp.file("missing.csv")), 1);
    write(tmp.file("bad.csv"), "section,id,events,size\nhistorical,A,12,10\ncontrol,c,1,10\ntreatment,t,1,10\n");
    EXPECT_EQ(cli("analyze " + tmp.file("bad.csv")), 1);
    EXPECT_EQ(cli("simulate --grid 'bold;bogus=1' -S 1"), 1);
    EXPECT_EQ(cli("analyze --methods NOPE " + kDataDir + "/example_study.csv"), 1);
    // MAP fit on all-zero history fails numerically
    write(tmp.file("zero.csv"), "section,id,events,size\nhistorical,A,0,50\nhistorical,B,0,50\n");
    EXPECT_EQ(cli("fit-prior " + tmp.file("zero.csv")), 2);
    EXPECT_EQ(cli("ess " + kDataDir + "/map_prior_nonrobust.json --w-rob 0.2 --events 1 --size 10"), 0);
    EXPECT_EQ(cli("ess " + kDataDir + "/map_prior_nonrobust.json --events 11 --size 10"), 1);
}

TEST(Cli, AnalyzeWritesReportAndTable) {
    TempDir tmp;
    const std::string out = tmp.file("rep");
    ASSERT_EQ(cli("analyze --methods GLM,BETA11,EMP_BAYES --draws 2000 --seed 5 --out " + out + " " + kDataDir +
                  "/example_study.csv"),
              0);
    const json j = json::parse(slurp(out + ".json"));
    EXPECT_EQ(j["methods"].size(), 3u);
    EXPECT_EQ(j["seed"], 5u);
    EXPECT_NE(slurp(out + ".limits.csv").find("BETA11,dose4,"), std::string::npos);
}

TEST(Cli, SimulateSmokeRunIsWorkerInvariant) {
    TempDir tmp;
    const auto t0 = std::chrono::steady_clock::now();
    ASSERT_EQ(cli("simulate --kind fwer --grid reduced -S 10 --workers 1 --out " + tmp.file("a.csv")), 0);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_LT(secs, 60.0);
    ASSERT_EQ(cli("simulate --kind fwer --grid reduced -S 10 --workers 8 --out " + tmp.file("b.csv")), 0);
    const std::string a = slurp(tmp.file("a.csv"));
    EXPECT_EQ(a, slurp(tmp.file("b.csv")));
    // 4 cells x 11 methods + header
    EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 45);
}

TEST(Cli, PlanAndEss) {
    TempDir tmp;
    ASSERT_EQ(cli("plan --prior " + kDataDir + "/map_prior_nonrobust.json --w-rob 0.2,0.5 --out " + tmp.file("p")), 0);
    const json j = json::parse(slurp(tmp.file("p") + ".json"));
    EXPECT_EQ(j["curves"].size(), 2u);
    EXPECT_EQ(j["n0"], 50);
    ASSERT_EQ(cli("plan --prior-method EMP_BAYES --out " + tmp.file("q") + " " + kDataDir + "/example_study.csv"), 0);
    EXPECT_NE(slurp(tmp.file("q") + ".csv").find("y,pmf,in_central95,w0.2"), std::string::npos);
}
