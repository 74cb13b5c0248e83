// Command-line front end.
//
// Exit codes: 0 ok, 1 input error, 2 numerical failure.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hcdb/hcdb.hpp"

namespace {

using namespace hcdb;

std::vector<MethodId> parse_methods(const std::vector<std::string>& names) {
    if (names.empty()) return {kAllMethods.begin(), kAllMethods.end()};
    std::vector<MethodId> out;
    for (const auto& n : names) {
        const auto id = parse_method(n);
        if (!id) throw InputError("unknown method '" + n + "'");
        out.push_back(*id);
    }
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << text;
}

struct Common {
    std::uint64_t seed = 20240601;
    double alpha = 0.05;
    std::string out;
    std::size_t draws = 10000;
    int chains = 4;
    int iterations = 3000;
    int warmup = 1000;
};

void add_common(CLI::App* app, Common& c, bool with_alpha = true) {
    app->add_option("--seed", c.seed, "Master seed")->capture_default_str();
    if (with_alpha) app->add_option("--alpha", c.alpha, "Simultaneous error level")->capture_default_str();
    app->add_option("--out", c.out, "Output path or prefix");
    app->add_option("--mcmc-chains", c.chains, "MAP MCMC chains")->capture_default_str();
    app->add_option("--mcmc-iterations", c.iterations, "MAP MCMC iterations per chain")->capture_default_str();
    app->add_option("--mcmc-warmup", c.warmup, "MAP MCMC warmup per chain")->capture_default_str();
}

MethodSettings settings_from(const Common& c, double w_rob, MethodSettings s = {}) {
    s.alpha = c.alpha;
    s.w_rob = w_rob;
    s.posterior_draws = c.draws;
    s.nnhm.chains = c.chains;
    s.nnhm.iterations = c.iterations;
    s.nnhm.warmup = c.warmup;
    return s;
}

int run(int argc, char** argv) {
    CLI::App app{"Historical control borrowing for many-to-one risk-ratio inference"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    // analyze
    Common ac;
    std::string a_file;
    std::vector<std::string> a_methods;
    double a_wrob = 0.2;
    auto* analyze = app.add_subcommand("analyze", "Simultaneous lower limits for every requested method");
    analyze->add_option("file", a_file, "Study file (section,id,events,size)")->required();
    analyze->add_option("--methods", a_methods, "Comma-separated method ids (default: all)")->delimiter(',');
    analyze->add_option("--w-rob", a_wrob, "Weight of the robust Beta(1,1) component")->capture_default_str();
    analyze->add_option("--draws", ac.draws, "Posterior draws per Bayesian method")->capture_default_str();
    add_common(analyze, ac);

    // plan
    Common pc;
    std::string p_file, p_prior, p_method = "MAP";
    int p_n0 = 50;
    std::vector<double> p_wrob{0.2};
    auto* plan = app.add_subcommand("plan", "Prior predictive and robust-weight tables for a planned control group");
    plan->add_option("file", p_file, "Study file; only historical rows are used");
    plan->add_option("--prior", p_prior, "Prior JSON (skips fitting)");
    plan->add_option("--prior-method", p_method, "MAP or EMP_BAYES")->capture_default_str();
    plan->add_option("--n0", p_n0, "Planned control size")->capture_default_str();
    plan->add_option("--w-rob", p_wrob, "Comma-separated robust weights")->delimiter(',')->capture_default_str();
    add_common(plan, pc, false);

    // simulate
    Common sc;
    std::string s_kind = "fwer", s_grid = "bold";
    int s_S = 2000, s_workers = 1;
    double s_wrob = 0.2;
    std::vector<std::string> s_methods;
    sc.draws = 4000;
    sc.iterations = 1500;
    sc.warmup = 500;
    auto* simulate = app.add_subcommand("simulate", "Monte-Carlo FWER or any-pair power over a scenario grid");
    simulate->add_option("--kind", s_kind, "fwer or app")->check(CLI::IsMember({"fwer", "app"}))->capture_default_str();
    simulate->add_option("--grid", s_grid, "bold | full | reduced, then ';axis=v1,v2' or ';axis+=v' edits")
        ->capture_default_str();
    simulate->add_option("-S,--replicates", s_S, "Replicates per cell")->capture_default_str();
    simulate->add_option("--methods", s_methods, "Comma-separated method ids (default: all)")->delimiter(',');
    simulate->add_option("--workers", s_workers, "Worker threads")->capture_default_str();
    simulate->add_option("--w-rob", s_wrob, "Weight of the robust Beta(1,1) component")->capture_default_str();
    simulate->add_option("--draws", sc.draws, "Posterior draws per Bayesian method")->capture_default_str();
    add_common(simulate, sc);

    // fit-prior
    Common fc;
    std::string f_file, f_method = "MAP";
    auto* fitp = app.add_subcommand("fit-prior", "Fit a MAP or empirical-Bayes prior from historical controls");
    fitp->add_option("file", f_file, "Study file; only historical rows are used")->required();
    fitp->add_option("--method", f_method, "MAP or EMP_BAYES")->capture_default_str();
    add_common(fitp, fc, false);

    // ess
    std::string e_prior;
    int e_events = -1, e_size = -1;
    double e_wrob = 0.0;
    auto* ess = app.add_subcommand("ess", "Effective sample size of a prior and, optionally, its posterior");
    ess->add_option("prior", e_prior, "Prior JSON")->required();
    ess->add_option("--w-rob", e_wrob, "Robustify the prior first")->capture_default_str();
    ess->add_option("--events", e_events, "Control events for a posterior update");
    ess->add_option("--size", e_size, "Control size for a posterior update");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (*analyze) {
        const StudyData d = parse_study_file(a_file);
        const AnalysisReport r = analyze_study(d, parse_methods(a_methods), settings_from(ac, a_wrob), ac.seed);
        const std::string doc = report_to_json(r).dump(2) + "\n";
        if (ac.out.empty()) {
            std::cout << doc;
        } else {
            write_text(ac.out + ".json", doc);
            std::ostringstream csv;
            write_limits_csv(csv, r);
            write_text(ac.out + ".limits.csv", csv.str());
        }
    } else if (*plan) {
        FittedPrior f;
        if (!p_prior.empty()) {
            f.method = "FILE";
            f.prior = mixture_from_json(read_json_file(p_prior));
        } else {
            if (p_file.empty()) throw InputError("plan needs a study file or --prior");
            const StudyData d = parse_study_file(p_file, false);
            f = fit_prior(d.historical, p_method, settings_from(pc, 0.0), pc.seed);
        }
        const PlanResult p = plan_study(f.prior, p_n0, p_wrob);
        std::ostringstream csv;
        write_plan_csv(csv, p);
        if (pc.out.empty()) {
            std::cout << csv.str();
        } else {
            write_text(pc.out + ".csv", csv.str());
            write_text(pc.out + ".json", plan_to_json(p, pc.seed, f.method).dump(2) + "\n");
        }
    } else if (*simulate) {
        const RateKind kind = s_kind == "fwer" ? RateKind::Fwer : RateKind::App;
        const auto grid = build_grid(kind, s_grid);
        HarnessConfig cfg;
        cfg.S = s_S;
        cfg.methods = parse_methods(s_methods);
        cfg.master_seed = sc.seed;
        cfg.workers = s_workers;
        cfg.settings = settings_from(sc, s_wrob, HarnessConfig::harness_default_settings());
        std::cerr << "simulating " << grid.size() << " cells x " << s_S << " replicates\n";
        const auto results = kind == RateKind::Fwer ? run_fwer_grid(grid, cfg) : run_app_grid(grid, cfg);
        std::ostringstream csv;
        write_results_csv(csv, results);
        if (sc.out.empty()) std::cout << csv.str(); else write_text(sc.out, csv.str());
    } else if (*fitp) {
        const StudyData d = parse_study_file(f_file, false);
        const FittedPrior f = fit_prior(d.historical, f_method, settings_from(fc, 0.0), fc.seed);
        const std::string doc = fitted_prior_to_json(f, fc.seed).dump(2) + "\n";
        if (fc.out.empty()) std::cout << doc; else write_text(fc.out, doc);
    } else if (*ess) {
        BetaMixture prior = mixture_from_json(read_json_file(e_prior));
        if (e_wrob > 0.0) prior = robustify(prior, e_wrob);
        json j;
        j["prior"] = prior_table_json(prior);
        if ((e_events >= 0) != (e_size >= 0)) throw InputError("--events and --size go together");
        if (e_events >= 0) {
            const ControlGroup g{e_events, e_size};
            try {
                g.validate();
            } catch (const DomainError& e) {
                throw InputError(e.what());
            }
            const BetaMixture post = update(prior, g);
            j["posterior"] = prior_table_json(post);
            j["posterior"]["median"] = mixture_quantile(post, 0.5);
        }
        std::cout << j.dump(2) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const hcdb::InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 1;
    } catch (const hcdb::InvalidScenario& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 1;
    } catch (const hcdb::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const hcdb::DomainError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
