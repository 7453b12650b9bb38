#include <CLI11.hpp>

#include "lmsq/cli.hpp"

namespace {

void add_solver_flags(CLI::App* c, lmsq::SolverConfig& cfg) {
    c->add_option("--b", cfg.b, "coupling bound parameter, in (0,1)");
    c->add_option("--c", cfg.c, "Armijo constant, in (0,1)");
    c->add_option("--eta", cfg.eta, "reduction-ratio threshold, in [0,1)");
    c->add_option("--ell0", cfg.ell0, "initial damping scale");
    c->add_option("--ell-min", cfg.ell_min, "damping scale floor");
    c->add_option("--max-iters", cfg.max_iters, "iteration cap");
    c->add_option("--max-backtracks", cfg.max_backtracks, "line search halving cap");
    c->add_flag("--beta-zero", cfg.beta_zero, "force beta = 0 (ablation)");
    c->add_flag("--diagnostics", cfg.diagnostics,
                "compute the linear-residual ratio rho each iteration");
    c->add_flag("--mu-bound", cfg.mu_norm_bound,
                "use the conservative norm-based damping bound");
    c->add_option("--threads", cfg.threads, "worker threads for parallel kernels")
        ->check(CLI::PositiveNumber);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparse network adjustment via splitted Levenberg-Marquardt"};
    app.require_subcommand(1);

    lmsq::GenerateArgs gen;
    CLI::App* cg = app.add_subcommand("generate", "write a synthetic problem file");
    cg->add_option("--n", gen.n, "number of points (>= 16)")->required();
    cg->add_option("--seed", gen.seed, "generator seed");
    cg->add_option("--out", gen.out, "output problem file")->required();

    lmsq::SolveArgs sol;
    CLI::App* cs = app.add_subcommand("solve", "solve a problem file");
    cs->add_option("--problem", sol.problem, "problem file")->required();
    cs->add_option("--k", sol.k, "number of subsets");
    cs->add_option("--seed", sol.seed, "partitioner seed");
    cs->add_option("--log", sol.log, "iteration CSV output path");
    cs->add_flag("--quiet", sol.quiet, "suppress the summary");
    add_solver_flags(cs, sol.cfg);

    lmsq::BenchArgs ben;
    CLI::App* cb = app.add_subcommand("bench", "timing sweep over sizes and K");
    cb->add_option("--sizes", ben.sizes, "point counts")->required()->delimiter(',');
    cb->add_option("--ks", ben.ks, "subset counts")->required()->delimiter(',');
    cb->add_option("--seeds", ben.seeds, "seeds")->required()->delimiter(',');
    cb->add_option("--out", ben.out_csv, "bench CSV output path")->required();
    add_solver_flags(cb, ben.cfg);

    lmsq::PartitionStatsArgs ps;
    CLI::App* cp = app.add_subcommand("partition-stats", "partition quality report");
    cp->add_option("--problem", ps.problem, "problem file")->required();
    cp->add_option("--k", ps.k, "number of subsets")->required();
    cp->add_option("--seed", ps.seed, "partitioner seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : lmsq::kExitUsage;
    }

    if (cg->parsed()) return lmsq::cmd_generate(gen);
    if (cs->parsed()) return lmsq::cmd_solve(sol);
    if (cb->parsed()) return lmsq::cmd_bench(ben);
    if (cp->parsed()) return lmsq::cmd_partition_stats(ps);
    return lmsq::kExitUsage;
}
