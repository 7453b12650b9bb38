#include "lmsq/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "lmsq/csvio.hpp"

namespace lmsq {

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - t0)
        .count();
}

} // namespace

std::string iteration_csv(const std::vector<IterationRecord>& records) {
    std::string out = kIterationCsvHeader;
    out += "\n";
    for (const IterationRecord& r : records) {
        out += std::to_string(r.iter);
        out += ",";
        out += fmt_double(r.f);
        out += ",";
        out += fmt_double(r.grad_norm);
        out += ",";
        out += fmt_double(r.mu);
        out += ",";
        out += fmt_double(r.beta);
        out += ",";
        out += fmt_double(r.gamma);
        out += ",";
        out += fmt_double(r.step);
        out += ",";
        out += fmt_double(r.ell);
        out += ",";
        out += fmt_double(r.rho);
        out += ",";
        out += std::to_string(r.backtracks);
        out += ",";
        out += fmt_double(r.wall_ms);
        out += "\n";
    }
    return out;
}

int cmd_generate(const GenerateArgs& a) {
    if (a.n < 16) {
        std::fprintf(stderr, "generate: --n must be at least 16\n");
        return kExitUsage;
    }
    if (a.out.empty()) {
        std::fprintf(stderr, "generate: --out is required\n");
        return kExitUsage;
    }
    try {
        Problem p = generate_problem(a.n, a.seed);
        write_problem(p, a.out);
        std::printf("generated n=%d m=%d seed=%llu -> %s\n", p.n_points, p.n_obs(),
                    static_cast<unsigned long long>(p.seed), a.out.c_str());
    } catch (const Error& e) {
        std::fprintf(stderr, "generate: %s\n", e.what());
        return kExitIoOrNumerical;
    }
    return kExitOk;
}

int cmd_solve(const SolveArgs& a) {
    Problem prob;
    try {
        prob = read_problem(a.problem);
    } catch (const Error& e) {
        std::fprintf(stderr, "solve: %s\n", e.what());
        return kExitIoOrNumerical;
    }
    if (a.k < 1 || a.k > prob.n_points) {
        std::fprintf(stderr, "solve: --k out of range for this problem\n");
        return kExitUsage;
    }

    try {
        auto tp = std::chrono::steady_clock::now();
        Partition part = partition_problem(prob, a.k, a.seed);
        double partition_ms = ms_since(tp);

        auto ts = std::chrono::steady_clock::now();
        SolveReport rep = solve(prob, part, a.cfg);
        double solve_ms = ms_since(ts);

        if (!a.log.empty()) {
            std::ofstream f(a.log, std::ios::binary);
            if (!f) {
                std::fprintf(stderr, "solve: cannot open %s\n", a.log.c_str());
                return kExitIoOrNumerical;
            }
            f << iteration_csv(rep.records);
            if (!f) {
                std::fprintf(stderr, "solve: write failed for %s\n", a.log.c_str());
                return kExitIoOrNumerical;
            }
        }
        if (!a.quiet) {
            std::printf("status %s\n", status_name(rep.status));
            std::printf("iterations %d\n", rep.iterations);
            std::printf("final_F %s\n", fmt_double(rep.final_f).c_str());
            std::printf("fractions %s %s %s\n", fmt_double(rep.fractions[0]).c_str(),
                        fmt_double(rep.fractions[1]).c_str(),
                        fmt_double(rep.fractions[2]).c_str());
            std::printf("cut_fraction %s\n", fmt_double(part.cut_fraction).c_str());
            std::printf("partition_ms %s\n", fmt_double(partition_ms).c_str());
            std::printf("solve_ms %s\n", fmt_double(solve_ms).c_str());
            if (!rep.message.empty()) std::printf("detail %s\n", rep.message.c_str());
        }
        switch (rep.status) {
        case SolveStatus::Converged: return kExitOk;
        case SolveStatus::MaxIters:
        case SolveStatus::LineSearchFailure: return kExitNotConverged;
        case SolveStatus::NumericalError: return kExitIoOrNumerical;
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "solve: %s\n", e.what());
        return kExitIoOrNumerical;
    }
    return kExitIoOrNumerical;
}

int cmd_bench(const BenchArgs& a) {
    if (a.sizes.empty() || a.ks.empty() || a.seeds.empty()) {
        std::fprintf(stderr, "bench: need --sizes, --ks and --seeds\n");
        return kExitUsage;
    }
    for (int n : a.sizes)
        if (n < 16) {
            std::fprintf(stderr, "bench: sizes must be at least 16\n");
            return kExitUsage;
        }
    for (int k : a.ks)
        if (k < 1) {
            std::fprintf(stderr, "bench: ks must be positive\n");
            return kExitUsage;
        }
    if (a.out_csv.empty()) {
        std::fprintf(stderr, "bench: --out is required\n");
        return kExitUsage;
    }

    std::ofstream f(a.out_csv, std::ios::binary);
    if (!f) {
        std::fprintf(stderr, "bench: cannot open %s\n", a.out_csv.c_str());
        return kExitIoOrNumerical;
    }
    f << kBenchCsvHeader << "\n";

    // best converged time per size, for the summary
    std::map<int, std::pair<int, double>> best;

    for (int n : a.sizes) {
        for (std::uint64_t seed : a.seeds) {
            Problem prob;
            bool gen_ok = true;
            try {
                prob = generate_problem(n, seed);
            } catch (const Error& e) {
                std::fprintf(stderr, "bench: generate n=%d seed=%llu: %s\n", n,
                             static_cast<unsigned long long>(seed), e.what());
                gen_ok = false;
            }
            for (int k : a.ks) {
                std::string status = "Error";
                int iters = 0;
                double time_ms = 0.0, final_f = std::nan(""), cut = std::nan("");
                double partition_ms = 0.0;
                if (gen_ok) {
                    try {
                        auto tp = std::chrono::steady_clock::now();
                        Partition part = partition_problem(prob, k, seed);
                        partition_ms = ms_since(tp);
                        cut = part.cut_fraction;
                        auto ts = std::chrono::steady_clock::now();
                        SolveReport rep = solve(prob, part, a.cfg);
                        time_ms = ms_since(ts);
                        status = status_name(rep.status);
                        iters = rep.iterations;
                        final_f = rep.final_f;
                        if (rep.status == SolveStatus::Converged) {
                            auto it = best.find(n);
                            if (it == best.end() || time_ms < it->second.second)
                                best[n] = {k, time_ms};
                        }
                    } catch (const Error& e) {
                        std::fprintf(stderr, "bench: n=%d K=%d seed=%llu: %s\n", n, k,
                                     static_cast<unsigned long long>(seed), e.what());
                    }
                }
                f << n << "," << 2 * n << "," << (gen_ok ? prob.n_obs() : 0) << ","
                  << k << "," << seed << "," << status << "," << iters << ","
                  << fmt_double(time_ms) << "," << fmt_double(final_f) << ","
                  << fmt_double(cut) << "," << (a.cfg.beta_zero ? 1 : 0) << "\n";
                std::printf("bench n=%d K=%d seed=%llu status=%s iters=%d "
                            "solve_ms=%.1f partition_ms=%.1f\n",
                            n, k, static_cast<unsigned long long>(seed),
                            status.c_str(), iters, time_ms, partition_ms);
            }
        }
    }
    if (!f) {
        std::fprintf(stderr, "bench: write failed for %s\n", a.out_csv.c_str());
        return kExitIoOrNumerical;
    }
    f.close();
    for (const auto& [n, bk] : best)
        std::printf("best n=%d: K=%d time_ms=%.1f\n", n, bk.first, bk.second);
    return kExitOk;
}

int cmd_partition_stats(const PartitionStatsArgs& a) {
    Problem prob;
    try {
        prob = read_problem(a.problem);
    } catch (const Error& e) {
        std::fprintf(stderr, "partition-stats: %s\n", e.what());
        return kExitIoOrNumerical;
    }
    if (a.k < 1 || a.k > prob.n_points) {
        std::fprintf(stderr, "partition-stats: --k out of range for this problem\n");
        return kExitUsage;
    }
    try {
        VariableGraph g = build_variable_graph(prob);
        std::vector<int> labels = partition_kway(g, a.k, a.seed);
        Partition part = classify_residuals(prob, labels, a.k);
        PartitionStats st = partition_stats(prob, prob.initial_guess, part, g);
        std::printf("k %d\n", st.k);
        std::printf("edges %ld\n", st.n_edges);
        std::printf("cut_edges %ld\n", st.cut_edges);
        std::printf("cut_fraction %s\n", fmt_double(st.cut_fraction).c_str());
        std::printf("coupling_count %ld\n", st.coupling_count);
        std::printf("coupling_objective %s\n", fmt_double(st.coupling_objective).c_str());
        for (int s = 0; s < st.k; s++)
            std::printf("subset %d size %d internal %ld objective %s\n", s,
                        st.subset_sizes[s], st.internal_counts[s],
                        fmt_double(st.subset_objective[s]).c_str());
    } catch (const Error& e) {
        std::fprintf(stderr, "partition-stats: %s\n", e.what());
        return kExitIoOrNumerical;
    }
    return kExitOk;
}

} // namespace lmsq
