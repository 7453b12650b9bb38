// Compares the OpenMP kernel paths against the serial reference: same inputs,
// timed at several thread counts, outputs checked bitwise. Exits nonzero on
// any mismatch, so it doubles as a determinism test.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>

#include "lmsq/model.hpp"
#include "lmsq/partition.hpp"
#include "lmsq/solver.hpp"
#include "lmsq/sparse.hpp"

using namespace lmsq;

namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           (a.empty() ||
            std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

template <typename F>
double time_best(int reps, F&& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; r++) {
        double t0 = now_ms();
        fn();
        best = std::min(best, now_ms() - t0);
    }
    return best;
}

} // namespace

int main(int argc, char** argv) {
    int n = 2000;
    int reps = 5;
    int k = 8;
    CLI::App app{"serial vs OpenMP kernel comparison"};
    app.add_option("--n", n, "problem size (points)");
    app.add_option("--reps", reps, "repetitions per timing");
    app.add_option("--k", k, "subsets for the block kernel");
    CLI11_PARSE(app, argc, argv);

    std::vector<int> thread_counts = {1};
#ifdef _OPENMP
    for (int t : {2, 4, 8})
        if (t <= omp_get_max_threads()) thread_counts.push_back(t);
    std::printf("openmp enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("openmp not available, serial only\n");
#endif

    Problem prob = generate_problem(n, 1);
    Partition part = partition_problem(prob, k, 1);
    const std::vector<double>& x = prob.initial_guess;

    Evaluation base_ev = evaluate(prob, x, part.row_order, 1);
    BlockSystem bs = assemble_blocks(base_ev.jacobian, base_ev.residuals, part);

    std::vector<double> ones(base_ev.jacobian.n_cols, 1.0);
    std::vector<double> spmv_base(base_ev.jacobian.n_rows);
    spmv_into(base_ev.jacobian, ones.data(), spmv_base.data(), 1);

    std::vector<SpdFactor> base_factors(bs.k);
    for (int s = 0; s < bs.k; s++)
        base_factors[s] = spd_factorize(bs.h_blocks[s], 1.0, 1);
    std::vector<double> dir_base =
        compute_direction(bs, base_factors, BetaResult{}, 1);

    int failures = 0;
    std::printf("%-22s %8s %12s %10s  %s\n", "kernel", "threads", "best_ms",
                "speedup", "bitwise");

    for (int nt : thread_counts) {
        // residual + jacobian evaluation
        Evaluation ev;
        double tms = time_best(reps, [&] { ev = evaluate(prob, x, part.row_order, nt); });
        bool ok = bitwise_equal(ev.residuals, base_ev.residuals) &&
                  bitwise_equal(ev.jacobian.values, base_ev.jacobian.values) &&
                  ev.jacobian.col_indices == base_ev.jacobian.col_indices;
        static double eval_serial = 0.0;
        if (nt == 1) eval_serial = tms;
        std::printf("%-22s %8d %12.3f %9.2fx  %s\n", "evaluate", nt, tms,
                    eval_serial / tms, ok ? "ok" : "MISMATCH");
        if (!ok) failures++;

        // sparse matrix-vector product
        std::vector<double> y(base_ev.jacobian.n_rows);
        tms = time_best(reps, [&] {
            for (int pass = 0; pass < 20; pass++)
                spmv_into(base_ev.jacobian, ones.data(), y.data(), nt);
        });
        ok = bitwise_equal(y, spmv_base);
        static double spmv_serial = 0.0;
        if (nt == 1) spmv_serial = tms;
        std::printf("%-22s %8d %12.3f %9.2fx  %s\n", "spmv x20", nt, tms,
                    spmv_serial / tms, ok ? "ok" : "MISMATCH");
        if (!ok) failures++;

        // per-block factorize + solve
        std::vector<double> d;
        tms = time_best(reps, [&] {
            std::vector<SpdFactor> factors(bs.k);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1) num_threads(nt) if (nt > 1)
#endif
            for (int s = 0; s < bs.k; s++)
                factors[s] = spd_factorize(bs.h_blocks[s], 1.0, 1);
            d = compute_direction(bs, factors, BetaResult{}, nt);
        });
        ok = bitwise_equal(d, dir_base);
        static double blk_serial = 0.0;
        if (nt == 1) blk_serial = tms;
        std::printf("%-22s %8d %12.3f %9.2fx  %s\n", "block factor+solve", nt,
                    tms, blk_serial / tms, ok ? "ok" : "MISMATCH");
        if (!ok) failures++;
    }

    if (failures) {
        std::printf("%d kernel(s) diverged from the serial reference\n", failures);
        return 1;
    }
    std::printf("all parallel kernels match the serial reference bitwise\n");
    return 0;
}
