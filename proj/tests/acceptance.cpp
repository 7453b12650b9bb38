// End-to-end acceptance checks for the solver library. Each check prints one
// verdict line; soft checks report [SOFT] instead of failing the binary when
// a timing-dependent target is missed on slow hardware.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "lmsq/model.hpp"
#include "lmsq/partition.hpp"
#include "lmsq/rng.hpp"
#include "lmsq/solver.hpp"
#include "oracles.hpp"

using namespace lmsq;

namespace {

struct Verdict {
    std::string name;
    bool pass = false;
    bool soft = false; // a soft miss does not fail the run
    std::string detail;
};

std::vector<Verdict> g_verdicts;

void record(const std::string& name, bool pass, const std::string& detail,
            bool soft = false) {
    g_verdicts.push_back({name, pass, soft, detail});
    const char* tag = pass ? "[PASS]" : (soft ? "[SOFT]" : "[FAIL]");
    std::fprintf(stderr, "%s %s (%s)\n", tag, name.c_str(), detail.c_str());
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); i++) s += a[i] * b[i];
    return s;
}

double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

Problem merge_problems(const std::vector<Problem>& parts) {
    Problem out;
    int offset = 0;
    for (const Problem& p : parts) {
        for (Observation o : p.observations) {
            for (int k = 0; k < o.point_count(); k++) o.points[k] += offset;
            out.observations.push_back(o);
        }
        out.true_coords.insert(out.true_coords.end(), p.true_coords.begin(),
                               p.true_coords.end());
        out.initial_guess.insert(out.initial_guess.end(), p.initial_guess.begin(),
                                 p.initial_guess.end());
        offset += p.n_points;
    }
    out.n_points = offset;
    return out;
}

struct Assembled {
    Problem prob;
    Partition part;
    Evaluation ev;
    BlockSystem bs;
};

Assembled assemble(int n, std::uint64_t seed, int k) {
    Assembled a;
    a.prob = generate_problem(n, seed);
    a.part = partition_problem(a.prob, k, seed);
    a.ev = evaluate(a.prob, a.prob.initial_guess, a.part.row_order);
    a.bs = assemble_blocks(a.ev.jacobian, a.ev.residuals, a.part);
    return a;
}

// dense normal matrix J^T J
oracle::Dense dense_gram(const SparseMatrix& jac) {
    oracle::Dense j = oracle::dense_from_csr(jac);
    int n = jac.n_cols;
    oracle::Dense c(n, std::vector<double>(n, 0.0));
    for (size_t r = 0; r < j.size(); r++)
        for (int a = 0; a < n; a++)
            for (int b = 0; b < n; b++) c[a][b] += j[r][a] * j[r][b];
    return c;
}

// residual of the coupled linear model at the split direction for a given
// weight: phi(beta) = (J^T J + mu I) d(beta) + g, with d from exact dense
// block solves. Everything here is independent of the solver internals.
double phi_norm2_dense(const BlockSystem& bs, const oracle::Dense& gram,
                       double beta, double mu) {
    int n = static_cast<int>(gram.size());
    oracle::Dense bd = oracle::dense_from_csr(bs.b_coupling);
    oracle::Dense blocks(n, std::vector<double>(n, 0.0));
    for (int a = 0; a < n; a++)
        for (int b = 0; b < n; b++) blocks[a][b] = gram[a][b] - bd[a][b];
    for (int a = 0; a < n; a++) blocks[a][a] += mu;
    std::vector<double> bg = oracle::matvec(bd, bs.g);
    std::vector<double> rhs(n);
    for (int a = 0; a < n; a++) rhs[a] = beta * bg[a] - bs.g[a];
    std::vector<double> d = oracle::gauss_solve(blocks, rhs);
    double s = 0.0;
    for (int a = 0; a < n; a++) {
        double phi = bs.g[a] + mu * d[a];
        for (int b = 0; b < n; b++) phi += gram[a][b] * d[b];
        s += phi * phi;
    }
    return s;
}

// ---- timed solve runs, cached so overlapping checks reuse measurements ----

struct RunKey {
    int n;
    std::uint64_t seed;
    int k;
    bool beta_zero;
    bool operator<(const RunKey& o) const {
        return std::tie(n, seed, k, beta_zero) <
               std::tie(o.n, o.seed, o.k, o.beta_zero);
    }
};

struct RunResult {
    SolveStatus status;
    int iters;
    double seconds;
    double final_f;
};

std::map<RunKey, RunResult> g_runs;
std::map<std::pair<int, std::uint64_t>, Problem> g_problems;

const Problem& problem_for(int n, std::uint64_t seed) {
    auto key = std::make_pair(n, seed);
    auto it = g_problems.find(key);
    if (it == g_problems.end())
        it = g_problems.emplace(key, generate_problem(n, seed)).first;
    return it->second;
}

RunResult timed_run(int n, std::uint64_t seed, int k, bool beta_zero = false) {
    RunKey key{n, seed, k, beta_zero};
    auto it = g_runs.find(key);
    if (it != g_runs.end()) return it->second;

    const Problem& prob = problem_for(n, seed);
    Partition part = partition_problem(prob, k, seed);
    SolverConfig cfg;
    cfg.beta_zero = beta_zero;
    auto t0 = std::chrono::steady_clock::now();
    SolveReport rep = solve(prob, part, cfg);
    auto t1 = std::chrono::steady_clock::now();
    RunResult res;
    res.status = rep.status;
    res.iters = rep.iterations;
    res.seconds = std::chrono::duration<double>(t1 - t0).count();
    res.final_f = rep.final_f;
    g_runs.emplace(key, res);
    std::fprintf(stderr, "  run n=%d seed=%llu K=%d%s: %s, %d iters, %.2fs\n", n,
                 static_cast<unsigned long long>(seed), k,
                 beta_zero ? " beta0" : "", status_name(rep.status), res.iters,
                 res.seconds);
    return res;
}

// ---------------------------------------------------------------------------

void check_direction_matches_dense() {
    int bad = 0, total = 0;
    double worst = 0.0;
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(2024);
    for (int trial = 0; trial < 100; trial++) {
        int n = 16 + static_cast<int>(rng.uniform_index(15));
        int k = 2 + static_cast<int>(rng.uniform_index(2));
        Assembled a = assemble(n, 1000 + trial, k);
        double mu = std::max(1.0, a.bs.max_diag);
        std::vector<SpdFactor> factors(a.bs.k);
        for (int s = 0; s < a.bs.k; s++)
            factors[s] = spd_factorize(a.bs.h_blocks[s], mu);
        double b_fro = frobenius_norm(a.bs.b_coupling);
        BetaResult br;
        if (b_fro > 0.0) {
            double h_norm = 0.0;
            for (const auto& h : a.bs.h_blocks)
                h_norm = std::max(h_norm, spectral_norm_est(h));
            br = compute_beta(a.bs, factors, h_norm, b_fro, mu, 0.8);
        }
        std::vector<double> d = compute_direction(a.bs, factors, br);

        int nv = a.prob.n_vars();
        oracle::Dense gram = dense_gram(a.ev.jacobian);
        oracle::Dense bd = oracle::dense_from_csr(a.bs.b_coupling);
        oracle::Dense lhs(nv, std::vector<double>(nv, 0.0));
        for (int p = 0; p < nv; p++)
            for (int q = 0; q < nv; q++) lhs[p][q] = gram[p][q] - bd[p][q];
        for (int p = 0; p < nv; p++) lhs[p][p] += mu;
        std::vector<double> bg = oracle::matvec(bd, a.bs.g);
        std::vector<double> rhs(nv);
        for (int p = 0; p < nv; p++) rhs[p] = br.beta * bg[p] - a.bs.g[p];
        std::vector<double> want = oracle::gauss_solve(lhs, rhs);

        double num = 0.0, den = 0.0;
        for (int p = 0; p < nv; p++) {
            num += (d[p] - want[p]) * (d[p] - want[p]);
            den += want[p] * want[p];
        }
        double rel = std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
        worst = std::max(worst, rel);
        total++;
        if (rel > 1e-8) bad++;
    }
    double secs = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    char buf[128];
    std::snprintf(buf, sizeof buf, "%d/%d within 1e-8, worst rel err %.2e, %.1fs",
                  total - bad, total, worst, secs);
    record("split direction matches dense reference solve",
           bad == 0 && secs < 10.0, buf);
}

void check_weight_minimizes_split_residual() {
    int bad = 0, total = 0;
    double worst = 0.0;
    Rng rng(77);
    for (int trial = 0; total < 50 && trial < 200; trial++) {
        int n = 16 + static_cast<int>(rng.uniform_index(15));
        int k = 2 + static_cast<int>(rng.uniform_index(2));
        Assembled a = assemble(n, 3000 + trial, k);
        double b_fro = frobenius_norm(a.bs.b_coupling);
        if (b_fro == 0.0) continue;
        double mu = std::max(1.0, 0.5 * a.bs.max_diag);
        std::vector<SpdFactor> factors(a.bs.k);
        for (int s = 0; s < a.bs.k; s++)
            factors[s] = spd_factorize(a.bs.h_blocks[s], mu);
        double h_norm = 0.0;
        for (const auto& h : a.bs.h_blocks)
            h_norm = std::max(h_norm, spectral_norm_est(h));
        BetaResult br = compute_beta(a.bs, factors, h_norm, b_fro, mu, 0.8);

        oracle::Dense gram = dense_gram(a.ev.jacobian);
        auto phi2 = [&](double beta) { return phi_norm2_dense(a.bs, gram, beta, mu); };
        double gs = oracle::golden_section(
            phi2, br.beta_star - 1.0, br.beta_star + 1.0, 1e-9);
        double err =
            std::abs(gs - br.beta_star) / std::max(1.0, std::abs(br.beta_star));
        worst = std::max(worst, err);
        total++;
        // the clamped weight actually used must never lose to weight 0
        bool ok = err <= 1e-6 && phi2(br.beta) <= phi2(0.0) + 1e-12;
        if (!ok) bad++;
    }
    char buf[128];
    std::snprintf(buf, sizeof buf,
                  "%d/%d optimal and no worse than weight 0, worst dev %.2e",
                  total - bad, total, worst);
    record("coupling weight minimizes the split linear residual",
           bad == 0 && total == 50, buf);
}

void check_iteration_invariants() {
    long violations = 0, iters = 0;
    for (std::uint64_t seed = 1; seed <= 10; seed++) {
        Problem prob = generate_problem(500, seed);
        Partition part = partition_problem(prob, 4, seed);
        SolverConfig cfg;
        cfg.diagnostics = true;
        SolveReport rep = solve(prob, part, cfg);
        if (rep.status != SolveStatus::Converged) {
            violations++;
            continue;
        }
        double prev_f = std::numeric_limits<double>::infinity();
        for (const IterationRecord& r : rep.records) {
            iters++;
            if (!(r.mu >= 1.0)) violations++;
            if (!(r.gamma >= 1.0 && r.gamma <= 1.0 + cfg.b + 1e-12)) violations++;
            if (!(r.step > 0.0 &&
                  r.step <= std::min(1.0, 1.0 / r.gamma) + 1e-15))
                violations++;
            if (!(std::abs(r.beta) * r.b_fro <=
                  cfg.b * r.mu / (r.h_norm + r.mu) + 1e-12))
                violations++;
            double bound =
                -(1.0 - cfg.b) * r.grad_norm * r.grad_norm / (r.h_norm + r.mu);
            if (!(r.gd <= bound + 1e-9 * std::max(1.0, std::abs(bound))))
                violations++;
            if (!(r.d_norm <=
                  (r.gamma / r.mu) * r.grad_norm * (1.0 + 1e-9) + 1e-12))
                violations++;
            if (!(r.f < prev_f)) violations++;
            prev_f = r.f;
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "%ld violations over %ld iterations",
                  violations, iters);
    record("iterate invariants hold across full solves", violations == 0, buf);
}

void check_decoupled_split_is_bitwise_identical() {
    Problem merged =
        merge_problems({generate_problem(20, 11), generate_problem(20, 12)});
    Partition p1 = partition_problem(merged, 1, 0);
    Partition p2 = partition_problem(merged, 2, 0);
    SolverConfig cfg;
    SolveReport a = solve(merged, p1, cfg);
    SolveReport b = solve(merged, p2, cfg);

    bool ok = a.status == SolveStatus::Converged &&
              b.status == SolveStatus::Converged &&
              a.records.size() == b.records.size() &&
              a.final_x.size() == b.final_x.size() &&
              std::memcmp(a.final_x.data(), b.final_x.data(),
                          a.final_x.size() * sizeof(double)) == 0;
    double worst_rho = 0.0;
    if (ok) {
        for (size_t i = 0; i < a.records.size(); i++) {
            const IterationRecord &ra = a.records[i], &rb = b.records[i];
            if (ra.f != rb.f || ra.grad_norm != rb.grad_norm || ra.mu != rb.mu ||
                ra.beta != rb.beta || ra.gamma != rb.gamma || ra.step != rb.step ||
                ra.ell != rb.ell || ra.rho != rb.rho ||
                ra.backtracks != rb.backtracks)
                ok = false;
            worst_rho = std::max({worst_rho, ra.rho, rb.rho});
        }
        if (worst_rho > 1e-8) ok = false;
    }
    char buf[128];
    std::snprintf(buf, sizeof buf,
                  "%zu iterations, cut 0, worst linear residual %.2e",
                  a.records.size(), worst_rho);
    record("single-block and decoupled split solves agree bitwise", ok, buf);
}

void check_jacobian_against_finite_differences() {
    Rng rng(501);
    int bad = 0, total = 0;
    double worst = 0.0;
    const double sigmas[] = {0.01, 0.017453292519943295, 1.0};
    for (int trial = 0; trial < 200; trial++) {
        std::vector<double> x;
        // spread-out random geometry, min separation 1
        while (x.size() < 6) {
            double cx = rng.uniform(0.0, 100.0), cy = rng.uniform(0.0, 100.0);
            bool okp = true;
            for (size_t i = 0; i < x.size(); i += 2) {
                double dx = x[i] - cx, dy = x[i + 1] - cy;
                if (dx * dx + dy * dy < 1.0) okp = false;
            }
            if (okp) {
                x.push_back(cx);
                x.push_back(cy);
            }
        }
        for (ObsKind kind : {ObsKind::Distance, ObsKind::Angle, ObsKind::PointLine,
                             ObsKind::CoordX, ObsKind::CoordY}) {
            Observation o;
            o.kind = kind;
            o.points[0] = 0;
            if (kind == ObsKind::Distance) o.points[1] = 1;
            if (kind == ObsKind::Angle || kind == ObsKind::PointLine) {
                o.points[1] = 1;
                o.points[2] = 2;
            }
            o.sigma = sigmas[rng.uniform_index(3)];
            o.value = raw_residual(o, x.data());
            Problem p;
            p.n_points = 3;
            p.observations = {o};
            p.initial_guess = x;
            Evaluation ev = evaluate(p, x);
            std::vector<double> fd = oracle::fd_jacobian_row(o, x);
            std::vector<double> an(x.size(), 0.0);
            for (int k = ev.jacobian.row_offsets[0]; k < ev.jacobian.row_offsets[1];
                 k++)
                an[ev.jacobian.col_indices[k]] = ev.jacobian.values[k];
            double row_inf = 0.0, err_inf = 0.0;
            for (size_t i = 0; i < x.size(); i++) {
                row_inf = std::max(row_inf, std::abs(an[i]));
                err_inf = std::max(err_inf, std::abs(an[i] - fd[i]));
            }
            double rel = err_inf / std::max(row_inf, 1.0);
            worst = std::max(worst, rel);
            total++;
            if (rel > 1e-5) bad++;
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "%d/%d rows within 1e-5, worst %.2e",
                  total - bad, total, worst);
    record("analytic jacobian matches finite differences", bad == 0, buf);
}

void check_convergence_grid() {
    int bad = 0;
    std::string detail;
    for (int n : {500, 2000, 5000}) {
        for (int k : {1, 4, 8}) {
            RunResult r = timed_run(n, 1, k);
            if (r.status != SolveStatus::Converged || r.iters > 200) {
                bad++;
                detail += " n" + std::to_string(n) + "K" + std::to_string(k) +
                          "=" + status_name(r.status);
            }
        }
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d/9 converged within 200 iterations%s",
                  9 - bad, detail.c_str());
    record("solver converges across sizes and subset counts", bad == 0, buf);
}

void check_split_speedup() {
    std::vector<double> ratios;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        double t1 = timed_run(10000, seed, 1).seconds;
        double tbest = std::numeric_limits<double>::infinity();
        for (int k : {4, 8, 16})
            tbest = std::min(tbest, timed_run(10000, seed, k).seconds);
        ratios.push_back(tbest / t1);
    }
    std::sort(ratios.begin(), ratios.end());
    double median = ratios[1];
    char buf[128];
    std::snprintf(buf, sizeof buf, "median split/unsplit time ratio %.3f",
                  median);
    record("splitting speeds up large instances", median <= 0.9, buf,
           /*soft=*/true);
}

double best_time(int n, std::uint64_t seed) {
    double best = std::numeric_limits<double>::infinity();
    for (int k : {4, 8, 16}) best = std::min(best, timed_run(n, seed, k).seconds);
    return best;
}

int best_k(int n, std::uint64_t seed) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 4;
    for (int k : {4, 8, 16}) {
        double t = timed_run(n, seed, k).seconds;
        if (t < best) {
            best = t;
            arg = k;
        }
    }
    return arg;
}

void check_scaling_slope() {
    std::vector<int> sizes = {2500, 5000, 10000, 20000};
    std::vector<double> lx, ly;
    for (int n : sizes) {
        double t = best_time(n, 1);
        lx.push_back(std::log(static_cast<double>(n)));
        ly.push_back(std::log(std::max(t, 1e-9)));
    }
    double mx = 0, my = 0;
    for (size_t i = 0; i < lx.size(); i++) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= lx.size();
    my /= ly.size();
    double num = 0, den = 0;
    for (size_t i = 0; i < lx.size(); i++) {
        num += (lx[i] - mx) * (ly[i] - my);
        den += (lx[i] - mx) * (lx[i] - mx);
    }
    double slope = num / den;
    char buf[128];
    std::snprintf(buf, sizeof buf, "log-log slope %.2f over n=2500..20000", slope);
    record("best-split wall time grows subquadratically", slope <= 1.7, buf,
           /*soft=*/true);
}

void check_interior_subset_count_wins() {
    double t2 = timed_run(10000, 1, 2).seconds;
    double t32 = timed_run(10000, 1, 32).seconds;
    double interior = std::numeric_limits<double>::infinity();
    std::string curve;
    char num[48];
    for (int k : {2, 4, 8, 16, 32}) {
        double t = timed_run(10000, 1, k).seconds;
        if (k != 2 && k != 32) interior = std::min(interior, t);
        std::snprintf(num, sizeof num, "%sK%d=%.2fs", curve.empty() ? "" : " ", k, t);
        curve += num;
    }
    record("an intermediate subset count beats both extremes",
           interior < t2 && interior < t32, curve);
}

void check_weight_does_not_cost_iterations() {
    int k = best_k(5000, 1);
    int wins = 0, total = 0;
    long iters_with = 0, iters_without = 0;
    double time_with = 0.0, time_without = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; seed++) {
        RunResult with = timed_run(5000, seed, k, false);
        RunResult without = timed_run(5000, seed, k, true);
        total++;
        iters_with += with.iters;
        iters_without += without.iters;
        time_with += with.seconds;
        time_without += without.seconds;
        if (with.status == SolveStatus::Converged &&
            (without.status != SolveStatus::Converged ||
             with.iters <= without.iters))
            wins++;
    }
    char buf[192];
    std::snprintf(buf, sizeof buf,
                  "matched or beat zero weight on %d/%d at K=%d; mean iters "
                  "%.1f vs %.1f, mean time %.2fs vs %.2fs",
                  wins, total, k, iters_with / 10.0, iters_without / 10.0,
                  time_with / 10.0, time_without / 10.0);
    record("coupling weight does not cost iterations", wins >= 7, buf);
}

void check_generator_statistics() {
    bool ok = true;
    std::string why;
    for (std::uint64_t seed = 1; seed <= 20 && ok; seed++) {
        Problem p = generate_problem(400, seed);
        long coord_x = 0, coord_y = 0, anchors = 0, geo = 0;
        std::set<std::pair<int, int>> edges;
        for (const Observation& o : p.observations) {
            if (o.kind == ObsKind::CoordX) {
                coord_x++;
                if (o.sigma == kSigmaAnchor) anchors++;
            } else if (o.kind == ObsKind::CoordY) {
                coord_y++;
            } else {
                geo++;
                int np = o.point_count();
                for (int a = 0; a < np; a++)
                    for (int b = a + 1; b < np; b++)
                        edges.insert({std::min(o.points[a], o.points[b]),
                                      std::max(o.points[a], o.points[b])});
            }
        }
        // 400 points drawn without replacement from the 40 x 40 grid
        std::set<std::pair<long, long>> cells;
        bool on_grid = true;
        for (int i = 0; i < 400; i++) {
            double cx = p.true_coords[2 * i] / kGridSpacing;
            double cy = p.true_coords[2 * i + 1] / kGridSpacing;
            long ix = std::lround(cx), iy = std::lround(cy);
            if (std::abs(cx - ix) > 1e-9 || std::abs(cy - iy) > 1e-9 || ix < 0 ||
                iy < 0 || ix >= 40 || iy >= 40)
                on_grid = false;
            cells.insert({ix, iy});
        }
        double avg_deg = 2.0 * static_cast<double>(edges.size()) / 400.0;
        if (!on_grid || cells.size() != 400) {
            ok = false;
            why = "points not distinct nodes of the 40 x 40 grid";
        } else if (coord_x != 400 || coord_y != 400) {
            ok = false;
            why = "coordinate observation counts off";
        } else if (anchors != 4) {
            ok = false;
            why = "anchor count off";
        } else if (avg_deg < 6.0 || avg_deg > 6.5) {
            ok = false;
            why = "average degree out of range";
        } else if (geo < 1) {
            ok = false;
            why = "no geometric observations";
        }
        Problem q = generate_problem(400, seed);
        if (q.initial_guess != p.initial_guess ||
            q.observations.size() != p.observations.size()) {
            ok = false;
            why = "not deterministic";
        }
    }
    record("generator produces the documented observation mix", ok,
           ok ? "20 seeds at n=400 all in range" : why);
}

} // namespace

int main() {
    auto t0 = std::chrono::steady_clock::now();

    check_direction_matches_dense();
    check_weight_minimizes_split_residual();
    check_iteration_invariants();
    check_decoupled_split_is_bitwise_identical();
    check_jacobian_against_finite_differences();
    check_convergence_grid();
    check_split_speedup();
    check_scaling_slope();
    check_interior_subset_count_wins();
    check_weight_does_not_cost_iterations();
    check_generator_statistics();

    auto t1 = std::chrono::steady_clock::now();
    double total = std::chrono::duration<double>(t1 - t0).count();

    int hard_fail = 0, soft_miss = 0;
    for (const Verdict& v : g_verdicts) {
        const char* tag = v.pass ? "[PASS]" : (v.soft ? "[SOFT]" : "[FAIL]");
        std::printf("%s %s (%s)\n", tag, v.name.c_str(), v.detail.c_str());
        if (!v.pass && !v.soft) hard_fail++;
        if (!v.pass && v.soft) soft_miss++;
    }
    std::printf("acceptance: %zu checks, %d hard failures, %d soft misses, %.0fs\n",
                g_verdicts.size(), hard_fail, soft_miss, total);
    return hard_fail == 0 ? 0 : 1;
}
