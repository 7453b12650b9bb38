#include "lmsq/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lmsq/csvio.hpp"
#include "lmsq/rng.hpp"

namespace lmsq {

namespace {
constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kDegenerate = 1e-12;
} // namespace

double wrap_angle(double a) {
    double w = std::remainder(a, 2.0 * kPi);
    if (w <= -kPi) w += 2.0 * kPi;
    return w;
}

const char* obs_kind_name(ObsKind k) {
    switch (k) {
    case ObsKind::Distance: return "distance";
    case ObsKind::Angle: return "angle";
    case ObsKind::PointLine: return "pointline";
    case ObsKind::CoordX: return "coordx";
    case ObsKind::CoordY: return "coordy";
    }
    return "?";
}

double raw_residual(const Observation& obs, const double* x, int obs_index) {
    auto px = [&](int p) { return x[2 * p]; };
    auto py = [&](int p) { return x[2 * p + 1]; };
    switch (obs.kind) {
    case ObsKind::Distance: {
        double dx = px(obs.points[0]) - px(obs.points[1]);
        double dy = py(obs.points[0]) - py(obs.points[1]);
        double d = std::sqrt(dx * dx + dy * dy);
        if (d < kDegenerate)
            throw DegenerateGeometryError("distance between coincident points", obs_index);
        return d - obs.value;
    }
    case ObsKind::Angle: {
        // angle at points[1] between rays to points[0] and points[2]
        double ax = px(obs.points[0]) - px(obs.points[1]);
        double ay = py(obs.points[0]) - py(obs.points[1]);
        double cx = px(obs.points[2]) - px(obs.points[1]);
        double cy = py(obs.points[2]) - py(obs.points[1]);
        double na2 = ax * ax + ay * ay;
        double nc2 = cx * cx + cy * cy;
        if (na2 < kDegenerate * kDegenerate || nc2 < kDegenerate * kDegenerate)
            throw DegenerateGeometryError("angle with zero-length leg", obs_index);
        double theta = std::atan2(ax * cy - ay * cx, ax * cx + ay * cy);
        return wrap_angle(theta - obs.value);
    }
    case ObsKind::PointLine: {
        // signed offset of points[0] from the line through points[1], points[2]
        double tx = px(obs.points[2]) - px(obs.points[1]);
        double ty = py(obs.points[2]) - py(obs.points[1]);
        double len = std::sqrt(tx * tx + ty * ty);
        if (len < kDegenerate)
            throw DegenerateGeometryError("line through coincident points", obs_index);
        double rx = px(obs.points[0]) - px(obs.points[1]);
        double ry = py(obs.points[0]) - py(obs.points[1]);
        return (tx * ry - ty * rx) / len - obs.value;
    }
    case ObsKind::CoordX:
        return px(obs.points[0]) - obs.value;
    case ObsKind::CoordY:
        return py(obs.points[0]) - obs.value;
    }
    throw Error("raw_residual: bad kind");
}

namespace {

int row_nnz(const Observation& o) {
    switch (o.kind) {
    case ObsKind::Distance: return 4;
    case ObsKind::Angle:
    case ObsKind::PointLine: return 6;
    default: return 1;
    }
}

struct RowEntry {
    int col;
    double val;
};

// writes the weighted jacobian row; n filled entries returned, columns sorted
int jacobian_row(const Observation& obs, const double* x, int obs_index,
                 RowEntry out[6]) {
    auto px = [&](int p) { return x[2 * p]; };
    auto py = [&](int p) { return x[2 * p + 1]; };
    double inv_sigma = 1.0 / obs.sigma;
    int n = 0;
    auto put = [&](int p, double gx, double gy) {
        out[n++] = {2 * p, gx * inv_sigma};
        out[n++] = {2 * p + 1, gy * inv_sigma};
    };
    switch (obs.kind) {
    case ObsKind::Distance: {
        double dx = px(obs.points[0]) - px(obs.points[1]);
        double dy = py(obs.points[0]) - py(obs.points[1]);
        double d = std::sqrt(dx * dx + dy * dy);
        if (d < kDegenerate)
            throw DegenerateGeometryError("distance between coincident points", obs_index);
        put(obs.points[0], dx / d, dy / d);
        put(obs.points[1], -dx / d, -dy / d);
        break;
    }
    case ObsKind::Angle: {
        double ax = px(obs.points[0]) - px(obs.points[1]);
        double ay = py(obs.points[0]) - py(obs.points[1]);
        double cx = px(obs.points[2]) - px(obs.points[1]);
        double cy = py(obs.points[2]) - py(obs.points[1]);
        double na2 = ax * ax + ay * ay;
        double nc2 = cx * cx + cy * cy;
        if (na2 < kDegenerate * kDegenerate || nc2 < kDegenerate * kDegenerate)
            throw DegenerateGeometryError("angle with zero-length leg", obs_index);
        double gAx = ay / na2, gAy = -ax / na2;
        double gCx = -cy / nc2, gCy = cx / nc2;
        put(obs.points[0], gAx, gAy);
        put(obs.points[1], -gAx - gCx, -gAy - gCy);
        put(obs.points[2], gCx, gCy);
        break;
    }
    case ObsKind::PointLine: {
        double tx = px(obs.points[2]) - px(obs.points[1]);
        double ty = py(obs.points[2]) - py(obs.points[1]);
        double len = std::sqrt(tx * tx + ty * ty);
        if (len < kDegenerate)
            throw DegenerateGeometryError("line through coincident points", obs_index);
        double rx = px(obs.points[0]) - px(obs.points[1]);
        double ry = py(obs.points[0]) - py(obs.points[1]);
        double c = tx * ry - ty * rx;
        double l3 = len * len * len;
        put(obs.points[0], -ty / len, tx / len);
        // d/dQ1 of cross: (-(Py-Q1y) + ty, -tx + (Px-Q1x)); length term adds c*t/len^3
        put(obs.points[1], (-ry + ty) / len + c * tx / l3,
            (-tx + rx) / len + c * ty / l3);
        put(obs.points[2], ry / len - c * tx / l3, -rx / len - c * ty / l3);
        break;
    }
    case ObsKind::CoordX:
        out[n++] = {2 * obs.points[0], inv_sigma};
        break;
    case ObsKind::CoordY:
        out[n++] = {2 * obs.points[0] + 1, inv_sigma};
        break;
    }
    // insertion sort by column; rows are at most 6 wide
    for (int i = 1; i < n; i++) {
        RowEntry e = out[i];
        int j = i - 1;
        while (j >= 0 && out[j].col > e.col) {
            out[j + 1] = out[j];
            j--;
        }
        out[j + 1] = e;
    }
    return n;
}

void check_problem_x(const Problem& p, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != p.n_vars())
        throw DimensionError("evaluate: x size mismatch");
}

// first-error marshaling for parallel loops: keep the smallest failing row
struct ErrorSlot {
    int row = -1;
    int obs_index = -1;
    std::string what;
};

} // namespace

Evaluation evaluate(const Problem& p, const std::vector<double>& x,
                    const std::vector<int>& order, int n_threads) {
    check_problem_x(p, x);
    int m = p.n_obs();
    if (!order.empty() && static_cast<int>(order.size()) != m)
        throw DimensionError("evaluate: order size mismatch");

    Evaluation ev;
    ev.residuals.assign(m, 0.0);
    SparseMatrix& jac = ev.jacobian;
    jac.n_rows = m;
    jac.n_cols = p.n_vars();
    jac.row_offsets.assign(static_cast<size_t>(m) + 1, 0);
    for (int r = 0; r < m; r++) {
        int oi = order.empty() ? r : order[r];
        jac.row_offsets[static_cast<size_t>(r) + 1] =
            jac.row_offsets[r] + row_nnz(p.observations[oi]);
    }
    jac.col_indices.assign(jac.row_offsets[m], 0);
    jac.values.assign(jac.row_offsets[m], 0.0);

    ErrorSlot err;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(n_threads > 0 ? n_threads : 1) \
    if (n_threads > 1)
#endif
    for (int r = 0; r < m; r++) {
        int oi = order.empty() ? r : order[r];
        const Observation& o = p.observations[oi];
        RowEntry entries[6];
        try {
            double raw = raw_residual(o, x.data(), oi);
            ev.residuals[r] = raw / o.sigma;
            int n = jacobian_row(o, x.data(), oi, entries);
            int base = jac.row_offsets[r];
            for (int k = 0; k < n; k++) {
                jac.col_indices[static_cast<size_t>(base) + k] = entries[k].col;
                jac.values[static_cast<size_t>(base) + k] = entries[k].val;
            }
        } catch (const DegenerateGeometryError& e) {
#ifdef _OPENMP
#pragma omp critical(lmsq_eval_err)
#endif
            if (err.row < 0 || r < err.row) err = {r, e.obs_index, e.what()};
        }
    }
    if (err.row >= 0) throw DegenerateGeometryError(err.what, err.obs_index);
    return ev;
}

std::vector<double> residuals_only(const Problem& p, const std::vector<double>& x,
                                   const std::vector<int>& order, int n_threads) {
    check_problem_x(p, x);
    int m = p.n_obs();
    if (!order.empty() && static_cast<int>(order.size()) != m)
        throw DimensionError("residuals_only: order size mismatch");
    std::vector<double> res(m, 0.0);
    ErrorSlot err;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(n_threads > 0 ? n_threads : 1) \
    if (n_threads > 1)
#endif
    for (int r = 0; r < m; r++) {
        int oi = order.empty() ? r : order[r];
        const Observation& o = p.observations[oi];
        try {
            res[r] = raw_residual(o, x.data(), oi) / o.sigma;
        } catch (const DegenerateGeometryError& e) {
#ifdef _OPENMP
#pragma omp critical(lmsq_res_err)
#endif
            if (err.row < 0 || r < err.row) err = {r, e.obs_index, e.what()};
        }
    }
    if (err.row >= 0) throw DegenerateGeometryError(err.what, err.obs_index);
    return res;
}

double objective(const std::vector<double>& residuals) {
    double s = 0.0;
    for (double r : residuals) s += r * r;
    return 0.5 * s;
}

// ---------------------------------------------------------------------------
// generator

Problem generate_problem(int n_points, std::uint64_t seed) {
    if (n_points < 16)
        throw Error("generate_problem: n_points must be at least 16");
    const int n = n_points;
    Rng rng(seed);

    int side = static_cast<int>(std::ceil(2.0 * std::sqrt(static_cast<double>(n))));
    long cap = static_cast<long>(side) * side;

    // n distinct grid nodes, partial Fisher-Yates
    std::vector<int> deck(cap);
    std::iota(deck.begin(), deck.end(), 0);
    for (int i = 0; i < n; i++) {
        long j = i + static_cast<long>(rng.uniform_index(cap - i));
        std::swap(deck[i], deck[j]);
    }

    Problem p;
    p.n_points = n;
    p.seed = seed;
    p.true_coords.resize(2 * static_cast<size_t>(n));
    for (int i = 0; i < n; i++) {
        p.true_coords[2 * static_cast<size_t>(i)] = kGridSpacing * (deck[i] % side);
        p.true_coords[2 * static_cast<size_t>(i) + 1] = kGridSpacing * (deck[i] / side);
    }
    const double* tc = p.true_coords.data();

    // neighbor lists within a radius, via a bucket grid. Tiny instances get a
    // field-spanning radius up front: near the boundary the disc is clipped so
    // hard that the edge pool cannot reach the degree target otherwise.
    const double field_radius = kGridSpacing * static_cast<double>(side) * 1.5;
    double radius = n < 64 ? field_radius : kLocalRadius;
    std::vector<std::vector<int>> neigh(n);
    auto build_neighbors = [&](double r) {
        for (auto& v : neigh) v.clear();
        double cell = r;
        int nbx = side + 2;
        std::vector<std::vector<int>> buckets(static_cast<size_t>(nbx) * nbx);
        auto bx = [&](double v) {
            int b = static_cast<int>(std::floor(v / cell));
            return std::min(std::max(b, 0), nbx - 1);
        };
        for (int i = 0; i < n; i++)
            buckets[static_cast<size_t>(bx(tc[2 * i])) * nbx + bx(tc[2 * i + 1])]
                .push_back(i);
        double r2 = r * r;
        for (int i = 0; i < n; i++) {
            int cx = bx(tc[2 * i]);
            int cy = bx(tc[2 * i + 1]);
            for (int ox = -1; ox <= 1; ox++) {
                for (int oy = -1; oy <= 1; oy++) {
                    int gx = cx + ox, gy = cy + oy;
                    if (gx < 0 || gx >= nbx || gy < 0 || gy >= nbx) continue;
                    for (int j : buckets[static_cast<size_t>(gx) * nbx + gy]) {
                        if (j == i) continue;
                        double dx = tc[2 * i] - tc[2 * j];
                        double dy = tc[2 * i + 1] - tc[2 * j + 1];
                        if (dx * dx + dy * dy <= r2) neigh[i].push_back(j);
                    }
                }
            }
            std::sort(neigh[i].begin(), neigh[i].end());
        }
    };
    build_neighbors(radius);

    // geometric observations until mean degree over distinct-pair edges >= 6
    std::vector<std::vector<int>> adj(n);
    long deg_sum = 0;
    auto add_edge = [&](int a, int b) {
        if (a == b) return;
        auto& la = adj[a];
        if (std::find(la.begin(), la.end(), b) != la.end()) return;
        la.push_back(b);
        adj[b].push_back(a);
        deg_sum += 2;
    };
    long draws = 0;
    long last_progress = 0;
    const long stall_limit = 100000L + 100L * n;
    while (deg_sum < 6L * n) {
        if (++draws - last_progress > stall_limit) {
            // the remaining pool is too thin for rejection sampling; widen the
            // neighborhoods and keep going
            if (radius >= field_radius)
                throw Error("generate_problem: observation sampling stalled");
            radius = std::min(2.0 * radius, field_radius);
            build_neighbors(radius);
            last_progress = draws;
        }
        long deg_before = deg_sum;
        int kind = static_cast<int>(rng.uniform_index(3));
        int p0 = static_cast<int>(rng.uniform_index(n));
        const std::vector<int>& cand = neigh[p0];
        if (kind == 0) {
            if (cand.empty()) continue;
            int q = cand[rng.uniform_index(cand.size())];
            double dx = tc[2 * p0] - tc[2 * q];
            double dy = tc[2 * p0 + 1] - tc[2 * q + 1];
            double d = std::sqrt(dx * dx + dy * dy);
            Observation o;
            o.kind = ObsKind::Distance;
            o.points[0] = p0;
            o.points[1] = q;
            o.sigma = kSigmaDistance;
            o.value = d + rng.normal(0.0, kSigmaDistance);
            p.observations.push_back(o);
            add_edge(p0, q);
        } else {
            if (cand.size() < 2) continue;
            std::uint64_t i1 = rng.uniform_index(cand.size());
            std::uint64_t i2 = rng.uniform_index(cand.size());
            while (i2 == i1) i2 = rng.uniform_index(cand.size());
            int c1 = cand[i1], c2 = cand[i2];
            Observation o;
            o.points[0] = p0;
            o.points[1] = c1;
            o.points[2] = c2;
            if (kind == 1) {
                o.kind = ObsKind::Angle;
                o.sigma = kSigmaAngle;
                double true_angle;
                {
                    double ax = tc[2 * p0] - tc[2 * c1];
                    double ay = tc[2 * p0 + 1] - tc[2 * c1 + 1];
                    double vx2 = tc[2 * c2] - tc[2 * c1];
                    double vy2 = tc[2 * c2 + 1] - tc[2 * c1 + 1];
                    true_angle = std::atan2(ax * vy2 - ay * vx2, ax * vx2 + ay * vy2);
                }
                o.value = wrap_angle(true_angle + rng.normal(0.0, kSigmaAngle));
            } else {
                o.kind = ObsKind::PointLine;
                o.sigma = kSigmaLine;
                double txl = tc[2 * c2] - tc[2 * c1];
                double tyl = tc[2 * c2 + 1] - tc[2 * c1 + 1];
                double len = std::sqrt(txl * txl + tyl * tyl);
                double rx = tc[2 * p0] - tc[2 * c1];
                double ry = tc[2 * p0 + 1] - tc[2 * c1 + 1];
                o.value = (txl * ry - tyl * rx) / len + rng.normal(0.0, kSigmaLine);
            }
            p.observations.push_back(o);
            add_edge(p0, c1);
            add_edge(p0, c2);
            add_edge(c1, c2);
        }
        if (deg_sum > deg_before) last_progress = draws;
    }

    // anchors: 1% of points (at least one) get tight coordinate sigmas
    int n_anchor = std::max(1L, std::lround(0.01 * n));
    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    for (int i = 0; i < n_anchor; i++) {
        long j = i + static_cast<long>(rng.uniform_index(n - i));
        std::swap(ids[i], ids[j]);
    }
    std::vector<char> is_anchor(n, 0);
    for (int i = 0; i < n_anchor; i++) is_anchor[ids[i]] = 1;

    p.initial_guess.resize(2 * static_cast<size_t>(n));
    for (int i = 0; i < n; i++) {
        double s = is_anchor[i] ? kSigmaAnchor : kSigmaLoose;
        double vx = tc[2 * i] + rng.normal(0.0, s);
        double vy = tc[2 * i + 1] + rng.normal(0.0, s);
        Observation ox;
        ox.kind = ObsKind::CoordX;
        ox.points[0] = i;
        ox.value = vx;
        ox.sigma = s;
        Observation oy;
        oy.kind = ObsKind::CoordY;
        oy.points[0] = i;
        oy.value = vy;
        oy.sigma = s;
        p.observations.push_back(ox);
        p.observations.push_back(oy);
        p.initial_guess[2 * static_cast<size_t>(i)] = vx;
        p.initial_guess[2 * static_cast<size_t>(i) + 1] = vy;
    }
    return p;
}

// ---------------------------------------------------------------------------
// file format

void write_problem(const Problem& p, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("write_problem: cannot open " + path);
    f << "n_points " << p.n_points << "\n";
    f << "seed " << p.seed << "\n";
    if (!p.true_coords.empty()) {
        for (int i = 0; i < p.n_points; i++)
            f << "point " << i << " " << fmt_double(p.true_coords[2 * i]) << " "
              << fmt_double(p.true_coords[2 * i + 1]) << "\n";
    }
    for (const Observation& o : p.observations) {
        f << "obs " << obs_kind_name(o.kind);
        for (int k = 0; k < o.point_count(); k++) f << " " << o.points[k];
        f << " " << fmt_double(o.value) << " " << fmt_double(o.sigma) << "\n";
    }
    if (!p.initial_guess.empty()) {
        for (int i = 0; i < p.n_points; i++)
            f << "init " << i << " " << fmt_double(p.initial_guess[2 * i]) << " "
              << fmt_double(p.initial_guess[2 * i + 1]) << "\n";
    }
    if (!f) throw Error("write_problem: write failed for " + path);
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) i++;
        size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t') j++;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

[[noreturn]] void bad_line(const std::string& msg, int line_no) {
    throw ParseError(msg + " (line " + std::to_string(line_no) + ")", line_no);
}

} // namespace

Problem read_problem(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("read_problem: cannot open " + path);

    Problem p;
    bool have_n = false;
    bool have_truth = false;
    bool have_init = false;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        line_no++;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto tok = split_ws(line);
        if (tok.empty() || tok[0][0] == '#') continue;

        if (tok[0] == "n_points") {
            if (tok.size() != 2) bad_line("n_points wants one integer", line_no);
            bool ok = false;
            long long v = parse_int(tok[1], ok);
            if (!ok || v < 1) bad_line("bad n_points value", line_no);
            p.n_points = static_cast<int>(v);
            have_n = true;
            continue;
        }
        if (tok[0] == "seed") {
            if (tok.size() != 2) bad_line("seed wants one integer", line_no);
            bool ok = false;
            long long v = parse_int(tok[1], ok);
            if (!ok || v < 0) bad_line("bad seed value", line_no);
            p.seed = static_cast<std::uint64_t>(v);
            continue;
        }
        if (!have_n) bad_line("n_points header must appear before data lines", line_no);

        auto want_id = [&](std::string_view t) {
            bool ok = false;
            long long v = parse_int(t, ok);
            if (!ok || v < 0 || v >= p.n_points) bad_line("point id out of range", line_no);
            return static_cast<int>(v);
        };
        auto want_double = [&](std::string_view t) {
            bool ok = false;
            double v = parse_double(t, ok);
            if (!ok) bad_line("bad numeric field", line_no);
            return v;
        };

        if (tok[0] == "point" || tok[0] == "init") {
            if (tok.size() != 4) bad_line("point/init wants id x y", line_no);
            int id = want_id(tok[1]);
            double vx = want_double(tok[2]);
            double vy = want_double(tok[3]);
            if (tok[0] == "point") {
                if (!have_truth) {
                    p.true_coords.assign(2 * static_cast<size_t>(p.n_points), 0.0);
                    have_truth = true;
                }
                p.true_coords[2 * static_cast<size_t>(id)] = vx;
                p.true_coords[2 * static_cast<size_t>(id) + 1] = vy;
            } else {
                if (!have_init) {
                    p.initial_guess.assign(2 * static_cast<size_t>(p.n_points), 0.0);
                    have_init = true;
                }
                p.initial_guess[2 * static_cast<size_t>(id)] = vx;
                p.initial_guess[2 * static_cast<size_t>(id) + 1] = vy;
            }
            continue;
        }
        if (tok[0] == "obs") {
            if (tok.size() < 2) bad_line("obs wants a kind", line_no);
            Observation o;
            if (tok[1] == "distance") o.kind = ObsKind::Distance;
            else if (tok[1] == "angle") o.kind = ObsKind::Angle;
            else if (tok[1] == "pointline") o.kind = ObsKind::PointLine;
            else if (tok[1] == "coordx") o.kind = ObsKind::CoordX;
            else if (tok[1] == "coordy") o.kind = ObsKind::CoordY;
            else bad_line("unknown observation kind", line_no);
            int np = o.point_count();
            if (static_cast<int>(tok.size()) != 2 + np + 2)
                bad_line("wrong field count for observation", line_no);
            for (int k = 0; k < np; k++) o.points[k] = want_id(tok[2 + k]);
            o.value = want_double(tok[2 + np]);
            o.sigma = want_double(tok[3 + np]);
            if (!(o.sigma > 0.0)) bad_line("sigma must be positive", line_no);
            if (o.kind == ObsKind::Angle || o.kind == ObsKind::PointLine) {
                if (o.points[0] == o.points[1] || o.points[1] == o.points[2] ||
                    o.points[0] == o.points[2])
                    bad_line("observation needs distinct points", line_no);
            } else if (o.kind == ObsKind::Distance && o.points[0] == o.points[1]) {
                bad_line("observation needs distinct points", line_no);
            }
            p.observations.push_back(o);
            continue;
        }
        bad_line("unknown directive '" + std::string(tok[0]) + "'", line_no);
    }
    if (!have_n) throw ParseError("missing n_points header", 0);
    if (!have_truth) p.true_coords.clear();

    if (!have_init) {
        // fall back to coordinate-observation values, the generator's layout
        p.initial_guess.assign(2 * static_cast<size_t>(p.n_points), 0.0);
        for (const Observation& o : p.observations) {
            if (o.kind == ObsKind::CoordX)
                p.initial_guess[2 * static_cast<size_t>(o.points[0])] = o.value;
            else if (o.kind == ObsKind::CoordY)
                p.initial_guess[2 * static_cast<size_t>(o.points[0]) + 1] = o.value;
        }
    }
    return p;
}

} // namespace lmsq
