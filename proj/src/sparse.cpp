#include "lmsq/sparse.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdio>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lmsq {

double SparseMatrix::at(int r, int c) const {
    if (r < 0 || r >= n_rows || c < 0 || c >= n_cols)
        throw DimensionError("SparseMatrix::at out of range");
    for (int k = row_offsets[r]; k < row_offsets[r + 1]; k++) {
        if (col_indices[k] == c) return values[k];
        if (col_indices[k] > c) break;
    }
    return 0.0;
}

SparseMatrix csr_from_triplets(int n_rows, int n_cols, std::vector<Triplet> entries) {
    if (n_rows < 0 || n_cols < 0)
        throw DimensionError("csr_from_triplets: negative dimension");
    for (const Triplet& t : entries) {
        if (t.row < 0 || t.row >= n_rows || t.col < 0 || t.col >= n_cols)
            throw DimensionError("csr_from_triplets: entry out of range");
    }
    std::stable_sort(entries.begin(), entries.end(),
                     [](const Triplet& a, const Triplet& b) {
                         if (a.row != b.row) return a.row < b.row;
                         return a.col < b.col;
                     });

    SparseMatrix m;
    m.n_rows = n_rows;
    m.n_cols = n_cols;
    m.row_offsets.assign(static_cast<size_t>(n_rows) + 1, 0);
    m.col_indices.reserve(entries.size());
    m.values.reserve(entries.size());

    size_t i = 0;
    for (int r = 0; r < n_rows; r++) {
        while (i < entries.size() && entries[i].row == r) {
            int c = entries[i].col;
            double v = entries[i].value;
            i++;
            while (i < entries.size() && entries[i].row == r && entries[i].col == c) {
                v += entries[i].value; // merge duplicates in input order
                i++;
            }
            if (v != 0.0) {
                m.col_indices.push_back(c);
                m.values.push_back(v);
            }
        }
        m.row_offsets[static_cast<size_t>(r) + 1] = static_cast<int>(m.values.size());
    }
    return m;
}

SparseMatrix csr_identity(int n) {
    SparseMatrix m;
    m.n_rows = m.n_cols = n;
    m.row_offsets.resize(static_cast<size_t>(n) + 1);
    m.col_indices.resize(n);
    m.values.assign(n, 1.0);
    for (int i = 0; i <= n; i++) m.row_offsets[i] = i;
    for (int i = 0; i < n; i++) m.col_indices[i] = i;
    return m;
}

void spmv_into(const SparseMatrix& a, const double* x, double* y, int n_threads) {
    const int* off = a.row_offsets.data();
    const int* col = a.col_indices.data();
    const double* val = a.values.data();
    const int n = a.n_rows;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(n_threads > 0 ? n_threads : 1) \
    if (n_threads > 1)
#endif
    for (int r = 0; r < n; r++) {
        double s = 0.0;
        for (int k = off[r]; k < off[r + 1]; k++) s += val[k] * x[col[k]];
        y[r] = s;
    }
}

std::vector<double> spmv(const SparseMatrix& a, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != a.n_cols)
        throw DimensionError("spmv: size mismatch");
    std::vector<double> y(a.n_rows);
    spmv_into(a, x.data(), y.data(), 1);
    return y;
}

std::vector<double> spmv_transpose(const SparseMatrix& a, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != a.n_rows)
        throw DimensionError("spmv_transpose: size mismatch");
    std::vector<double> y(a.n_cols, 0.0);
    for (int r = 0; r < a.n_rows; r++) {
        double xr = x[r];
        for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; k++)
            y[a.col_indices[k]] += a.values[k] * xr;
    }
    return y;
}

double frobenius_norm(const SparseMatrix& a) {
    double s = 0.0;
    for (double v : a.values) s += v * v;
    return std::sqrt(s);
}

double sym_norm_bound(const SparseMatrix& a) {
    double best = 0.0;
    for (int r = 0; r < a.n_rows; r++) {
        double row = 0.0;
        for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; k++)
            row += std::abs(a.values[k]);
        best = std::max(best, row);
    }
    return best;
}

double spectral_norm_est(const SparseMatrix& a, int iters, double tol) {
    if (a.n_rows != a.n_cols)
        throw DimensionError("spectral_norm_est: matrix not square");
    int n = a.n_rows;
    if (n == 0 || a.empty()) return 0.0;

#ifndef NDEBUG
    // spot-check symmetry on a few stored entries
    for (int r = 0; r < n; r += (n / 7) + 1) {
        int k0 = a.row_offsets[r];
        int k1 = a.row_offsets[r + 1];
        if (k0 < k1) {
            int c = a.col_indices[k0];
            assert(std::abs(a.values[k0] - a.at(c, r)) <=
                   1e-9 * (1.0 + std::abs(a.values[k0])));
        }
    }
#endif

    std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n)));
    std::vector<double> w(n);
    double est = 0.0;
    for (int it = 0; it < iters; it++) {
        spmv_into(a, v.data(), w.data(), 1);
        double nw = 0.0;
        for (double wi : w) nw += wi * wi;
        nw = std::sqrt(nw);
        if (nw == 0.0) return 0.0; // v in null space; symmetric A with Av=0
        double prev = est;
        est = nw;
        for (int i = 0; i < n; i++) v[i] = w[i] / nw;
        if (it > 0 && std::abs(est - prev) <= tol * est) break;
    }
    return std::max(est, 0.0);
}

namespace {

// Left-looking dense Cholesky, lower factor in place. The i-loop for a fixed
// column writes disjoint rows, so it parallelizes without changing results.
void dense_cholesky(std::vector<double>& a, int n, double mu, int n_threads) {
    (void)n_threads;
    for (int j = 0; j < n; j++) {
        double* rowj = a.data() + static_cast<size_t>(j) * n;
        double d = rowj[j];
        for (int k = 0; k < j; k++) d -= rowj[k] * rowj[k];
        if (!(d > 0.0) || !std::isfinite(d))
            throw FactorizationError("cholesky: non-positive pivot", -1, d);
        double ljj = std::sqrt(d);
        rowj[j] = ljj;
        double inv = 1.0 / ljj;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(n_threads > 0 ? n_threads : 1) \
    if (n_threads > 1 && n - j > 256)
#endif
        for (int i = j + 1; i < n; i++) {
            double* rowi = a.data() + static_cast<size_t>(i) * n;
            double s = rowi[j];
            for (int k = 0; k < j; k++) s -= rowi[k] * rowj[k];
            rowi[j] = s * inv;
        }
    }
    (void)mu;
}

std::vector<double> cholesky_solve(const std::vector<double>& l, int n,
                                   const std::vector<double>& rhs) {
    std::vector<double> x(rhs);
    for (int i = 0; i < n; i++) {
        const double* row = l.data() + static_cast<size_t>(i) * n;
        double s = x[i];
        for (int k = 0; k < i; k++) s -= row[k] * x[k];
        x[i] = s / row[i];
    }
    for (int i = n - 1; i >= 0; i--) {
        double s = x[i];
        for (int k = i + 1; k < n; k++)
            s -= l[static_cast<size_t>(k) * n + i] * x[k];
        x[i] = s / l[static_cast<size_t>(i) * n + i];
    }
    return x;
}

SparseMatrix add_shift(const SparseMatrix& h, double mu) {
    // H + mu I with every diagonal entry guaranteed stored
    SparseMatrix m;
    m.n_rows = h.n_rows;
    m.n_cols = h.n_cols;
    m.row_offsets.assign(static_cast<size_t>(h.n_rows) + 1, 0);
    m.col_indices.reserve(h.col_indices.size() + h.n_rows);
    m.values.reserve(h.values.size() + h.n_rows);
    for (int r = 0; r < h.n_rows; r++) {
        bool diag_done = false;
        for (int k = h.row_offsets[r]; k < h.row_offsets[r + 1]; k++) {
            int c = h.col_indices[k];
            if (!diag_done && c >= r) {
                if (c == r) {
                    m.col_indices.push_back(r);
                    m.values.push_back(h.values[k] + mu);
                } else {
                    m.col_indices.push_back(r);
                    m.values.push_back(mu);
                    m.col_indices.push_back(c);
                    m.values.push_back(h.values[k]);
                }
                diag_done = true;
                continue;
            }
            m.col_indices.push_back(c);
            m.values.push_back(h.values[k]);
        }
        if (!diag_done) {
            m.col_indices.push_back(r);
            m.values.push_back(mu);
        }
        m.row_offsets[static_cast<size_t>(r) + 1] = static_cast<int>(m.values.size());
    }
    return m;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); i++) s += a[i] * b[i];
    return s;
}

} // namespace

SpdFactor spd_factorize(const SparseMatrix& h, double mu, int n_threads) {
    if (h.n_rows != h.n_cols)
        throw DimensionError("spd_factorize: block not square");
    if (!(mu > 0.0))
        throw FactorizationError("spd_factorize: mu must be positive", -1, mu);

    SpdFactor f;
    f.dim = h.n_rows;
    f.mu = mu;
    f.dense = h.n_rows <= kDenseDirectLimit;
    if (f.dense) {
        int n = h.n_rows;
        f.chol.assign(static_cast<size_t>(n) * n, 0.0);
        for (int r = 0; r < n; r++) {
            for (int k = h.row_offsets[r]; k < h.row_offsets[r + 1]; k++)
                f.chol[static_cast<size_t>(r) * n + h.col_indices[k]] = h.values[k];
            f.chol[static_cast<size_t>(r) * n + r] += mu;
        }
        dense_cholesky(f.chol, n, mu, n_threads);
    } else {
        f.shifted = add_shift(h, mu);
        f.inv_diag.assign(f.dim, 0.0);
        for (int r = 0; r < f.dim; r++) {
            double d = f.shifted.at(r, r);
            if (!(d > 0.0))
                throw FactorizationError("spd_factorize: non-positive diagonal", -1, d);
            f.inv_diag[r] = 1.0 / d;
        }
    }
    return f;
}

std::vector<double> spd_solve(const SpdFactor& f, const std::vector<double>& rhs) {
    if (static_cast<int>(rhs.size()) != f.dim)
        throw DimensionError("spd_solve: rhs size mismatch");
    if (f.dense) return cholesky_solve(f.chol, f.dim, rhs);

    // Jacobi-preconditioned CG; everything sequential so repeated solves are
    // bitwise identical.
    int n = f.dim;
    double nb = std::sqrt(dot(rhs, rhs));
    std::vector<double> x(n, 0.0);
    if (nb == 0.0) return x;

    std::vector<double> r(rhs);
    std::vector<double> z(n), p(n), q(n);
    for (int i = 0; i < n; i++) z[i] = r[i] * f.inv_diag[i];
    p = z;
    double rz = dot(r, z);
    const double target = kSpdSolveTol * nb;
    const long max_it = 10L * n;

    for (long it = 0; it < max_it; it++) {
        spmv_into(f.shifted, p.data(), q.data(), 1);
        double pq = dot(p, q);
        if (!(pq > 0.0))
            throw FactorizationError("spd_solve: pcg breakdown", -1, pq);
        double alpha = rz / pq;
        for (int i = 0; i < n; i++) x[i] += alpha * p[i];
        for (int i = 0; i < n; i++) r[i] -= alpha * q[i];
        double nr = std::sqrt(dot(r, r));
        if (nr <= target) {
            // recurrence residual can drift; confirm with the true residual
            spmv_into(f.shifted, x.data(), q.data(), 1);
            double tr = 0.0;
            for (int i = 0; i < n; i++) {
                double d = q[i] - rhs[i];
                tr += d * d;
            }
            if (std::sqrt(tr) <= target) return x;
            for (int i = 0; i < n; i++) r[i] = rhs[i] - q[i];
            nr = std::sqrt(dot(r, r));
        }
        for (int i = 0; i < n; i++) z[i] = r[i] * f.inv_diag[i];
        double rz_next = dot(r, z);
        double beta = rz_next / rz;
        rz = rz_next;
        for (int i = 0; i < n; i++) p[i] = z[i] + beta * p[i];
    }
    throw FactorizationError("spd_solve: pcg did not reach tolerance", -1, 0.0);
}

} // namespace lmsq
