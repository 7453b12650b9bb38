#pragma once

#include <cstdint>
#include <vector>

#include "lmsq/errors.hpp"

namespace lmsq {

// Compressed sparse row. Column indices are strictly increasing within each
// row; duplicates are merged and exact zeros dropped at build time.
struct SparseMatrix {
    int n_rows = 0;
    int n_cols = 0;
    std::vector<int> row_offsets; // size n_rows + 1
    std::vector<int> col_indices;
    std::vector<double> values;

    int nnz() const { return static_cast<int>(values.size()); }
    bool empty() const { return values.empty(); }
    double at(int r, int c) const; // 0.0 if not stored
};

struct Triplet {
    int row;
    int col;
    double value;
};

SparseMatrix csr_from_triplets(int n_rows, int n_cols, std::vector<Triplet> entries);
SparseMatrix csr_identity(int n);

// y = A x. The *_into form writes y (size n_rows) and takes a thread count;
// rows are independent so the result is bitwise identical for any n_threads.
std::vector<double> spmv(const SparseMatrix& a, const std::vector<double>& x);
void spmv_into(const SparseMatrix& a, const double* x, double* y, int n_threads = 1);

// y = A^T x, sequential by construction (scatter adds must not be reordered).
std::vector<double> spmv_transpose(const SparseMatrix& a, const std::vector<double>& x);

double frobenius_norm(const SparseMatrix& a);

// Power iteration estimate of ||A||_2 for square symmetric A. Fixed start
// vector (all ones), at most `iters` products, stops early when the estimate
// moves by less than tol relatively. Never negative.
double spectral_norm_est(const SparseMatrix& a, int iters = 50, double tol = 1e-6);

// Max row sum of |a_ij|: the infinity norm, an upper bound on ||A||_2 for
// symmetric A. One pass over the values, no iteration.
double sym_norm_bound(const SparseMatrix& a);

// Factorization of (H + mu I) for an SPD block H. Dimension at most
// kDenseDirectLimit gets a dense Cholesky; larger blocks use Jacobi-PCG at
// solve time. Both paths are bitwise deterministic for fixed inputs.
inline constexpr int kDenseDirectLimit = 1024;
inline constexpr double kSpdSolveTol = 1e-10;

struct SpdFactor {
    int dim = 0;
    double mu = 0.0;
    bool dense = false;
    std::vector<double> chol;  // dense path: lower factor, row-major dim*dim
    SparseMatrix shifted;      // pcg path: H + mu I
    std::vector<double> inv_diag; // pcg path: Jacobi preconditioner
};

SpdFactor spd_factorize(const SparseMatrix& h, double mu, int n_threads = 1);

// Solves (H + mu I) x = rhs to relative residual <= kSpdSolveTol.
std::vector<double> spd_solve(const SpdFactor& f, const std::vector<double>& rhs);

} // namespace lmsq
