#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lmsq/model.hpp"
#include "lmsq/partition.hpp"
#include "lmsq/sparse.hpp"

namespace lmsq {

struct SolverConfig {
    double b = 0.8;       // coupling bound parameter, in (0,1)
    double c = 1e-4;      // Armijo constant, in (0,1)
    double eta = 0.25;    // reduction-ratio threshold, in [0,1)
    double ell0 = 1.0;    // initial damping scale
    double ell_min = 1e-4;
    int max_iters = 200;
    int max_backtracks = 60;
    bool beta_zero = false;  // ablation: drop the coupling correction
    bool diagnostics = false; // fill rho and the extra record fields
    bool mu_norm_bound = false; // damping from the norm-based bound (see compute_mu)
    int threads = 1;
};

struct IterationRecord {
    int iter = 0;
    double f = 0.0;         // objective at the start of the iteration
    double grad_norm = 0.0;
    double mu = 0.0;
    double beta = 0.0;
    double gamma = 1.0;
    double step = 0.0;      // accepted t
    double ell = 0.0;       // damping scale used this iteration
    double rho = 0.0;       // linear-system residual ratio, diagnostics only
    int backtracks = 0;
    double wall_ms = 0.0;
    // diagnostics extras, 0 unless SolverConfig::diagnostics
    double gd = 0.0;     // g^T d
    double d_norm = 0.0;
    double h_norm = 0.0; // power-iteration norm of the block-diagonal part
    double b_fro = 0.0;  // Frobenius norm of the coupling part
};

enum class SolveStatus { Converged, MaxIters, LineSearchFailure, NumericalError };
const char* status_name(SolveStatus s);

struct SolveReport {
    SolveStatus status = SolveStatus::MaxIters;
    std::vector<double> final_x;
    std::vector<IterationRecord> records;
    double final_f = 0.0;
    double fractions[3] = {0.0, 0.0, 0.0}; // |r| < 1, 2, 3 at final_x
    int iterations = 0;
    std::string message; // failure detail when status is an error
};

// Splitting of the Gauss-Newton matrix J^T J into per-subset diagonal blocks
// H_s plus the coupling remainder B (zero diagonal blocks).
struct BlockSystem {
    int k = 1;
    std::vector<SparseMatrix> h_blocks;
    SparseMatrix b_coupling; // N x N
    std::vector<double> g;   // J^T R
    std::vector<std::vector<double>> g_blocks;
    double max_diag = 0.0;   // max diagonal entry of J^T J
    const Partition* part = nullptr;
};

BlockSystem assemble_blocks(const SparseMatrix& jac,
                            const std::vector<double>& residuals,
                            const Partition& part);

// Damping value that provably keeps every step acceptable, built from the
// current norm estimates. Large by construction; kept as the provable
// fallback behind SolverConfig::mu_norm_bound while the default damping is
// the scaled rule used inside solve().
double compute_mu(double ell, double b, double norm_h, double norm_j, double norm_r);

struct BetaResult {
    double beta = 0.0;
    double gamma = 1.0;
    double beta_star = 0.0;     // unclamped minimizer
    double beta_max = 0.0;      // clamp bound, 0 when B is empty
    std::vector<double> u;      // B g
    std::vector<double> w_hat;  // (H + mu I)^{-1} g, block solves
    std::vector<double> v_hat;  // (H + mu I)^{-1} u, block solves
};

// Minimizes ||beta*(u+v) - w|| over beta, then clamps so that
// ||beta * B||_F <= b * mu / (||H|| + mu). gamma = 1 + |beta| * ||B||_F.
// The two inner block solves are returned for reuse by compute_direction.
BetaResult compute_beta(const BlockSystem& bs, const std::vector<SpdFactor>& factors,
                        double norm_h, double b_fro, double mu, double b);

// Direction of the split system (H_s + mu I) d_s = beta * (B g)_s - g_s,
// scattered into the global ordering. When the BetaResult carries the solves
// already done for the weight, the direction is their linear combination
// beta * v_hat - w_hat; otherwise the blocks are solved fresh (beta 0 path).
std::vector<double> compute_direction(const BlockSystem& bs,
                                      const std::vector<SpdFactor>& factors,
                                      const BetaResult& br, int threads = 1);

// P = 0.5||R||^2 - 0.5||R + J d||^2 - 0.5 mu ||d||^2
double predicted_reduction(const std::vector<double>& residuals,
                           const SparseMatrix& jac, const std::vector<double>& d,
                           double mu);

// ||g + (J^T J + mu I) d|| / ||g||, matrix-free
double linear_residual_rho(const SparseMatrix& jac, const std::vector<double>& g,
                           const std::vector<double>& d, double mu);

struct LineSearchResult {
    bool ok = false;
    double t = 0.0;
    double f_new = 0.0;
    int backtracks = 0;
    std::vector<double> x_new;
};

// Backtracking from t_max, halving until F(x + t d) <= F + c t g^T d.
// Trial points with non-finite or undefined residuals count as failures.
LineSearchResult line_search(const Problem& prob, const std::vector<double>& x,
                             const std::vector<double>& d, double f0, double gd,
                             double t_max, const SolverConfig& cfg,
                             const std::vector<int>& order);

// t < t_max: grow ell. Otherwise shrink ell (not below ell_min) when the
// actual reduction clears eta times the predicted one; else keep ell.
double update_ell(double ell, double t, double t_max, double a_red, double p_red,
                  double eta, double ell_min);

// 68 / 95 / 99.5 percent of weighted residuals within 1 / 2 / 3.
bool stopping_met(const std::vector<double>& weighted_residuals, double fracs[3]);

SolveReport solve(const Problem& prob, const Partition& part, const SolverConfig& cfg);

} // namespace lmsq
