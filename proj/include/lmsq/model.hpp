#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lmsq/sparse.hpp"

namespace lmsq {

// 2-D network adjustment. Unknowns are point coordinates, stored as
// x = (x_0, y_0, x_1, y_1, ...), so point p owns variables 2p and 2p+1.

enum class ObsKind { Distance, Angle, PointLine, CoordX, CoordY };

struct Observation {
    ObsKind kind;
    int points[3] = {-1, -1, -1};
    double value = 0.0;
    double sigma = 1.0;

    int point_count() const {
        switch (kind) {
        case ObsKind::Distance: return 2;
        case ObsKind::Angle:
        case ObsKind::PointLine: return 3;
        default: return 1;
        }
    }
};

struct Problem {
    int n_points = 0;
    std::uint64_t seed = 0;
    std::vector<Observation> observations;
    std::vector<double> true_coords;   // 2*n_points, empty if unknown
    std::vector<double> initial_guess; // 2*n_points

    int n_vars() const { return 2 * n_points; }
    int n_obs() const { return static_cast<int>(observations.size()); }
};

// Unweighted misfit of one observation at coordinates x (size 2*n_points).
// Angle residuals are wrapped into (-pi, pi]. obs_index only labels errors.
double raw_residual(const Observation& obs, const double* x, int obs_index = -1);

// wrap into (-pi, pi]
double wrap_angle(double a);

struct Evaluation {
    std::vector<double> residuals; // weighted, raw/sigma, one per observation
    SparseMatrix jacobian;         // m x 2n, rows in the same order
};

// Rows appear in the order given by `order` (a permutation of observation
// indices); identity order when empty. Row r of the result corresponds to
// observation order[r]. Thread counts > 1 change nothing but wall time.
Evaluation evaluate(const Problem& p, const std::vector<double>& x,
                    const std::vector<int>& order = {}, int n_threads = 1);
std::vector<double> residuals_only(const Problem& p, const std::vector<double>& x,
                                   const std::vector<int>& order = {},
                                   int n_threads = 1);

double objective(const std::vector<double>& residuals); // 0.5 * ||R||^2

// Synthetic instance: n points sampled from a square grid, local distance /
// angle / point-to-line observations added until the mean point degree
// reaches 6, then per-point coordinate observations (1% tight anchors, the
// rest loose) whose noisy values double as the initial guess. Very small
// instances widen the neighborhood radius so the degree target stays
// reachable.
inline constexpr double kGridSpacing = 100.0;
inline constexpr double kLocalRadius = 3.0 * kGridSpacing;
inline constexpr double kSigmaDistance = 0.01;
inline constexpr double kSigmaLine = 0.01;
inline constexpr double kSigmaAngle = 0.017453292519943295; // one degree
inline constexpr double kSigmaAnchor = 0.01;
inline constexpr double kSigmaLoose = 1.0;

Problem generate_problem(int n_points, std::uint64_t seed);

void write_problem(const Problem& p, const std::string& path);
Problem read_problem(const std::string& path);

const char* obs_kind_name(ObsKind k);

} // namespace lmsq
