#pragma once

#include <cstdint>
#include <vector>

#include "lmsq/model.hpp"

namespace lmsq {

// Interaction graph over points: an edge joins two points that share at
// least one observation. Adjacency lists are sorted and deduplicated.
struct VariableGraph {
    int n_nodes = 0;
    std::vector<std::vector<int>> adjacency;
    long n_edges = 0;
};

VariableGraph build_variable_graph(const Problem& p);

// Labels each node with a subset id in [0, k). Recursive bisection: BFS level
// split from a pseudo-peripheral node, then greedy boundary refinement
// (at most 10 sweeps, cut never increases). Deterministic for fixed inputs.
std::vector<int> partition_kway(const VariableGraph& g, int k, std::uint64_t seed);

// Observation classification induced by a point partition.
struct Partition {
    int k = 1;
    std::vector<int> subset_of_point;
    std::vector<std::vector<int>> subset_points; // ascending point ids
    std::vector<std::vector<int>> subset_vars;   // ascending variable ids
    std::vector<std::vector<int>> internal_obs;  // per subset, original order
    std::vector<int> coupling_obs;               // original order
    std::vector<int> row_order; // internal obs grouped by subset, coupling last
    double cut_fraction = 0.0;  // coupling observations / total observations
};

Partition classify_residuals(const Problem& p, const std::vector<int>& labels, int k);

// graph build + partition_kway + classify_residuals
Partition partition_problem(const Problem& p, int k, std::uint64_t seed);

struct PartitionStats {
    int k = 1;
    long n_edges = 0;
    long cut_edges = 0;
    double cut_fraction = 0.0; // share of coupling observations
    std::vector<int> subset_sizes;
    std::vector<long> internal_counts;
    long coupling_count = 0;
    std::vector<double> subset_objective; // 0.5 * sum of squared internal residuals
    double coupling_objective = 0.0;
};

PartitionStats partition_stats(const Problem& p, const std::vector<double>& x,
                               const Partition& part, const VariableGraph& g);

} // namespace lmsq
