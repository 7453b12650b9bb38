#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lmsq/solver.hpp"

namespace lmsq {

// exit codes shared by the command implementations
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNotConverged = 3;
inline constexpr int kExitIoOrNumerical = 4;

inline constexpr const char* kIterationCsvHeader =
    "iter,F,grad_norm,mu,beta,gamma,t,ell,rho,backtracks,wall_ms";
inline constexpr const char* kBenchCsvHeader =
    "n,N,m,K,seed,status,iters,time_ms,final_F,cut_fraction,beta_zero";

struct GenerateArgs {
    int n = 0;
    std::uint64_t seed = 0;
    std::string out;
};

struct SolveArgs {
    std::string problem;
    int k = 1;
    std::uint64_t seed = 0;
    SolverConfig cfg;
    std::string log; // iteration CSV path, empty to skip
    bool quiet = false;
};

struct BenchArgs {
    std::vector<int> sizes;
    std::vector<int> ks;
    std::vector<std::uint64_t> seeds;
    std::string out_csv;
    SolverConfig cfg;
};

struct PartitionStatsArgs {
    std::string problem;
    int k = 1;
    std::uint64_t seed = 0;
};

int cmd_generate(const GenerateArgs& a);
int cmd_solve(const SolveArgs& a);
int cmd_bench(const BenchArgs& a);
int cmd_partition_stats(const PartitionStatsArgs& a);

std::string iteration_csv(const std::vector<IterationRecord>& records);

} // namespace lmsq
