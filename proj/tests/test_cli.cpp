#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lmsq/cli.hpp"
#include "lmsq/model.hpp"

using namespace lmsq;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("lmsq_cli_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) out.push_back(line);
    return out;
}

// blank out one comma-separated column in every data row
std::string drop_column(const std::string& text, size_t col) {
    std::ostringstream out;
    for (const std::string& line : lines_of(text)) {
        std::istringstream ss(line);
        std::string field;
        size_t i = 0;
        bool first = true;
        while (std::getline(ss, field, ',')) {
            if (!first) out << ',';
            out << (i == col ? "_" : field);
            first = false;
            i++;
        }
        out << '\n';
    }
    return out.str();
}

} // namespace

TEST_CASE("generate writes a parseable problem file") {
    TempDir tmp;
    GenerateArgs a;
    a.n = 64;
    a.seed = 5;
    a.out = tmp.file("p64.txt");
    CHECK(cmd_generate(a) == kExitOk);

    Problem p = read_problem(a.out);
    CHECK(p.n_points == 64);
    CHECK(p.seed == 5);
    Problem direct = generate_problem(64, 5);
    CHECK(p.observations.size() == direct.observations.size());
    CHECK(p.initial_guess == direct.initial_guess);
}

TEST_CASE("generate rejects bad arguments") {
    TempDir tmp;
    GenerateArgs a;
    a.n = 8; // below the minimum problem size
    a.out = tmp.file("x.txt");
    CHECK(cmd_generate(a) == kExitUsage);

    GenerateArgs b;
    b.n = 64;
    b.out = tmp.file("no_such_dir/x.txt");
    CHECK(cmd_generate(b) == kExitIoOrNumerical);
}

TEST_CASE("solve runs end to end and logs iterations") {
    TempDir tmp;
    GenerateArgs g;
    g.n = 200;
    g.seed = 1;
    g.out = tmp.file("p.txt");
    REQUIRE(cmd_generate(g) == kExitOk);

    SolveArgs s;
    s.problem = g.out;
    s.k = 4;
    s.seed = 1;
    s.log = tmp.file("log.csv");
    s.quiet = true;
    CHECK(cmd_solve(s) == kExitOk);

    std::string text = slurp(s.log);
    auto rows = lines_of(text);
    REQUIRE(rows.size() >= 2);
    CHECK(rows[0] == kIterationCsvHeader);
    // one data row per iteration, first column counts from 1
    std::istringstream first(rows[1]);
    std::string tok;
    std::getline(first, tok, ',');
    CHECK(tok == "1");

    SUBCASE("rerun is identical apart from wall time") {
        SolveArgs s2 = s;
        s2.log = tmp.file("log2.csv");
        CHECK(cmd_solve(s2) == kExitOk);
        std::string text2 = slurp(s2.log);
        CHECK(drop_column(text, 10) == drop_column(text2, 10));
        CHECK(lines_of(text).size() == lines_of(text2).size());
    }
}

TEST_CASE("solve error paths") {
    TempDir tmp;
    SolveArgs s;
    s.problem = tmp.file("missing.txt");
    s.quiet = true;
    CHECK(cmd_solve(s) == kExitIoOrNumerical);

    SUBCASE("malformed file") {
        std::ofstream out(tmp.file("bad.txt"));
        out << "n_points 10\npoint 0 not_a_number 2.0\n";
        out.close();
        SolveArgs b;
        b.problem = tmp.file("bad.txt");
        b.quiet = true;
        CHECK(cmd_solve(b) == kExitIoOrNumerical);
    }
    SUBCASE("subset count out of range") {
        GenerateArgs g;
        g.n = 32;
        g.out = tmp.file("p.txt");
        REQUIRE(cmd_generate(g) == kExitOk);
        SolveArgs b;
        b.problem = g.out;
        b.k = 0;
        b.quiet = true;
        CHECK(cmd_solve(b) == kExitUsage);
    }
    SUBCASE("iteration cap reports non-convergence") {
        GenerateArgs g;
        g.n = 200;
        g.seed = 2;
        g.out = tmp.file("p2.txt");
        REQUIRE(cmd_generate(g) == kExitOk);
        SolveArgs b;
        b.problem = g.out;
        b.k = 2;
        b.cfg.max_iters = 1;
        b.quiet = true;
        CHECK(cmd_solve(b) == kExitNotConverged);
    }
}

TEST_CASE("bench sweeps sizes and subset counts") {
    TempDir tmp;
    BenchArgs a;
    a.sizes = {64, 100};
    a.ks = {1, 2};
    a.seeds = {1};
    a.out_csv = tmp.file("bench.csv");
    CHECK(cmd_bench(a) == kExitOk);

    std::string text = slurp(a.out_csv);
    auto rows = lines_of(text);
    REQUIRE(rows.size() == 1 + 2 * 2);
    CHECK(rows[0] == kBenchCsvHeader);
    for (size_t i = 1; i < rows.size(); i++) {
        std::istringstream ss(rows[i]);
        std::string field;
        int count = 0;
        while (std::getline(ss, field, ',')) count++;
        CHECK(count == 11);
    }

    SUBCASE("rerun matches apart from timing") {
        BenchArgs b = a;
        b.out_csv = tmp.file("bench2.csv");
        CHECK(cmd_bench(b) == kExitOk);
        CHECK(drop_column(text, 7) == drop_column(slurp(b.out_csv), 7));
    }
}

TEST_CASE("partition stats command succeeds on a generated problem") {
    TempDir tmp;
    GenerateArgs g;
    g.n = 100;
    g.seed = 3;
    g.out = tmp.file("p.txt");
    REQUIRE(cmd_generate(g) == kExitOk);

    PartitionStatsArgs a;
    a.problem = g.out;
    a.k = 4;
    CHECK(cmd_partition_stats(a) == kExitOk);

    PartitionStatsArgs bad;
    bad.problem = tmp.file("nope.txt");
    bad.k = 2;
    CHECK(cmd_partition_stats(bad) == kExitIoOrNumerical);
}

TEST_CASE("iteration csv formatting") {
    IterationRecord r;
    r.iter = 1;
    r.f = 0.5;
    r.grad_norm = 2.0;
    r.mu = 1.0;
    r.beta = 0.25;
    r.gamma = 1.25;
    r.step = 1.0;
    r.ell = 2.0;
    r.rho = 0.0;
    r.backtracks = 0;
    r.wall_ms = 3.5;
    std::string text = iteration_csv({r});
    auto rows = lines_of(text);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0] == kIterationCsvHeader);
    CHECK(rows[1] == "1,0.5,2,1,0.25,1.25,1,2,0,0,3.5");
}
