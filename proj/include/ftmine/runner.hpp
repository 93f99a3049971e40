#pragma once

#include "ftmine/dataset.hpp"
#include "ftmine/errors.hpp"
#include "ftmine/fabric.hpp"
#include "ftmine/metrics.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ftmine::runner {

enum class Algo { FpGrowth, Knn };
enum class FtMode { None, Dft, Smft, Amft };
enum class KnnRecoveryMode { Opr, Ppr };

const char* algo_name(Algo a);
const char* ft_name(FtMode m);
Algo algo_from_string(const std::string& s);
FtMode ft_from_string(const std::string& s);
KnnRecoveryMode knn_recovery_from_string(const std::string& s);

struct RunConfig {
    Algo algo = Algo::FpGrowth;
    FtMode ft = FtMode::None;
    int procs = 2;
    double theta = 0.1;            // fpgrowth support fraction
    std::size_t k = 3;             // knn neighbor count
    std::uint64_t checkpoints = 4;  // C
    std::vector<std::pair<int, double>> fail_at;  // (rank, progress fraction)
    std::uint64_t seed = 0;
    std::string data_path;
    std::string out_path;
    KnnRecoveryMode knn_recovery = KnnRecoveryMode::Opr;
    double test_fraction = 0.25;  // leading share of the point file used as queries
    std::string ckpt_dir;         // DFT checkpoint root (defaults beside out_path)
    double disk_latency_ms = 0.0;
    bool trace = false;

    void validate() const;  // throws UsageError
    std::string effective_ckpt_dir() const;
};

struct Metrics {
    double total_s = 0.0;
    double checkpoint_s = 0.0;
    double recovery_s = 0.0;
    std::uint64_t bytes_checkpointed = 0;
    std::uint64_t disk_reads = 0;       // failed-shard records read during recovery
    std::uint64_t disk_read_calls = 0;  // recovery read operations (incl. tree loads)
    std::uint64_t peak_ckpt_bytes_per_rank = 0;
    std::uint64_t output_checksum = 0;
    std::uint64_t complete_checkpoints = 0;
    std::uint64_t partial_checkpoints = 0;
    std::uint64_t skipped_checkpoints = 0;
    bool degraded = false;
    std::vector<std::string> recovery_log;
    std::vector<std::uint64_t> redistribution;
    std::vector<metrics::Registry::Space> space;  // per-rank AMFT accounting
};

struct RunResult {
    Metrics metrics;
    std::vector<fabric::TraceEvent> trace;
};

RunResult run_experiment(const RunConfig& config);

// Fault schedule derivation: FP fractions trigger on processed
// transactions; KNN fractions map to completed ring iterations
// (floor(frac * P), 0 meaning before the first iteration).
fabric::FaultSchedule build_schedule(const RunConfig& config);

struct BenchSpec {
    Algo algo = Algo::FpGrowth;
    std::string data_path;
    std::vector<int> procs{4};
    std::vector<FtMode> fts{FtMode::None, FtMode::Dft, FtMode::Smft, FtMode::Amft};
    std::vector<double> thetas{0.1};
    std::vector<std::size_t> ks{3};
    std::vector<double> fail_fracs;  // faults injected at rank 1; empty = fault-free only
    std::uint64_t checkpoints = 4;
    std::uint64_t seed = 0;
    double disk_latency_ms = 0.0;
    KnnRecoveryMode knn_recovery = KnnRecoveryMode::Opr;
    double test_fraction = 0.25;
    std::string work_dir = ".";  // result files land here
};

// Runs the sweep; returns the CSV (schema:
// algo,ft,p,theta_or_k,fault,total_time,ckpt_time,rec_time,bytes,peak_bytes,checksum)
// and appends a fault-free overhead summary per cell to `summary`.
std::string bench(const BenchSpec& spec, std::string* summary);

}  // namespace ftmine::runner
