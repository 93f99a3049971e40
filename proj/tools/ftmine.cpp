#include "ftmine/dataset.hpp"
#include "ftmine/errors.hpp"
#include "ftmine/oracle.hpp"
#include "ftmine/runner.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace ftmine;

std::vector<std::pair<int, double>> parse_fail_specs(const std::vector<std::string>& specs) {
    std::vector<std::pair<int, double>> out;
    for (const auto& s : specs) {
        auto at = s.find('@');
        if (at == std::string::npos) {
            throw UsageError("--fail expects rank@fraction, got: " + s);
        }
        try {
            out.emplace_back(std::stoi(s.substr(0, at)), std::stod(s.substr(at + 1)));
        } catch (const std::exception&) {
            throw UsageError("--fail expects rank@fraction, got: " + s);
        }
    }
    return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& csv, T (*conv)(const std::string&)) {
    std::vector<T> out;
    std::istringstream in(csv);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        if (!tok.empty()) {
            out.push_back(conv(tok));
        }
    }
    return out;
}

int run_gen(const std::string& algo, std::uint64_t n, std::uint32_t items, std::uint32_t len_lo,
            std::uint32_t len_hi, double zipf, std::uint32_t dims, std::uint64_t seed,
            const std::string& out) {
    if (runner::algo_from_string(algo) == runner::Algo::FpGrowth) {
        dataset::TransactionFile::GenParams p;
        p.n_trans = n;
        p.n_items = items;
        p.len_lo = len_lo;
        p.len_hi = len_hi;
        p.seed = seed;
        p.zipf_s = zipf;
        dataset::TransactionFile::generate(out, p);
        std::printf("wrote %s: %llu transactions, %u items, checksum %016llx\n", out.c_str(),
                    static_cast<unsigned long long>(n), items,
                    static_cast<unsigned long long>(dataset::file_checksum(out)));
    } else {
        dataset::PointFile::generate(out, n, dims, seed);
        std::printf("wrote %s: %llu points, %u dims, checksum %016llx\n", out.c_str(),
                    static_cast<unsigned long long>(n), dims,
                    static_cast<unsigned long long>(dataset::file_checksum(out)));
    }
    return 0;
}

void print_metrics(const runner::RunConfig& cfg, const runner::Metrics& m) {
    std::printf("algo=%s ft=%s procs=%d %s=%g ckpts=%llu\n", runner::algo_name(cfg.algo),
                runner::ft_name(cfg.ft), cfg.procs,
                cfg.algo == runner::Algo::FpGrowth ? "support" : "k",
                cfg.algo == runner::Algo::FpGrowth ? cfg.theta : static_cast<double>(cfg.k),
                static_cast<unsigned long long>(cfg.checkpoints));
    std::printf("total_s=%.6f ckpt_s=%.6f recovery_s=%.6f\n", m.total_s, m.checkpoint_s,
                m.recovery_s);
    std::printf("bytes_checkpointed=%llu disk_reads=%llu disk_read_calls=%llu\n",
                static_cast<unsigned long long>(m.bytes_checkpointed),
                static_cast<unsigned long long>(m.disk_reads),
                static_cast<unsigned long long>(m.disk_read_calls));
    std::printf("ckpt_kinds complete=%llu partial=%llu skipped=%llu degraded=%d\n",
                static_cast<unsigned long long>(m.complete_checkpoints),
                static_cast<unsigned long long>(m.partial_checkpoints),
                static_cast<unsigned long long>(m.skipped_checkpoints), m.degraded ? 1 : 0);
    std::printf("peak_ckpt_bytes_per_rank=%llu\n",
                static_cast<unsigned long long>(m.peak_ckpt_bytes_per_rank));
    for (const auto& line : m.recovery_log) {
        std::printf("recovery: %s\n", line.c_str());
    }
    std::printf("output_checksum=%016llx\n", static_cast<unsigned long long>(m.output_checksum));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fault-tolerant FP-Growth / KNN mining runtime"};
    app.require_subcommand(1);

    // ---- gen ----
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    std::string g_algo = "fpgrowth";
    std::uint64_t g_n = 1000;
    std::uint32_t g_items = 1000;
    std::uint32_t g_len_lo = 15;
    std::uint32_t g_len_hi = 20;
    double g_zipf = 1.0;
    std::uint32_t g_dims = 2;
    std::uint64_t g_seed = 0;
    std::string g_out;
    gen->add_option("--algo", g_algo, "fpgrowth | knn");
    gen->add_option("--trans", g_n, "transaction count (fpgrowth)");
    gen->add_option("--points", g_n, "sample count (knn)");
    gen->add_option("--items", g_items, "item universe size");
    gen->add_option("--len-min", g_len_lo, "min items per transaction");
    gen->add_option("--len-max", g_len_hi, "max items per transaction");
    gen->add_option("--zipf", g_zipf, "item skew exponent");
    gen->add_option("--dims", g_dims, "feature dimensionality (knn)");
    gen->add_option("--seed", g_seed, "generator seed");
    gen->add_option("--out", g_out, "output path")->required();

    // ---- run ----
    auto* run = app.add_subcommand("run", "run one experiment");
    std::string r_algo = "fpgrowth";
    std::string r_ft = "none";
    int r_procs = 4;
    double r_support = -1.0;
    std::int64_t r_k = -1;
    std::uint64_t r_ckpts = 4;
    std::vector<std::string> r_fail;
    std::uint64_t r_seed = 0;
    std::string r_data;
    std::string r_out;
    std::string r_knn_rec = "opr";
    double r_test_frac = 0.25;
    std::string r_ckpt_dir;
    double r_disk_ms = 0.0;
    bool r_trace = false;
    run->add_option("--algo", r_algo, "fpgrowth | knn");
    run->add_option("--ft", r_ft, "none | dft | smft | amft");
    run->add_option("--procs", r_procs, "rank count");
    run->add_option("--support", r_support, "support threshold (fpgrowth)");
    run->add_option("--k", r_k, "neighbor count (knn)");
    run->add_option("--ckpts", r_ckpts, "checkpoints per phase");
    run->add_option("--fail", r_fail, "fail-stop injection rank@fraction (repeatable)");
    run->add_option("--seed", r_seed, "run seed");
    run->add_option("--data", r_data, "dataset path");
    run->add_option("--out", r_out, "result file path");
    run->add_option("--knn-recovery", r_knn_rec, "opr | ppr");
    run->add_option("--test-frac", r_test_frac, "leading fraction used as test samples (knn)");
    run->add_option("--ckpt-dir", r_ckpt_dir, "DFT checkpoint directory");
    run->add_option("--disk-latency-ms", r_disk_ms, "synthetic per-read disk delay");
    run->add_flag("--trace", r_trace, "print fabric events to stderr");

    // ---- verify ----
    auto* ver = app.add_subcommand("verify", "check a result file against brute force");
    std::string v_algo = "fpgrowth";
    std::string v_data;
    std::string v_result;
    double v_support = 0.1;
    std::uint64_t v_k = 3;
    double v_test_frac = 0.25;
    ver->add_option("--algo", v_algo, "fpgrowth | knn");
    ver->add_option("--data", v_data, "dataset path")->required();
    ver->add_option("--result", v_result, "result file to verify")->required();
    ver->add_option("--support", v_support, "support threshold (fpgrowth)");
    ver->add_option("--k", v_k, "neighbor count (knn)");
    ver->add_option("--test-frac", v_test_frac, "test split fraction (knn)");

    // ---- bench ----
    auto* bench = app.add_subcommand("bench", "sweep configurations, emit CSV");
    std::string b_algo = "fpgrowth";
    std::string b_data;
    std::string b_out;
    std::string b_procs = "4";
    std::string b_fts = "none,dft,smft,amft";
    std::string b_thetas = "0.1";
    std::string b_ks = "3";
    std::string b_fails;
    std::uint64_t b_ckpts = 4;
    std::uint64_t b_seed = 0;
    double b_disk_ms = 0.0;
    std::string b_knn_rec = "opr";
    double b_test_frac = 0.25;
    std::string b_work = ".";
    bench->add_option("--algo", b_algo, "fpgrowth | knn");
    bench->add_option("--data", b_data, "dataset path")->required();
    bench->add_option("--out", b_out, "CSV output path")->required();
    bench->add_option("--p-list", b_procs, "comma-separated rank counts");
    bench->add_option("--ft-list", b_fts, "comma-separated ft modes");
    bench->add_option("--support-list", b_thetas, "comma-separated thresholds (fpgrowth)");
    bench->add_option("--k-list", b_ks, "comma-separated k values (knn)");
    bench->add_option("--fail-list", b_fails, "comma-separated fault fractions (rank 1)");
    bench->add_option("--ckpts", b_ckpts, "checkpoints per phase");
    bench->add_option("--seed", b_seed, "run seed");
    bench->add_option("--disk-latency-ms", b_disk_ms, "synthetic per-read disk delay");
    bench->add_option("--knn-recovery", b_knn_rec, "opr | ppr");
    bench->add_option("--test-frac", b_test_frac, "test split fraction (knn)");
    bench->add_option("--work-dir", b_work, "directory for per-run result files");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            return run_gen(g_algo, g_n, g_items, g_len_lo, g_len_hi, g_zipf, g_dims, g_seed,
                           g_out);
        }

        if (run->parsed()) {
            runner::RunConfig cfg;
            cfg.algo = runner::algo_from_string(r_algo);
            if (cfg.algo == runner::Algo::Knn && r_support >= 0.0) {
                throw UsageError("--support does not apply to knn");
            }
            if (cfg.algo == runner::Algo::FpGrowth && r_k >= 0) {
                throw UsageError("--k does not apply to fpgrowth");
            }
            cfg.ft = runner::ft_from_string(r_ft);
            cfg.procs = r_procs;
            if (r_support >= 0.0) {
                cfg.theta = r_support;
            }
            if (r_k >= 0) {
                cfg.k = static_cast<std::size_t>(r_k);
            }
            cfg.checkpoints = r_ckpts;
            cfg.fail_at = parse_fail_specs(r_fail);
            cfg.seed = r_seed;
            cfg.data_path = r_data;
            cfg.out_path = r_out;
            cfg.knn_recovery = runner::knn_recovery_from_string(r_knn_rec);
            cfg.test_fraction = r_test_frac;
            cfg.ckpt_dir = r_ckpt_dir;
            cfg.disk_latency_ms = r_disk_ms;
            cfg.trace = r_trace;

            auto result = runner::run_experiment(cfg);
            if (r_trace) {
                for (const auto& ev : result.trace) {
                    std::fprintf(stderr, "%s src=%d dst=%d bytes=%zu scope=%s\n",
                                 fabric::trace_op_name(ev.op), ev.src, ev.dst, ev.bytes,
                                 ev.scope);
                }
            }
            print_metrics(cfg, result.metrics);
            return 0;
        }

        if (ver->parsed()) {
            oracle::VerifyReport report;
            if (runner::algo_from_string(v_algo) == runner::Algo::FpGrowth) {
                report = oracle::verify_fp_result(v_result, v_data, v_support);
            } else {
                report = oracle::verify_knn_result(v_result, v_data, v_k, v_test_frac);
            }
            if (report.pass) {
                std::printf("PASS: %zu entries matched\n", report.matched);
                return 0;
            }
            std::printf("FAIL: %zu entries matched, %zu divergences\n", report.matched,
                        report.diffs.size());
            for (const auto& d : report.diffs) {
                std::printf("  %s\n", d.c_str());
            }
            return 1;
        }

        if (bench->parsed()) {
            runner::BenchSpec spec;
            spec.algo = runner::algo_from_string(b_algo);
            spec.data_path = b_data;
            spec.procs = parse_list<int>(b_procs, +[](const std::string& s) { return std::stoi(s); });
            spec.fts = parse_list<runner::FtMode>(b_fts, +[](const std::string& s) {
                return runner::ft_from_string(s);
            });
            spec.thetas =
                parse_list<double>(b_thetas, +[](const std::string& s) { return std::stod(s); });
            spec.ks = parse_list<std::size_t>(
                b_ks, +[](const std::string& s) { return static_cast<std::size_t>(std::stoul(s)); });
            spec.fail_fracs =
                parse_list<double>(b_fails, +[](const std::string& s) { return std::stod(s); });
            spec.checkpoints = b_ckpts;
            spec.seed = b_seed;
            spec.disk_latency_ms = b_disk_ms;
            spec.knn_recovery = runner::knn_recovery_from_string(b_knn_rec);
            spec.test_fraction = b_test_frac;
            spec.work_dir = b_work;

            std::string summary;
            std::string csv = runner::bench(spec, &summary);
            std::ofstream out(b_out, std::ios::trunc);
            if (!out) {
                throw IoError("cannot write " + b_out);
            }
            out << csv;
            std::printf("%s", summary.c_str());
            std::printf("wrote %s\n", b_out.c_str());
            return 0;
        }
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const TooLargeForOracleError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
