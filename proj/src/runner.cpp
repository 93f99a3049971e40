#include "ftmine/runner.hpp"

#include "ftmine/checkpoint.hpp"
#include "ftmine/fptree.hpp"
#include "ftmine/knn.hpp"
#include "ftmine/oracle.hpp"
#include "ftmine/recovery.hpp"
#include "ftmine/wire.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace ftmine::runner {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr int kTagMerge = 500;
constexpr int kTagRing = 501;
constexpr int kTagGather = 502;
constexpr int kTagRedist = 503;
constexpr std::uint32_t kNoOrigin = 0xFFFFFFFFu;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t ns_since(Clock::time_point t0) {
    return static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count());
}

}  // namespace

const char* algo_name(Algo a) { return a == Algo::FpGrowth ? "fpgrowth" : "knn"; }

const char* ft_name(FtMode m) {
    switch (m) {
        case FtMode::None: return "none";
        case FtMode::Dft: return "dft";
        case FtMode::Smft: return "smft";
        case FtMode::Amft: return "amft";
    }
    return "?";
}

Algo algo_from_string(const std::string& s) {
    if (s == "fpgrowth") {
        return Algo::FpGrowth;
    }
    if (s == "knn") {
        return Algo::Knn;
    }
    throw UsageError("unknown algorithm: " + s);
}

FtMode ft_from_string(const std::string& s) {
    if (s == "none") {
        return FtMode::None;
    }
    if (s == "dft") {
        return FtMode::Dft;
    }
    if (s == "smft") {
        return FtMode::Smft;
    }
    if (s == "amft") {
        return FtMode::Amft;
    }
    throw UsageError("unknown ft mode: " + s);
}

KnnRecoveryMode knn_recovery_from_string(const std::string& s) {
    if (s == "opr") {
        return KnnRecoveryMode::Opr;
    }
    if (s == "ppr") {
        return KnnRecoveryMode::Ppr;
    }
    throw UsageError("unknown knn recovery mode: " + s);
}

void RunConfig::validate() const {
    if (procs < 1 || procs > 64) {
        throw UsageError("--procs must be in [1, 64]");
    }
    if (algo == Algo::FpGrowth && (theta <= 0.0 || theta > 1.0)) {
        throw UsageError("--support must lie in (0, 1]");
    }
    if (algo == Algo::Knn && k < 1) {
        throw UsageError("--k must be >= 1");
    }
    if (checkpoints < 1) {
        throw UsageError("--ckpts must be >= 1");
    }
    if (algo == Algo::Knn && (test_fraction <= 0.0 || test_fraction >= 1.0)) {
        throw UsageError("--test-frac must lie in (0, 1)");
    }
    std::set<int> seen;
    for (const auto& [rank, frac] : fail_at) {
        if (rank < 0 || rank >= procs) {
            throw UsageError("--fail rank out of range: " + std::to_string(rank));
        }
        if (frac < 0.0 || frac > 1.0) {
            throw UsageError("--fail fraction must lie in [0, 1]");
        }
        if (!seen.insert(rank).second) {
            throw UsageError("--fail given twice for rank " + std::to_string(rank));
        }
    }
    if (!fail_at.empty() && ft == FtMode::None) {
        throw UsageError("--fail requires a fault-tolerant mode (--ft dft|smft|amft)");
    }
    if (static_cast<int>(fail_at.size()) >= procs) {
        throw UsageError("fault schedule must leave at least one rank alive");
    }
    if (data_path.empty()) {
        throw UsageError("--data is required");
    }
    if (out_path.empty()) {
        throw UsageError("--out is required");
    }
}

std::string RunConfig::effective_ckpt_dir() const {
    return ckpt_dir.empty() ? out_path + ".ckpt" : ckpt_dir;
}

fabric::FaultSchedule build_schedule(const RunConfig& cfg) {
    fabric::FaultSchedule sched;
    for (const auto& [rank, frac] : cfg.fail_at) {
        fabric::FaultEvent ev;
        ev.rank = rank;
        if (cfg.algo == Algo::FpGrowth) {
            ev.kind = fabric::FaultTrigger::AtProgressFraction;
            ev.fraction = frac;
        } else {
            // KNN progress is counted in ring iterations; floor keeps the
            // 10% point before the first checkpoint.
            ev.kind = fabric::FaultTrigger::AfterIteration;
            ev.count = static_cast<std::uint64_t>(
                std::floor(frac * static_cast<double>(cfg.procs) + 1e-9));
        }
        sched.add(ev);
    }
    return sched;
}

namespace {

// ---- FP-Growth phase ----

struct FpJob {
    const RunConfig* cfg = nullptr;
    const dataset::TransactionFile* file = nullptr;
    dataset::PartitionManifest manifest;
    std::uint64_t min_count = 0;
    metrics::Registry* registry = nullptr;
    std::string* result_text = nullptr;
};

std::unique_ptr<checkpoint::FpStrategy> make_fp_strategy(FtMode mode,
                                                         checkpoint::FpStrategy::Setup setup) {
    switch (mode) {
        case FtMode::None: return checkpoint::make_none_strategy(setup);
        case FtMode::Dft: return checkpoint::make_dft_strategy(setup);
        case FtMode::Smft: return checkpoint::make_smft_strategy(setup);
        case FtMode::Amft: return checkpoint::make_amft_strategy(setup);
    }
    throw Error("bad ft mode");
}

void fp_rank_main(fabric::Rank& rank, FpJob& job) {
    const int me = rank.id();
    const auto shard_range = job.manifest.shard(me);
    std::vector<dataset::Transaction> shard =
        job.file->read_range(shard_range.start, shard_range.count);

    auto freq = fptree::count_local(shard, job.file->n_items());
    std::vector<std::int64_t> local(freq.counts().begin(), freq.counts().end());
    auto reduced = rank.allreduce_sum(local);
    std::vector<std::uint64_t> global(reduced.begin(), reduced.end());
    auto order = fptree::ItemOrder::build(global, job.min_count);

    fptree::FpTree tree(&order);

    checkpoint::FpStrategy::Setup setup;
    setup.rank = &rank;
    setup.registry = job.registry;
    setup.shard = &shard;
    setup.tree = &tree;
    setup.ckpt_dir = job.cfg->effective_ckpt_dir();
    setup.disk_delay_ms = job.cfg->disk_latency_ms;
    auto strategy = make_fp_strategy(job.cfg->ft, setup);
    strategy->init();
    rank.barrier();  // no faults can fire before the first progress report

    auto policy = checkpoint::CheckpointPolicy::for_shard(shard.size(), job.cfg->checkpoints);
    std::set<int> deaths_seen;
    std::uint64_t processed = 0;

    rank.progress_transactions(0, shard.size());
    for (const auto& t : shard) {
        tree.insert(t);
        ++processed;
        strategy->on_transaction_processed(processed);
        rank.progress_transactions(processed, shard.size());
        auto dead = rank.poll_faults();
        if (!dead.empty()) {
            deaths_seen.insert(dead.begin(), dead.end());
            strategy->handle_deaths(dead, tree, processed);
        }
        strategy->service();
        if (policy.should_checkpoint(processed)) {
            try {
                strategy->checkpoint(tree, processed);
            } catch (const RankDeadError& e) {
                auto more = rank.poll_faults();
                deaths_seen.insert(more.begin(), more.end());
                deaths_seen.insert(e.rank);
                strategy->handle_deaths({e.rank}, tree, processed);
            }
        }
    }
    strategy->drain();
    fabric::retry_barrier(rank);

    // Stop-the-world recovery of every rank that failed during the build.
    auto t_rec = Clock::now();
    for (int d : rank.poll_faults()) {
        deaths_seen.insert(d);
    }
    if (!deaths_seen.empty()) {
        recovery::FpRankState st;
        st.tree = &tree;
        st.order = &order;
        st.processed = processed;
        st.strategy = strategy.get();
        st.file = job.file;
        st.manifest = &job.manifest;
        st.registry = job.registry;
        for (int f : deaths_seen) {
            recovery::execute_fp_recovery(rank, f, st);
        }
        job.registry->add_recovery_ns(ns_since(t_rec));
    }
    fabric::retry_barrier(rank);

    // Ring-accumulate the local trees at the master, which mines and
    // renders the canonical result.
    const auto alive = rank.alive_ranks();
    const int master = alive.front();
    std::vector<int> chain;
    for (int i = 1; i < rank.world_size(); ++i) {
        int c = (master + i) % rank.world_size();
        if (std::find(alive.begin(), alive.end(), c) != alive.end()) {
            chain.push_back(c);
        }
    }
    if (!chain.empty()) {
        auto pos = std::find(chain.begin(), chain.end(), me);
        if (pos != chain.end()) {
            if (pos != chain.begin()) {
                auto bytes = rank.recv(*(pos - 1), kTagMerge);
                fptree::FpTree upstream = fptree::FpTree::deserialize(bytes, &order);
                tree.merge_from(upstream);
            }
            int next = (pos + 1 == chain.end()) ? master : *(pos + 1);
            rank.send(next, kTagMerge, tree.serialize());
        } else if (me == master) {
            auto bytes = rank.recv(chain.back(), kTagMerge);
            fptree::FpTree upstream = fptree::FpTree::deserialize(bytes, &order);
            tree.merge_from(upstream);
        }
    }
    if (me == master) {
        auto result = tree.mine(job.min_count);
        *job.result_text = fptree::format_result(result);
    }
}

// ---- KNN phase ----

struct KnnJob {
    const RunConfig* cfg = nullptr;
    const dataset::PointFile* file = nullptr;
    std::uint64_t n_test = 0;
    std::uint64_t n_train = 0;
    dataset::PartitionManifest test_manifest;
    dataset::PartitionManifest train_manifest;
    metrics::Registry* registry = nullptr;
    std::string* result_text = nullptr;
};

std::unique_ptr<checkpoint::KnnStrategy> make_knn_strategy(FtMode mode,
                                                           checkpoint::KnnStrategy::Setup setup) {
    switch (mode) {
        case FtMode::None: return checkpoint::make_knn_none_strategy(setup);
        case FtMode::Dft: return checkpoint::make_knn_dft_strategy(setup);
        case FtMode::Smft: return checkpoint::make_knn_smft_strategy(setup);
        case FtMode::Amft: return checkpoint::make_knn_amft_strategy(setup);
    }
    throw Error("bad ft mode");
}

// Owner -> sorted sample ids. Tracked identically on every rank so a
// failed rank's workload is reconstructible even without its checkpoint.
class GroupLedger {
public:
    void init(const dataset::PartitionManifest& test_manifest, int p) {
        ids_.assign(static_cast<std::size_t>(p), {});
        for (int r = 0; r < p; ++r) {
            auto shard = test_manifest.shard(r);
            for (std::uint64_t i = 0; i < shard.count; ++i) {
                ids_[static_cast<std::size_t>(r)].push_back(
                    static_cast<std::uint32_t>(shard.start + i));
            }
        }
    }

    const std::vector<std::uint32_t>& owned_by(int rank) const {
        return ids_[static_cast<std::size_t>(rank)];
    }

    void apply_opr(int failed, int rec) {
        auto& src = ids_[static_cast<std::size_t>(failed)];
        auto& dst = ids_[static_cast<std::size_t>(rec)];
        dst.insert(dst.end(), src.begin(), src.end());
        std::sort(dst.begin(), dst.end());
        src.clear();
    }

    // Round-robin over survivors in rank order; returns per-survivor counts.
    std::vector<std::uint64_t> apply_ppr(int failed, const std::vector<int>& alive) {
        auto& src = ids_[static_cast<std::size_t>(failed)];
        auto assign = recovery::redistribute(src.size(), alive.size());
        std::vector<std::uint64_t> counts(alive.size(), 0);
        for (std::size_t s = 0; s < alive.size(); ++s) {
            auto& dst = ids_[static_cast<std::size_t>(alive[s])];
            for (std::uint64_t idx : assign[s]) {
                dst.push_back(src[static_cast<std::size_t>(idx)]);
            }
            std::sort(dst.begin(), dst.end());
            counts[s] = assign[s].size();
        }
        src.clear();
        return counts;
    }

private:
    std::vector<std::vector<std::uint32_t>> ids_;
};

// Reads test-sample features for sorted ids, batching contiguous runs
// into single range reads.
std::vector<dataset::Point> read_features_by_ids(const dataset::PointFile& file,
                                                 const std::vector<std::uint32_t>& ids,
                                                 dataset::ReadStats* stats) {
    std::vector<dataset::Point> out;
    out.reserve(ids.size());
    std::size_t i = 0;
    while (i < ids.size()) {
        std::size_t j = i + 1;
        while (j < ids.size() && ids[j] == ids[j - 1] + 1) {
            ++j;
        }
        auto run = file.read_range(ids[i], j - i, stats);
        for (auto& p : run) {
            out.push_back(std::move(p));
        }
        i = j;
    }
    return out;
}

struct KnnRankCtx {
    fabric::Rank* rank = nullptr;
    KnnJob* job = nullptr;
    std::vector<knn::TestGroup> groups;  // kept sorted by first sample id
    knn::TrainBlock own_block;
    checkpoint::KnnStrategy* strategy = nullptr;
    GroupLedger ledger;
    std::set<int> handled_deaths;
};

knn::QueueSnapshot snapshot_of(const KnnRankCtx& ctx, std::uint64_t tag) {
    knn::QueueSnapshot snap;
    snap.owner = static_cast<std::uint32_t>(ctx.rank->id());
    snap.iteration_tag = tag;
    snap.k = static_cast<std::uint32_t>(ctx.job->cfg->k);
    for (const auto& g : ctx.groups) {
        snap.groups.push_back(g.state);
    }
    return snap;
}

std::size_t my_snapshot_bound(const KnnRankCtx& ctx) {
    std::size_t samples = 0;
    for (const auto& g : ctx.groups) {
        samples += g.state.sample_ids.size();
    }
    return knn::snapshot_bytes_bound(samples, ctx.groups.size() + 1, ctx.job->cfg->k);
}

void insert_group_sorted(std::vector<knn::TestGroup>& groups, knn::TestGroup g) {
    if (g.state.sample_ids.empty()) {
        return;
    }
    auto key = g.state.sample_ids.front();
    auto it = std::find_if(groups.begin(), groups.end(), [&](const knn::TestGroup& e) {
        return e.state.sample_ids.front() > key;
    });
    groups.insert(it, std::move(g));
}

// Builds adoptable groups for `failed` from its snapshot when present,
// falling back to empty queues over the ledger's sample list.
std::vector<knn::GroupState> recovered_states(const KnnRankCtx& ctx, int failed,
                                              const std::optional<knn::QueueSnapshot>& snap) {
    if (snap) {
        return snap->groups;
    }
    const auto& ids = ctx.ledger.owned_by(failed);
    std::vector<knn::GroupState> out;
    if (ids.empty()) {
        return out;
    }
    knn::GroupState g;
    g.sample_ids = ids;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        g.queues.emplace_back(ctx.job->cfg->k);
    }
    g.seen_mask = 0;
    out.push_back(std::move(g));
    return out;
}

std::vector<std::uint8_t> serialize_states(const std::vector<knn::GroupState>& states,
                                           std::uint32_t k) {
    knn::QueueSnapshot snap;
    snap.owner = 0;
    snap.iteration_tag = 0;
    snap.k = k;
    snap.groups = states;
    return knn::serialize_snapshot(snap);
}

void adopt_states(KnnRankCtx& ctx, const std::vector<knn::GroupState>& states,
                  dataset::ReadStats* stats) {
    for (const auto& st : states) {
        if (st.sample_ids.empty()) {
            continue;
        }
        knn::TestGroup g;
        g.state = st;
        g.features = read_features_by_ids(*ctx.job->file, st.sample_ids, stats);
        insert_group_sorted(ctx.groups, std::move(g));
    }
}

// Flattens recovered groups to (id, queue, seen) records sorted by sample
// id — the same order the ledger uses for its id-only bookkeeping.
struct FlatSample {
    std::uint32_t id;
    knn::NeighborQueue queue;
    std::uint64_t seen;
};

std::vector<FlatSample> flatten_states(const std::vector<knn::GroupState>& states) {
    std::vector<FlatSample> out;
    for (const auto& st : states) {
        for (std::size_t i = 0; i < st.sample_ids.size(); ++i) {
            out.push_back(FlatSample{st.sample_ids[i], st.queues[i], st.seen_mask});
        }
    }
    std::sort(out.begin(), out.end(),
              [](const FlatSample& a, const FlatSample& b) { return a.id < b.id; });
    return out;
}

std::vector<knn::GroupState> bucket_by_seen(const std::vector<FlatSample>& flat) {
    std::map<std::uint64_t, knn::GroupState> buckets;
    for (const auto& s : flat) {
        auto& g = buckets[s.seen];
        g.seen_mask = s.seen;
        g.sample_ids.push_back(s.id);
        g.queues.push_back(s.queue);
    }
    std::vector<knn::GroupState> out;
    for (auto& [seen, g] : buckets) {
        out.push_back(std::move(g));
    }
    return out;
}

void knn_recovery_step(KnnRankCtx& ctx, int failed) {
    fabric::Rank& rank = *ctx.rank;
    fabric::TraceScope scope(rank, "recover");
    const auto alive = rank.alive_ranks();
    const int me = rank.id();
    const auto rec_opt = rank.next_alive_successor(failed);
    if (!rec_opt) {
        return;
    }
    const int rec = *rec_opt;
    const bool ppr = ctx.job->cfg->knn_recovery == KnnRecoveryMode::Ppr;

    if (!ppr) {
        if (me == rec) {
            auto snap = ctx.strategy->load_checkpoint(failed);
            auto states = recovered_states(ctx, failed, snap);
            adopt_states(ctx, states, &ctx.job->registry->recovery_reads());
            std::ostringstream line;
            line << "knn opr failed=" << failed << " tag="
                 << (snap ? std::to_string(snap->iteration_tag) : std::string("none"))
                 << " samples=" << ctx.ledger.owned_by(failed).size();
            ctx.job->registry->log_recovery(line.str());
        }
        ctx.ledger.apply_opr(failed, rec);
    } else {
        if (me == rec) {
            auto snap = ctx.strategy->load_checkpoint(failed);
            auto states = recovered_states(ctx, failed, snap);
            auto flat = flatten_states(states);
            auto assign = recovery::redistribute(flat.size(), alive.size());
            for (std::size_t s = 0; s < alive.size(); ++s) {
                std::vector<knn::GroupState> slice_states;
                if (!assign[s].empty()) {
                    std::vector<FlatSample> slice;
                    for (std::uint64_t idx : assign[s]) {
                        slice.push_back(flat[static_cast<std::size_t>(idx)]);
                    }
                    slice_states = bucket_by_seen(slice);
                }
                if (alive[s] == me) {
                    adopt_states(ctx, slice_states, &ctx.job->registry->recovery_reads());
                } else {
                    rank.send(alive[s], kTagRedist,
                              serialize_states(slice_states,
                                               static_cast<std::uint32_t>(ctx.job->cfg->k)));
                }
            }
            std::ostringstream line;
            line << "knn ppr failed=" << failed << " tag="
                 << (snap ? std::to_string(snap->iteration_tag) : std::string("none"))
                 << " samples=" << flat.size() << " survivors=" << alive.size();
            ctx.job->registry->log_recovery(line.str());
        } else {
            auto bytes = rank.recv(rec, kTagRedist);
            auto snap = knn::parse_snapshot(bytes);
            adopt_states(ctx, snap.groups, &ctx.job->registry->recovery_reads());
        }
        auto counts = ctx.ledger.apply_ppr(failed, alive);
        if (me == rec) {
            ctx.job->registry->set_redistribution(counts);
        }
    }

    ctx.strategy->post_recovery_reserve(my_snapshot_bound(ctx));
}

void knn_handle_new_deaths(KnnRankCtx& ctx) {
    auto dead = ctx.rank->poll_faults();
    if (dead.empty()) {
        return;
    }
    std::sort(dead.begin(), dead.end());
    auto t0 = Clock::now();
    for (int f : dead) {
        if (ctx.handled_deaths.insert(f).second) {
            knn_recovery_step(ctx, f);
        }
    }
    ctx.job->registry->add_recovery_ns(ns_since(t0));
}

void knn_rank_main(fabric::Rank& rank, KnnJob& job) {
    const int me = rank.id();
    const int p = rank.world_size();

    KnnRankCtx ctx;
    ctx.rank = &rank;
    ctx.job = &job;

    const auto test_shard = job.test_manifest.shard(me);
    if (test_shard.count > 0) {
        knn::TestGroup own;
        for (std::uint64_t i = 0; i < test_shard.count; ++i) {
            own.state.sample_ids.push_back(static_cast<std::uint32_t>(test_shard.start + i));
            own.state.queues.emplace_back(job.cfg->k);
        }
        own.features = job.file->read_range(test_shard.start, test_shard.count);
        ctx.groups.push_back(std::move(own));
    }
    ctx.ledger.init(job.test_manifest, p);

    const auto train_shard = job.train_manifest.shard(me);
    ctx.own_block.origin = static_cast<std::uint32_t>(me);
    for (std::uint64_t i = 0; i < train_shard.count; ++i) {
        ctx.own_block.ids.push_back(static_cast<std::uint32_t>(train_shard.start + i));
    }
    ctx.own_block.points = job.file->read_range(job.n_test + train_shard.start, train_shard.count);

    checkpoint::KnnStrategy::Setup setup;
    setup.rank = &rank;
    setup.registry = job.registry;
    setup.ckpt_dir = job.cfg->effective_ckpt_dir();
    setup.disk_delay_ms = job.cfg->disk_latency_ms;
    auto strategy = make_knn_strategy(job.cfg->ft, setup);
    ctx.strategy = strategy.get();
    strategy->init(my_snapshot_bound(ctx));
    rank.barrier();

    knn::TrainBlock block = ctx.own_block;

    rank.progress_iteration(0, static_cast<std::uint64_t>(p));
    for (int i = 1; i <= p; ++i) {
        knn_handle_new_deaths(ctx);

        // Rotate. A successor death between poll and send cascades; a
        // predecessor death mid-wait costs this iteration's block, which
        // the seen mask recovers from disk later.
        for (;;) {
            auto succ = rank.next_alive_successor(me);
            if (!succ || *succ == me) {
                break;  // single survivor keeps its block
            }
            try {
                rank.send(*succ, kTagRing, knn::serialize_block(block));
            } catch (const RankDeadError&) {
                knn_handle_new_deaths(ctx);
                continue;
            }
            try {
                block = knn::parse_block(rank.recv(recovery::prev_alive(rank, me), kTagRing));
            } catch (const RankDeadError&) {
                knn_handle_new_deaths(ctx);
                block = knn::TrainBlock{};
                block.origin = kNoOrigin;
            }
            break;
        }

        if (block.origin != kNoOrigin) {
            for (auto& g : ctx.groups) {
                if ((g.state.seen_mask & (1ULL << block.origin)) == 0) {
                    knn::process_block(g, block);
                    g.state.seen_mask |= 1ULL << block.origin;
                }
            }
        }

        try {
            strategy->checkpoint(knn::serialize_snapshot(snapshot_of(ctx, i)),
                                 static_cast<std::uint64_t>(i));
        } catch (const RankDeadError&) {
            // target died mid-checkpoint; the next iteration's poll reforms
        }
        rank.progress_iteration(static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(p));
    }
    knn_handle_new_deaths(ctx);

    // Sweep: any origin a group has not seen (lost block, late adoption)
    // comes from the local cache or disk.
    auto t_sweep = Clock::now();
    bool swept = false;
    for (auto& g : ctx.groups) {
        for (int o = 0; o < p; ++o) {
            if ((g.state.seen_mask & (1ULL << o)) != 0) {
                continue;
            }
            knn::TrainBlock missing;
            if (o == me) {
                missing = ctx.own_block;
            } else {
                auto shard = job.train_manifest.shard(o);
                missing.origin = static_cast<std::uint32_t>(o);
                for (std::uint64_t i = 0; i < shard.count; ++i) {
                    missing.ids.push_back(static_cast<std::uint32_t>(shard.start + i));
                }
                missing.points = job.file->read_range(job.n_test + shard.start, shard.count,
                                                      &job.registry->recovery_reads());
            }
            knn::process_block(g, missing);
            g.state.seen_mask |= 1ULL << o;
            swept = true;
        }
    }
    if (swept) {
        job.registry->add_recovery_ns(ns_since(t_sweep));
    }
    fabric::retry_barrier(rank);

    // Gather every group at the master and render neighbors by test id.
    const auto alive = rank.alive_ranks();
    const int master = alive.front();
    if (me != master) {
        rank.send(master, kTagGather,
                  knn::serialize_snapshot(snapshot_of(ctx, static_cast<std::uint64_t>(p))));
    } else {
        std::map<std::uint32_t, std::vector<knn::Neighbor>> rows;
        auto absorb = [&rows](const std::vector<knn::GroupState>& states) {
            for (const auto& g : states) {
                for (std::size_t i = 0; i < g.sample_ids.size(); ++i) {
                    if (!rows.emplace(g.sample_ids[i], g.queues[i].sorted_entries()).second) {
                        throw Error("duplicate test sample in gather: " +
                                    std::to_string(g.sample_ids[i]));
                    }
                }
            }
        };
        absorb(snapshot_of(ctx, 0).groups);
        for (int s : alive) {
            if (s == master) {
                continue;
            }
            absorb(knn::parse_snapshot(rank.recv(s, kTagGather)).groups);
        }
        if (rows.size() != job.n_test) {
            throw Error("gather covered " + std::to_string(rows.size()) + " of " +
                        std::to_string(job.n_test) + " test samples");
        }
        std::vector<std::pair<std::uint32_t, std::vector<knn::Neighbor>>> ordered(rows.begin(),
                                                                                  rows.end());
        *job.result_text = oracle::format_neighbor_lines(ordered);
    }
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << text;
}

}  // namespace

RunResult run_experiment(const RunConfig& cfg) {
    cfg.validate();

    if (cfg.ft == FtMode::Dft || cfg.algo == Algo::Knn) {
        std::error_code ec;
        fs::remove_all(cfg.effective_ckpt_dir(), ec);
    }

    metrics::Registry registry(cfg.procs);
    std::string result_text;

    fabric::WorldOptions opts;
    opts.trace = cfg.trace;
    fabric::World world(cfg.procs, build_schedule(cfg), cfg.seed, opts);

    auto t0 = Clock::now();
    if (cfg.algo == Algo::FpGrowth) {
        dataset::TransactionFile file(cfg.data_path);
        file.set_read_delay_ms(cfg.disk_latency_ms);
        FpJob job;
        job.cfg = &cfg;
        job.file = &file;
        job.manifest = dataset::PartitionManifest::even_split(file.n_trans(), cfg.procs);
        job.min_count = fptree::min_support_count(cfg.theta, file.n_trans());
        job.registry = &registry;
        job.result_text = &result_text;
        world.run([&job](fabric::Rank& r) { fp_rank_main(r, job); });
    } else {
        dataset::PointFile file(cfg.data_path);
        file.set_read_delay_ms(cfg.disk_latency_ms);
        auto [n_test, n_train] = dataset::head_split(file.n(), cfg.test_fraction);
        if (n_train == 0) {
            throw UsageError("dataset leaves no training samples");
        }
        KnnJob job;
        job.cfg = &cfg;
        job.file = &file;
        job.n_test = n_test;
        job.n_train = n_train;
        job.test_manifest = dataset::PartitionManifest::even_split(n_test, cfg.procs);
        // Train ids are block-relative: id i lives at file record n_test + i.
        job.train_manifest = dataset::PartitionManifest::even_split(n_train, cfg.procs);
        job.registry = &registry;
        job.result_text = &result_text;
        world.run([&job](fabric::Rank& r) { knn_rank_main(r, job); });
    }
    const double total = seconds_since(t0);

    write_text(cfg.out_path, result_text);

    RunResult out;
    out.metrics.total_s = total;
    out.metrics.checkpoint_s = static_cast<double>(registry.ckpt_ns()) * 1e-9;
    out.metrics.recovery_s = static_cast<double>(registry.recovery_ns()) * 1e-9;
    out.metrics.bytes_checkpointed = registry.ckpt_bytes();
    out.metrics.disk_reads = registry.recovery_reads().records_read.load();
    out.metrics.disk_read_calls = registry.recovery_reads().read_calls.load();
    out.metrics.output_checksum = wire::fnv1a(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(result_text.data()), result_text.size()));
    out.metrics.complete_checkpoints = registry.complete_checkpoints();
    out.metrics.partial_checkpoints = registry.partial_checkpoints();
    out.metrics.skipped_checkpoints = registry.skipped_checkpoints();
    out.metrics.degraded = registry.degraded();
    out.metrics.recovery_log = registry.recovery_log();
    out.metrics.redistribution = registry.redistribution();
    for (int r = 0; r < registry.ranks(); ++r) {
        auto s = registry.space(r);
        out.metrics.space.push_back(s);
        if (s.peak > out.metrics.peak_ckpt_bytes_per_rank) {
            out.metrics.peak_ckpt_bytes_per_rank = s.peak;
        }
    }
    out.trace = world.trace();
    return out;
}

std::string bench(const BenchSpec& spec, std::string* summary) {
    std::ostringstream csv;
    csv << "algo,ft,p,theta_or_k,fault,total_time,ckpt_time,rec_time,bytes,peak_bytes,checksum\n";
    std::ostringstream sum;

    const bool fp = spec.algo == Algo::FpGrowth;
    std::vector<double> params;
    if (fp) {
        params = spec.thetas;
    } else {
        for (auto kk : spec.ks) {
            params.push_back(static_cast<double>(kk));
        }
    }

    int run_id = 0;
    for (int p : spec.procs) {
        for (double param : params) {
            double baseline_total = -1.0;
            for (FtMode ft : spec.fts) {
                std::vector<double> fails = spec.fail_fracs;
                fails.insert(fails.begin(), -1.0);  // fault-free cell first
                for (double frac : fails) {
                    if (frac >= 0.0 && ft == FtMode::None) {
                        continue;  // faults are unrecoverable without FT
                    }
                    RunConfig cfg;
                    cfg.algo = spec.algo;
                    cfg.ft = ft;
                    cfg.procs = p;
                    if (fp) {
                        cfg.theta = param;
                    } else {
                        cfg.k = static_cast<std::size_t>(param);
                    }
                    cfg.checkpoints = spec.checkpoints;
                    cfg.seed = spec.seed;
                    cfg.data_path = spec.data_path;
                    cfg.out_path = (fs::path(spec.work_dir) /
                                    ("bench_run" + std::to_string(run_id++) + ".txt"))
                                       .string();
                    cfg.knn_recovery = spec.knn_recovery;
                    cfg.test_fraction = spec.test_fraction;
                    cfg.disk_latency_ms = spec.disk_latency_ms;
                    if (frac >= 0.0) {
                        cfg.fail_at.emplace_back(std::min(1, p - 1), frac);
                    }
                    auto res = run_experiment(cfg);
                    const auto& m = res.metrics;
                    csv << algo_name(spec.algo) << ',' << ft_name(ft) << ',' << p << ',' << param
                        << ',' << (frac < 0.0 ? std::string("none") : std::to_string(frac)) << ','
                        << m.total_s << ',' << m.checkpoint_s << ',' << m.recovery_s << ','
                        << m.bytes_checkpointed << ',' << m.peak_ckpt_bytes_per_rank << ','
                        << m.output_checksum << '\n';
                    if (frac < 0.0) {
                        if (ft == FtMode::None) {
                            baseline_total = m.total_s;
                        } else if (baseline_total > 0.0) {
                            sum << algo_name(spec.algo) << " p=" << p << " param=" << param
                                << " ft=" << ft_name(ft) << " overhead%="
                                << 100.0 * (m.total_s - baseline_total) / baseline_total << '\n';
                        }
                    }
                }
            }
        }
    }
    if (summary != nullptr) {
        *summary = sum.str();
    }
    return csv.str();
}

}  // namespace ftmine::runner
