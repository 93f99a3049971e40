#include "ftmine/recovery.hpp"

#include "ftmine/wire.hpp"

#include <algorithm>
#include <sstream>

namespace ftmine::recovery {

namespace {
constexpr int kTagPlan = 200;
constexpr int kTagPlanBcast = 201;
constexpr int kTagReplay = 202;
}  // namespace

const char* fp_case_name(FpCase c) {
    switch (c) {
        case FpCase::NoCheckpoint: return "no-checkpoint";
        case FpCase::TreeOnly: return "tree-only";
        case FpCase::TreeAndTrans: return "tree-and-trans";
    }
    return "?";
}

std::vector<std::uint8_t> FpRecoveryPlan::serialize() const {
    wire::Writer w;
    w.i64(failed);
    w.i64(recovery_rank);
    w.i64(static_cast<std::int64_t>(kind));
    w.i64(static_cast<std::int64_t>(trans_source));
    w.i64(replay_from);
    w.i64(sct);
    w.i64(nct);
    w.i64(cfs);
    return w.take();
}

FpRecoveryPlan FpRecoveryPlan::parse(std::span<const std::uint8_t> bytes) {
    wire::Reader r(bytes);
    FpRecoveryPlan p;
    p.failed = static_cast<int>(r.i64());
    p.recovery_rank = static_cast<int>(r.i64());
    p.kind = static_cast<FpCase>(r.i64());
    p.trans_source = static_cast<TransSource>(r.i64());
    p.replay_from = r.i64();
    p.sct = r.i64();
    p.nct = r.i64();
    p.cfs = r.i64();
    return p;
}

FpRecoveryPlan plan_fp_recovery(int failed, int recovery_rank,
                                const std::optional<checkpoint::MetadataRecord>& meta) {
    FpRecoveryPlan p;
    p.failed = failed;
    p.recovery_rank = recovery_rank;
    if (!meta || meta->cfs == 0) {
        p.kind = FpCase::NoCheckpoint;
        p.trans_source = TransSource::Disk;
        p.replay_from = 0;
        return p;
    }
    p.cfs = meta->cfs;
    p.replay_from = meta->ct + 1;
    if (meta->nct == 0) {
        p.kind = FpCase::TreeOnly;
        p.trans_source = TransSource::Disk;
    } else {
        p.kind = FpCase::TreeAndTrans;
        p.trans_source = TransSource::Memory;
        p.sct = meta->sct;
        p.nct = meta->nct;
    }
    return p;
}

std::vector<std::vector<std::uint64_t>> redistribute(std::uint64_t n_items,
                                                     std::size_t survivors) {
    if (survivors == 0) {
        throw InvalidRangeError("redistribute requires at least one survivor");
    }
    std::vector<std::vector<std::uint64_t>> out(survivors);
    for (std::uint64_t i = 0; i < n_items; ++i) {
        out[i % survivors].push_back(i);
    }
    return out;
}

fabric::RankId prev_alive(fabric::Rank& rank, fabric::RankId r) {
    const int p = rank.world_size();
    for (int i = 1; i <= p; ++i) {
        int c = (r - i % p + p) % p;
        if (rank.alive(c)) {
            return c;
        }
    }
    return -1;
}

void execute_fp_recovery(fabric::Rank& rank, int failed, FpRankState& st) {
    fabric::TraceScope scope(rank, "recover");
    const auto alive = rank.alive_ranks();
    const fabric::RankId me = rank.id();
    const fabric::RankId master = alive.front();
    const auto r_opt = rank.next_alive_successor(failed);
    if (!r_opt) {
        return;  // no survivors other than... nothing to do
    }
    const fabric::RankId rec = *r_opt;

    // 1. The recovery rank plans from the metadata it holds; the master
    // broadcasts the plan so every survivor agrees on the case.
    std::optional<checkpoint::MetadataRecord> meta;
    FpRecoveryPlan plan;
    if (me == rec) {
        meta = st.strategy->stored_metadata_for(failed);
        plan = plan_fp_recovery(failed, rec, meta);
        if (me != master) {
            rank.send(master, kTagPlan, plan.serialize());
        }
    }
    if (me == master) {
        if (master != rec) {
            plan = FpRecoveryPlan::parse(rank.recv(rec, kTagPlan));
        }
        auto bytes = plan.serialize();
        for (fabric::RankId s : alive) {
            if (s != master) {
                rank.send(s, kTagPlanBcast, bytes);
            }
        }
    } else if (me != rec || rec != master) {
        if (me != master) {
            plan = FpRecoveryPlan::parse(rank.recv(master, kTagPlanBcast));
        }
    }

    // 2. Merge the failed rank's checkpointed tree into the recovery
    // rank's local tree.
    if (me == rec && plan.kind != FpCase::NoCheckpoint) {
        auto tree_bytes = st.strategy->stored_tree_bytes(*meta);
        fptree::FpTree failed_tree = fptree::FpTree::deserialize(tree_bytes, st.order);
        st.tree->merge_from(failed_tree);
    }

    // 3. Replay the failed rank's unprocessed transactions on the
    // survivors. Memory case: the recovery rank slices its stored copy and
    // round-robins it. Disk case: every survivor reads its own slice in
    // parallel.
    const dataset::ShardRange failed_shard = st.manifest->shard(failed);
    const std::uint64_t replay_count =
        failed_shard.count - std::min<std::uint64_t>(failed_shard.count,
                                                     static_cast<std::uint64_t>(plan.replay_from));
    std::vector<dataset::Transaction> mine;
    std::uint64_t moved_bytes = 0;
    if (plan.trans_source == TransSource::Memory) {
        if (me == rec) {
            auto all = st.strategy->stored_transactions(*meta);
            const auto skip = static_cast<std::size_t>(plan.replay_from - plan.sct);
            std::vector<dataset::Transaction> replay(all.begin() + static_cast<std::ptrdiff_t>(skip),
                                                     all.end());
            auto assign = redistribute(replay.size(), alive.size());
            for (std::size_t s = 0; s < alive.size(); ++s) {
                std::vector<dataset::Transaction> slice;
                slice.reserve(assign[s].size());
                for (std::uint64_t idx : assign[s]) {
                    slice.push_back(replay[static_cast<std::size_t>(idx)]);
                }
                auto bytes = checkpoint::serialize_transactions(slice);
                wire::Writer w;
                w.u64(slice.size());
                w.bytes(bytes);
                moved_bytes += bytes.size();
                if (alive[s] == me) {
                    mine = std::move(slice);
                } else {
                    rank.send(alive[s], kTagReplay, w.data());
                }
            }
        } else {
            auto bytes = rank.recv(rec, kTagReplay);
            wire::Reader r(bytes);
            std::uint64_t n = r.u64();
            mine = checkpoint::parse_transactions(r.bytes(r.remaining()),
                                                  static_cast<std::size_t>(n));
        }
    } else if (replay_count > 0) {
        dataset::ShardRange replay_range{failed_shard.start +
                                             static_cast<std::uint64_t>(plan.replay_from),
                                         replay_count};
        auto slices = dataset::split_among(replay_range, alive.size());
        const auto my_slot = static_cast<std::size_t>(
            std::find(alive.begin(), alive.end(), me) - alive.begin());
        const dataset::ShardRange my_range = slices[my_slot];
        mine = st.file->read_range(my_range.start, my_range.count, &st.registry->recovery_reads());
        moved_bytes = 0;
        for (const auto& t : mine) {
            moved_bytes += dataset::transaction_bytes(t);
        }
    }
    for (const auto& t : mine) {
        st.tree->insert(t);
    }

    // 4. The failed rank's predecessor lost its replica holder; restore
    // the one-replica invariant with a critical checkpoint.
    if (st.strategy->memory_based() && alive.size() >= 2) {
        const fabric::RankId pred = prev_alive(rank, failed);
        const auto crit_target = rank.next_alive_successor(pred);
        if (me == pred) {
            st.strategy->recovery_critical_checkpoint(true, me, *st.tree, st.processed);
        } else if (crit_target && me == *crit_target) {
            st.strategy->recovery_critical_checkpoint(false, pred, *st.tree, st.processed);
        }
    }

    if (me == rec) {
        std::ostringstream line;
        line << "fp failed=" << failed << " case=" << fp_case_name(plan.kind)
             << " src=" << (plan.trans_source == TransSource::Memory ? "memory" : "disk")
             << " replay=" << replay_count << " bytes=" << moved_bytes;
        st.registry->log_recovery(line.str());
    }
    rank.barrier();
}

}  // namespace ftmine::recovery
