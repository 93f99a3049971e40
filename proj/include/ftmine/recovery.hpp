#pragma once

#include "ftmine/checkpoint.hpp"
#include "ftmine/dataset.hpp"
#include "ftmine/fabric.hpp"
#include "ftmine/fptree.hpp"
#include "ftmine/metrics.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace ftmine::recovery {

enum class FpCase { NoCheckpoint, TreeOnly, TreeAndTrans };
enum class TransSource { Disk, Memory };

const char* fp_case_name(FpCase c);

// Recovery decision for one failed rank, derived from the metadata its
// backup holder has (or the lack of it).
struct FpRecoveryPlan {
    int failed = -1;
    int recovery_rank = -1;
    FpCase kind = FpCase::NoCheckpoint;
    TransSource trans_source = TransSource::Disk;
    std::int64_t replay_from = 0;  // local index into the failed shard
    std::int64_t sct = 0;
    std::int64_t nct = 0;
    std::int64_t cfs = 0;

    std::vector<std::uint8_t> serialize() const;
    static FpRecoveryPlan parse(std::span<const std::uint8_t> bytes);
};

FpRecoveryPlan plan_fp_recovery(int failed, int recovery_rank,
                                const std::optional<checkpoint::MetadataRecord>& meta);

// Round-robin assignment of n items over `survivors` buckets, in order.
std::vector<std::vector<std::uint64_t>> redistribute(std::uint64_t n_items,
                                                     std::size_t survivors);

// First alive rank before `r` in ring order.
fabric::RankId prev_alive(fabric::Rank& rank, fabric::RankId r);

// Everything the scripted FP recovery needs from the calling rank.
struct FpRankState {
    fptree::FpTree* tree = nullptr;
    const fptree::ItemOrder* order = nullptr;
    std::uint64_t processed = 0;  // this rank's processed count
    checkpoint::FpStrategy* strategy = nullptr;
    const dataset::TransactionFile* file = nullptr;
    const dataset::PartitionManifest* manifest = nullptr;
    metrics::Registry* registry = nullptr;
};

// Stop-the-world recovery of one failed rank. Every alive rank calls this
// with the same `failed`; roles (recovery rank, master, predecessor) are
// derived from the alive set. On return the failed rank's work is merged
// into the survivors' trees and the replica invariant is restored.
void execute_fp_recovery(fabric::Rank& rank, int failed, FpRankState& st);

}  // namespace ftmine::recovery
