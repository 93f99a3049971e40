#pragma once

#include "ftmine/dataset.hpp"
#include "ftmine/errors.hpp"
#include "ftmine/fabric.hpp"
#include "ftmine/fptree.hpp"
#include "ftmine/knn.hpp"
#include "ftmine/metrics.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ftmine::checkpoint {

using dataset::Transaction;

// Window slots used by the strategies.
constexpr int kSlotMeta = 0;       // [ls_ptr:i64][primary record][critical record]
constexpr int kSlotTransWin = 1;   // AMFT: shard-sized arena reusing processed space
constexpr int kSlotChkTree = 2;    // SMFT: dynamic tree-checkpoint vector
constexpr int kSlotChkTrans = 3;   // SMFT: dynamic transaction-checkpoint vector
constexpr int kSlotQueueChk = 4;   // KNN: queue-snapshot buffer
constexpr int kSlotCritTree = 5;   // critical checkpoints after a backup loss

// Message tags.
constexpr int kTagSmftSize = 100;
constexpr int kTagSmftAddr = 101;
constexpr int kTagPhaseDone = 102;
constexpr int kTagCritSize = 103;
constexpr int kTagCritAddr = 104;
constexpr int kTagKnnSize = 110;
constexpr int kTagKnnAddr = 111;

// Per-rank checkpoint descriptor. ls_ptr is maintained by the window owner
// (bytes of already-processed transactions); the remaining fields are
// written one-sidedly by the checkpointing source. Offsets/indices are
// local to the source's shard. `ct` is the index of the source's last
// processed transaction at checkpoint time; replay resumes at ct + 1.
struct MetadataRecord {
    std::int64_t ls_ptr = 0;
    std::int64_t cf_ptr = 0;  // trans-region offset; 0 = no transactions checkpointed
    std::int64_t cfs = 0;     // serialized tree size in bytes; 0 = no checkpoint at all
    std::int64_t ct = -1;
    std::int64_t sct = 0;
    std::int64_t nct = 0;
};

// Meta window layout: the owner-maintained ls_ptr cell, then two records
// written by sources (each record + a source tag). The primary record
// describes the ring predecessor's arena checkpoint; the critical record
// describes a re-replication that arrived after a backup holder died.
constexpr std::size_t kMetaRecordBytes = 6 * sizeof(std::int64_t);
constexpr std::size_t kMetaPrimaryOffset = sizeof(std::int64_t);
constexpr std::size_t kMetaCriticalOffset = kMetaPrimaryOffset + kMetaRecordBytes;
constexpr std::size_t kMetaWindowBytes = kMetaCriticalOffset + kMetaRecordBytes;

std::vector<std::uint8_t> pack_source_fields(const MetadataRecord& m, int source);
// Returns (record, source); record.ls_ptr is not populated here.
std::pair<MetadataRecord, int> unpack_source_fields(std::span<const std::uint8_t> bytes);

// Checkpoint cadence: every ceil(shard / c) processed transactions.
struct CheckpointPolicy {
    std::uint64_t checkpoints = 1;
    std::uint64_t interval = 1;

    static CheckpointPolicy for_shard(std::uint64_t shard_size, std::uint64_t c);
    bool should_checkpoint(std::uint64_t processed) const {
        return processed > 0 && processed % interval == 0;
    }
};

enum class CheckpointKind { Complete, Partial, None };

// Complete = tree + remaining transactions (once); Partial = tree only.
CheckpointKind amft_decide(std::int64_t free_bytes, std::int64_t tree_bytes,
                           std::int64_t remaining_bytes, bool complete_done);

// ---- DFT disk store ----

// Epoch-numbered tree/meta file pairs, written tree-then-meta with a
// rename so a torn checkpoint never yields a valid meta. Two epochs are
// retained; recovery picks the valid pair with the highest ct.
class DftStore {
public:
    DftStore(std::string root, int rank);

    void write_epoch(std::span<const std::uint8_t> payload, std::uint32_t ct);

    struct Loaded {
        std::vector<std::uint8_t> payload;
        std::uint32_t ct = 0;
        std::uint32_t epoch = 0;
    };
    static std::optional<Loaded> load_latest(const std::string& root, int rank,
                                             dataset::ReadStats* stats = nullptr,
                                             double read_delay_ms = 0.0);

    static std::string rank_dir(const std::string& root, int rank);

private:
    std::string root_;
    int rank_;
    std::uint32_t next_epoch_ = 0;
};

// ---- FP-Growth strategies ----

// What the build loop needs from a strategy. Everything is rank-confined;
// remote effects go through the fabric.
class FpStrategy {
public:
    struct Setup {
        fabric::Rank* rank = nullptr;
        metrics::Registry* registry = nullptr;
        const std::vector<Transaction>* shard = nullptr;  // this rank's transactions
        const fptree::FpTree* tree = nullptr;             // live build tree (critical retries)
        std::string ckpt_dir;                             // DFT only
        double disk_delay_ms = 0.0;
    };

    virtual ~FpStrategy() = default;

    virtual const char* name() const = 0;

    // Creates and exposes this rank's windows; callers barrier afterwards.
    virtual void init() {}

    // Called once per processed transaction, before any checkpoint attempt.
    virtual void on_transaction_processed(std::uint64_t processed) { (void)processed; }

    // Target-side duties (SMFT handshake service). Safe to call anytime.
    virtual void service() {}

    // Scheduled checkpoint of the current tree (RankDead propagates so the
    // caller can re-target through handle_deaths).
    virtual void checkpoint(const fptree::FpTree& tree, std::uint64_t processed) = 0;

    // Fail-stop notifications; performs the critical checkpoint when this
    // rank's backup holder died (memory strategies).
    virtual void handle_deaths(const std::vector<fabric::RankId>& dead,
                               const fptree::FpTree& tree, std::uint64_t processed) {
        (void)dead;
        (void)tree;
        (void)processed;
    }

    // End-of-phase service until every other alive rank is done too.
    virtual void drain() {}

    // Recovery-side accessors (queried on the recovery rank).
    virtual std::optional<MetadataRecord> stored_metadata_for(fabric::RankId failed) = 0;
    virtual std::vector<std::uint8_t> stored_tree_bytes(const MetadataRecord& meta) = 0;
    virtual std::vector<Transaction> stored_transactions(const MetadataRecord& meta) = 0;

    // Scripted critical checkpoint inside the recovery block. `as_source`
    // re-checkpoints this rank's tree; otherwise the rank services the
    // handshake when it is the new target (SMFT).
    virtual void recovery_critical_checkpoint(bool as_source, fabric::RankId source,
                                              const fptree::FpTree& tree,
                                              std::uint64_t processed) {
        (void)as_source;
        (void)source;
        (void)tree;
        (void)processed;
    }

    virtual bool memory_based() const { return false; }
};

std::unique_ptr<FpStrategy> make_none_strategy(FpStrategy::Setup setup);
std::unique_ptr<FpStrategy> make_dft_strategy(FpStrategy::Setup setup);
std::unique_ptr<FpStrategy> make_smft_strategy(FpStrategy::Setup setup);
std::unique_ptr<FpStrategy> make_amft_strategy(FpStrategy::Setup setup);

// ---- KNN queue checkpointing ----

// Queue snapshots are checkpointed to the ring successor once per
// iteration; the target reserves space up front (AMFT), resizes per round
// (SMFT), or the snapshot goes to disk (DFT).
class KnnStrategy {
public:
    struct Setup {
        fabric::Rank* rank = nullptr;
        metrics::Registry* registry = nullptr;
        std::string ckpt_dir;
        double disk_delay_ms = 0.0;
    };

    virtual ~KnnStrategy() = default;

    // `reserve_bound` is this rank's worst-case snapshot size, announced
    // to the successor so it can size its receive buffer.
    virtual void init(std::size_t reserve_bound) { (void)reserve_bound; }

    virtual void checkpoint(std::span<const std::uint8_t> snapshot, std::uint64_t tag) = 0;

    // Latest snapshot this rank holds for `failed`, if any.
    virtual std::optional<knn::QueueSnapshot> load_checkpoint(fabric::RankId failed) = 0;

    // Called inside the stop-the-world recovery step after group adoption
    // changed snapshot sizes.
    virtual void post_recovery_reserve(std::size_t reserve_bound) { (void)reserve_bound; }
};

std::unique_ptr<KnnStrategy> make_knn_none_strategy(KnnStrategy::Setup setup);
std::unique_ptr<KnnStrategy> make_knn_dft_strategy(KnnStrategy::Setup setup);
std::unique_ptr<KnnStrategy> make_knn_smft_strategy(KnnStrategy::Setup setup);
std::unique_ptr<KnnStrategy> make_knn_amft_strategy(KnnStrategy::Setup setup);

std::vector<std::uint8_t> serialize_transactions(std::span<const Transaction> txns);
std::vector<Transaction> parse_transactions(std::span<const std::uint8_t> bytes,
                                            std::size_t expect_count);

}  // namespace ftmine::checkpoint
