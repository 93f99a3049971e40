#pragma once

#include "ftmine/dataset.hpp"
#include "ftmine/errors.hpp"
#include "ftmine/fabric.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace ftmine::knn {

using dataset::Point;

struct Neighbor {
    double distance = 0.0;
    std::uint32_t train_id = 0;
};

// Total order used everywhere: distance first, train id breaks ties.
inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
    if (a.distance != b.distance) {
        return a.distance < b.distance;
    }
    return a.train_id < b.train_id;
}

double distance(std::span<const double> a, std::span<const double> b);

// Bounded max-heap keeping the k smallest (distance, id) pairs seen.
class NeighborQueue {
public:
    explicit NeighborQueue(std::size_t k);

    void offer(double dist, std::uint32_t train_id);

    std::size_t size() const { return heap_.size(); }
    std::size_t k() const { return k_; }

    // Entries ascending by (distance, id) — the canonical form.
    std::vector<Neighbor> sorted_entries() const;

    // k smallest of the union, deduplicated by train id.
    static NeighborQueue merged(const NeighborQueue& a, const NeighborQueue& b);

private:
    std::size_t k_;
    std::vector<Neighbor> heap_;  // max-heap under neighbor_less
};

// A training shard in flight around the ring, tagged with its origin rank.
struct TrainBlock {
    std::uint32_t origin = 0;
    std::vector<std::uint32_t> ids;
    std::vector<Point> points;
};

std::vector<std::uint8_t> serialize_block(const TrainBlock& block);
TrainBlock parse_block(std::span<const std::uint8_t> bytes);

// Queue state for a set of test samples sharing the same progress. The
// seen mask records which train-shard origins have been applied, so
// recovery can replay exactly the missing ones.
struct GroupState {
    std::vector<std::uint32_t> sample_ids;
    std::vector<NeighborQueue> queues;
    std::uint64_t seen_mask = 0;
};

struct TestGroup {
    GroupState state;
    std::vector<Point> features;  // aligned with state.sample_ids
};

// Offers every (test, train) pair of this block to the group's queues.
void process_block(TestGroup& group, const TrainBlock& block);

// Checkpoint payload: owner's full queue state at an iteration boundary.
// Sample features travel separately (recovery re-reads them from disk).
struct QueueSnapshot {
    std::uint32_t owner = 0;
    std::uint64_t iteration_tag = 0;
    std::uint32_t k = 0;
    std::vector<GroupState> groups;
};

std::vector<std::uint8_t> serialize_snapshot(const QueueSnapshot& snap);
QueueSnapshot parse_snapshot(std::span<const std::uint8_t> bytes);

// Upper bound on serialized snapshot size for `samples` samples across
// `groups` groups with full queues; used to reserve checkpoint space.
std::size_t snapshot_bytes_bound(std::size_t samples, std::size_t groups, std::size_t k);

// One ring rotation: forward the current block to `succ`, adopt the one
// from `pred`.
TrainBlock ring_step(fabric::Rank& rank, const TrainBlock& current, fabric::RankId succ,
                     fabric::RankId pred);

// Fault-free P-iteration ring KNN over one rank's test group. The hook is
// invoked after each completed iteration with the live group and its tag.
using CheckpointHook = std::function<void(const TestGroup&, std::uint64_t tag)>;
void run_knn(fabric::Rank& rank, TestGroup& group, TrainBlock block,
             const CheckpointHook& hook);

}  // namespace ftmine::knn
