#include "ftmine/knn.hpp"

#include "ftmine/wire.hpp"

#include <algorithm>
#include <cmath>

namespace ftmine::knn {

namespace {
constexpr std::uint32_t kBlockMagic = 0x4B4C4254;  // "TBLK"
constexpr std::uint32_t kSnapMagic = 0x51505446;   // "FTPQ"
constexpr int kTagRing = 300;
}  // namespace

double distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimMismatchError("distance over mismatched dimensionality: " +
                               std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        sum += d * d;
    }
    return std::sqrt(sum);
}

NeighborQueue::NeighborQueue(std::size_t k) : k_(k) {
    heap_.reserve(k + 1);
}

void NeighborQueue::offer(double dist, std::uint32_t train_id) {
    Neighbor cand{dist, train_id};
    if (heap_.size() < k_) {
        heap_.push_back(cand);
        std::push_heap(heap_.begin(), heap_.end(), neighbor_less);
        return;
    }
    if (k_ == 0 || !neighbor_less(cand, heap_.front())) {
        return;
    }
    std::pop_heap(heap_.begin(), heap_.end(), neighbor_less);
    heap_.back() = cand;
    std::push_heap(heap_.begin(), heap_.end(), neighbor_less);
}

std::vector<Neighbor> NeighborQueue::sorted_entries() const {
    std::vector<Neighbor> out = heap_;
    std::sort(out.begin(), out.end(), neighbor_less);
    return out;
}

NeighborQueue NeighborQueue::merged(const NeighborQueue& a, const NeighborQueue& b) {
    if (a.k_ != b.k_) {
        throw CapacityMismatchError("queue merge with different capacities");
    }
    std::vector<Neighbor> all = a.heap_;
    all.insert(all.end(), b.heap_.begin(), b.heap_.end());
    std::sort(all.begin(), all.end(), neighbor_less);
    NeighborQueue out(a.k_);
    std::uint32_t last_id = 0;
    bool have_last = false;
    for (const Neighbor& n : all) {
        if (have_last && n.train_id == last_id) {
            continue;  // duplicate entry of the same training sample
        }
        // ids can repeat with different distances only if the two queues
        // disagree on the metric; keep the smaller (sorted order does).
        bool dup = false;
        for (const Neighbor& kept : out.heap_) {
            if (kept.train_id == n.train_id) {
                dup = true;
                break;
            }
        }
        if (dup) {
            continue;
        }
        out.offer(n.distance, n.train_id);
        last_id = n.train_id;
        have_last = true;
    }
    return out;
}

void process_block(TestGroup& group, const TrainBlock& block) {
    for (std::size_t t = 0; t < group.features.size(); ++t) {
        NeighborQueue& q = group.state.queues[t];
        for (std::size_t n = 0; n < block.points.size(); ++n) {
            q.offer(distance(group.features[t], block.points[n]), block.ids[n]);
        }
    }
}

std::vector<std::uint8_t> serialize_block(const TrainBlock& block) {
    wire::Writer w;
    w.u32(kBlockMagic);
    w.u32(block.origin);
    w.u32(static_cast<std::uint32_t>(block.points.size()));
    w.u32(block.points.empty() ? 0 : static_cast<std::uint32_t>(block.points.front().size()));
    for (std::size_t i = 0; i < block.points.size(); ++i) {
        w.u32(block.ids[i]);
        for (double v : block.points[i]) {
            w.f64(v);
        }
    }
    return w.take();
}

TrainBlock parse_block(std::span<const std::uint8_t> bytes) {
    wire::Reader r(bytes);
    if (r.u32() != kBlockMagic) {
        throw CorruptBufferError("bad train-block magic");
    }
    TrainBlock block;
    block.origin = r.u32();
    std::uint32_t n = r.u32();
    std::uint32_t dims = r.u32();
    block.ids.reserve(n);
    block.points.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        block.ids.push_back(r.u32());
        Point p(dims);
        for (std::uint32_t d = 0; d < dims; ++d) {
            p[d] = r.f64();
        }
        block.points.push_back(std::move(p));
    }
    return block;
}

std::vector<std::uint8_t> serialize_snapshot(const QueueSnapshot& snap) {
    wire::Writer w;
    w.u32(kSnapMagic);
    w.u32(snap.owner);
    w.u64(snap.iteration_tag);
    w.u32(snap.k);
    w.u32(static_cast<std::uint32_t>(snap.groups.size()));
    for (const GroupState& g : snap.groups) {
        w.u32(static_cast<std::uint32_t>(g.sample_ids.size()));
        w.u64(g.seen_mask);
        for (std::size_t i = 0; i < g.sample_ids.size(); ++i) {
            w.u32(g.sample_ids[i]);
            auto entries = g.queues[i].sorted_entries();
            w.u32(static_cast<std::uint32_t>(entries.size()));
            for (const Neighbor& n : entries) {
                w.f64(n.distance);
                w.u32(n.train_id);
            }
        }
    }
    return w.take();
}

QueueSnapshot parse_snapshot(std::span<const std::uint8_t> bytes) {
    wire::Reader r(bytes);
    if (r.u32() != kSnapMagic) {
        throw CorruptBufferError("bad queue-snapshot magic");
    }
    QueueSnapshot snap;
    snap.owner = r.u32();
    snap.iteration_tag = r.u64();
    snap.k = r.u32();
    std::uint32_t n_groups = r.u32();
    for (std::uint32_t gi = 0; gi < n_groups; ++gi) {
        GroupState g;
        std::uint32_t n_samples = r.u32();
        g.seen_mask = r.u64();
        for (std::uint32_t s = 0; s < n_samples; ++s) {
            g.sample_ids.push_back(r.u32());
            NeighborQueue q(snap.k);
            std::uint32_t n_entries = r.u32();
            for (std::uint32_t e = 0; e < n_entries; ++e) {
                double dist = r.f64();
                std::uint32_t id = r.u32();
                q.offer(dist, id);
            }
            g.queues.push_back(std::move(q));
        }
        snap.groups.push_back(std::move(g));
    }
    return snap;
}

std::size_t snapshot_bytes_bound(std::size_t samples, std::size_t groups, std::size_t k) {
    std::size_t header = 24;
    std::size_t per_group = 12;
    std::size_t per_sample = 8 + k * 12;
    return header + (groups + 1) * per_group + samples * per_sample;
}

TrainBlock ring_step(fabric::Rank& rank, const TrainBlock& current, fabric::RankId succ,
                     fabric::RankId pred) {
    if (succ == rank.id() && pred == rank.id()) {
        return current;  // single participant
    }
    auto bytes = serialize_block(current);
    rank.send(succ, kTagRing, bytes);
    auto in = rank.recv(pred, kTagRing);
    return parse_block(in);
}

void run_knn(fabric::Rank& rank, TestGroup& group, TrainBlock block, const CheckpointHook& hook) {
    const int p = static_cast<int>(rank.world_size());
    const fabric::RankId succ = (rank.id() + 1) % p;
    const fabric::RankId pred = (rank.id() + p - 1) % p;
    for (int i = 1; i <= p; ++i) {
        block = ring_step(rank, block, succ, pred);
        if ((group.state.seen_mask & (1ULL << block.origin)) == 0) {
            process_block(group, block);
            group.state.seen_mask |= 1ULL << block.origin;
        }
        if (hook) {
            hook(group, static_cast<std::uint64_t>(i));
        }
        rank.progress_iteration(static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(p));
    }
}

}  // namespace ftmine::knn
