#pragma once

#include "ftmine/errors.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace ftmine::fabric {

using RankId = int;

// Fail-stop trigger points. Progress calls from algorithm code are matched
// against the schedule; a firing trigger kills the calling rank permanently.
enum class FaultTrigger {
    AfterTransactions,   // dies once `done >= count` transactions are processed
    AfterIteration,      // dies at the end of iteration `count`
    AtProgressFraction,  // dies once `done >= ceil(fraction * total)`
};

struct FaultEvent {
    RankId rank = 0;
    FaultTrigger kind = FaultTrigger::AfterTransactions;
    std::uint64_t count = 0;
    double fraction = 0.0;
};

class FaultSchedule {
public:
    FaultSchedule() = default;

    // At most one event per rank.
    void add(FaultEvent ev);

    const FaultEvent* for_rank(RankId r) const;
    std::size_t size() const { return events_.size(); }
    const std::vector<FaultEvent>& events() const { return events_; }

    // Throws InvalidSchedule unless every event targets [0,p) and at least
    // one rank survives.
    void validate(int p) const;

private:
    std::vector<FaultEvent> events_;
};

enum class WinKind { Static, Dynamic };

enum class TraceOp { Put, Get, FetchAdd, Send, Recv, Allreduce, WinCreate, WinResize, Death };

struct TraceEvent {
    TraceOp op;
    RankId src = -1;
    RankId dst = -1;
    std::size_t bytes = 0;
    const char* scope = "";
};

const char* trace_op_name(TraceOp op);

struct WorldOptions {
    bool trace = false;
};

class World;

// Per-rank handle passed to the rank body. All member calls are serialized
// through the world's deterministic round-robin scheduler, so a fixed
// (p, schedule, seed, workload) yields one fixed interleaving.
class Rank {
public:
    RankId id() const { return id_; }
    int world_size() const;
    std::uint64_t seed() const;

    bool alive(RankId r) const;
    std::vector<RankId> alive_ranks() const;
    // Lowest alive rank; re-elected implicitly as ranks die.
    RankId master() const;
    // First alive rank after `r` in ring order, excluding `r` itself.
    std::optional<RankId> next_alive_successor(RankId r) const;

    // One-sided windows. Creation and resize are owner-side; remote access
    // goes through put/get/fetch_add with byte offsets.
    void win_create(int slot, std::size_t bytes, WinKind kind);
    void win_resize(int slot, std::size_t bytes);
    std::size_t win_capacity(RankId owner, int slot) const;

    void put(RankId target, int slot, std::size_t offset, std::span<const std::uint8_t> payload);
    std::vector<std::uint8_t> get(RankId target, int slot, std::size_t offset, std::size_t len);
    std::int64_t fetch_add(RankId target, int slot, std::size_t offset, std::int64_t delta);

    // Two-sided messaging, FIFO per (source, tag) channel.
    void send(RankId target, int tag, std::span<const std::uint8_t> payload);
    std::vector<std::uint8_t> recv(RankId source, int tag);
    std::optional<std::vector<std::uint8_t>> try_recv(RankId source, int tag);
    std::optional<std::pair<RankId, std::vector<std::uint8_t>>> try_recv_any(int tag);

    // Collectives over the alive set. Abort with RankDead if a participant
    // dies mid-round; callers re-issue with identical arguments.
    std::vector<std::int64_t> allreduce_sum(std::span<const std::int64_t> local);
    void barrier();

    // Newly observed failures, each reported exactly once per observer.
    std::vector<RankId> poll_faults();

    // Progress reports drive fault injection. Cheap when no trigger fires.
    void progress_transactions(std::uint64_t done, std::uint64_t total);
    void progress_iteration(std::uint64_t iteration, std::uint64_t total);

    // Deterministic no-op scheduling point.
    void yield();

    // Label subsequent trace events from this rank (literal lifetime).
    void push_scope(const char* label);
    void pop_scope();

private:
    friend class World;
    Rank(World* w, RankId id) : world_(w), id_(id) {}
    World* world_;
    RankId id_;
};

// Collectives abort with RankDead when a participant dies mid-round;
// phase-boundary barriers simply re-issue until the alive set settles.
inline void retry_barrier(Rank& rank) {
    for (;;) {
        try {
            rank.barrier();
            return;
        } catch (const RankDeadError&) {
        }
    }
}

// RAII trace scope.
class TraceScope {
public:
    TraceScope(Rank& rank, const char* label) : rank_(rank) { rank_.push_scope(label); }
    ~TraceScope() { rank_.pop_scope(); }
    TraceScope(const TraceScope&) = delete;
    TraceScope& operator=(const TraceScope&) = delete;

private:
    Rank& rank_;
};

// Emulated cluster: one thread per rank, one-sided windows, messaging,
// collectives, and schedule-driven fail-stop injection. Operations execute
// in a deterministic round-robin order regardless of host scheduling.
class World {
public:
    World(int p, FaultSchedule schedule, std::uint64_t seed, WorldOptions opts = {});
    ~World();

    World(const World&) = delete;
    World& operator=(const World&) = delete;

    // Runs `body` on every rank and joins. Rethrows the first non-fault
    // error raised by any rank body.
    void run(const std::function<void(Rank&)>& body);

    int size() const { return p_; }
    std::uint64_t seed() const { return seed_; }

    // Post-run queries.
    const std::vector<TraceEvent>& trace() const;
    std::vector<RankId> death_order() const;
    std::vector<RankId> alive_ranks_now() const;

private:
    friend class Rank;
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int p_;
    std::uint64_t seed_;
};

}  // namespace ftmine::fabric
