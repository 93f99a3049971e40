#include "ftmine/fabric.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <mutex>
#include <thread>

namespace ftmine::fabric {

namespace {

// Internal signal thrown to unwind a rank body on fail-stop. Deliberately
// not derived from std::exception so algorithm-level catch blocks cannot
// swallow it.
struct FailStopSignal {};

struct Message {
    int tag;
    std::vector<std::uint8_t> bytes;
};

struct Window {
    std::vector<std::uint8_t> mem;
    WinKind kind = WinKind::Static;
};

struct CollectiveRound {
    std::vector<std::int64_t> accum;
    std::set<RankId> arrived;
    std::set<RankId> collected;
    bool has_accum = false;
    bool complete = false;
    bool aborted = false;
    RankId abort_rank = -1;
    std::vector<std::int64_t> result;
};

}  // namespace

void FaultSchedule::add(FaultEvent ev) {
    if (for_rank(ev.rank) != nullptr) {
        throw InvalidScheduleError("duplicate fault event for rank " + std::to_string(ev.rank));
    }
    events_.push_back(ev);
}

const FaultEvent* FaultSchedule::for_rank(RankId r) const {
    for (const auto& e : events_) {
        if (e.rank == r) {
            return &e;
        }
    }
    return nullptr;
}

void FaultSchedule::validate(int p) const {
    for (const auto& e : events_) {
        if (e.rank < 0 || e.rank >= p) {
            throw InvalidScheduleError("fault event rank out of range: " + std::to_string(e.rank));
        }
    }
    if (static_cast<int>(events_.size()) >= p) {
        throw InvalidScheduleError("schedule must leave at least one rank alive");
    }
}

const char* trace_op_name(TraceOp op) {
    switch (op) {
        case TraceOp::Put: return "put";
        case TraceOp::Get: return "get";
        case TraceOp::FetchAdd: return "fetch_add";
        case TraceOp::Send: return "send";
        case TraceOp::Recv: return "recv";
        case TraceOp::Allreduce: return "allreduce";
        case TraceOp::WinCreate: return "win_create";
        case TraceOp::WinResize: return "win_resize";
        case TraceOp::Death: return "death";
    }
    return "?";
}

struct World::Impl {
    int p;
    std::uint64_t seed;
    WorldOptions opts;
    FaultSchedule schedule;

    std::mutex mu;
    std::condition_variable cv;

    int turn = 0;
    std::uint64_t stall_rechecks = 0;

    std::vector<bool> dead;
    std::vector<bool> finished;
    std::vector<bool> parked;

    bool aborted = false;
    std::string abort_reason;
    std::exception_ptr first_error;

    // Messaging: queue per (src, dst) channel, FIFO.
    std::vector<std::deque<Message>> channels;  // index = src * p + dst

    // Windows: per rank, slot -> window.
    std::vector<std::map<int, Window>> wins;

    // Death log in death order; per-rank read cursor for poll_faults.
    std::vector<RankId> death_log;
    std::vector<std::size_t> death_cursor;

    // Collectives, round-numbered per rank.
    std::deque<CollectiveRound> rounds;
    std::uint64_t round_base = 0;
    std::vector<std::uint64_t> next_round;

    // Per-rank fault trigger state.
    struct TrigState {
        bool armed = false;
        FaultEvent ev;
        bool threshold_set = false;
        std::uint64_t threshold = 0;
    };
    std::vector<TrigState> trig;

    // Per-rank trace scope stacks (only touched by the owning rank).
    std::vector<std::vector<const char*>> scopes;

    std::vector<TraceEvent> trace;

    explicit Impl(int p_, FaultSchedule sched, std::uint64_t seed_, WorldOptions o)
        : p(p_), seed(seed_), opts(o), schedule(std::move(sched)) {
        dead.assign(p, false);
        finished.assign(p, false);
        parked.assign(p, false);
        channels.resize(static_cast<std::size_t>(p) * p);
        wins.resize(p);
        death_cursor.assign(p, 0);
        next_round.assign(p, 0);
        trig.resize(p);
        scopes.resize(p);
        for (int r = 0; r < p; ++r) {
            if (const FaultEvent* e = schedule.for_rank(r)) {
                trig[r].armed = true;
                trig[r].ev = *e;
            }
        }
    }

    std::deque<Message>& channel(RankId src, RankId dst) {
        return channels[static_cast<std::size_t>(src) * p + dst];
    }

    int runnable_count() const {
        int n = 0;
        for (int r = 0; r < p; ++r) {
            if (!dead[r] && !finished[r]) {
                ++n;
            }
        }
        return n;
    }

    int parked_count() const {
        int n = 0;
        for (int r = 0; r < p; ++r) {
            if (parked[r]) {
                ++n;
            }
        }
        return n;
    }

    void advance_turn() {
        for (int i = 1; i <= p; ++i) {
            int c = (turn + i) % p;
            if (!dead[c] && !finished[c]) {
                turn = c;
                return;
            }
        }
        turn = -1;  // nobody left to run
    }

    void abort_world(const std::string& reason) {
        if (!aborted) {
            aborted = true;
            abort_reason = reason;
        }
        cv.notify_all();
    }

    void wait_for_turn(std::unique_lock<std::mutex>& lk, RankId r) {
        cv.wait(lk, [&] { return turn == r || aborted; });
        if (aborted) {
            throw Error("world aborted: " + abort_reason);
        }
    }

    // Marks the current op as real progress and hands the turn on.
    void op_done() {
        stall_rechecks = 0;
        advance_turn();
        cv.notify_all();
    }

    // Records a failed predicate re-check. If every runnable rank is parked
    // and a full cycle of re-checks made no progress, nothing can ever
    // change: flag a deadlock.
    void park_recheck_failed(RankId r) {
        parked[r] = true;
        ++stall_rechecks;
        if (parked_count() == runnable_count() &&
            stall_rechecks > static_cast<std::uint64_t>(runnable_count()) + 1) {
            abort_world("deadlock: all ranks blocked");
        }
        advance_turn();
        cv.notify_all();
    }

    void record(TraceOp op, RankId src, RankId dst, std::size_t bytes) {
        if (!opts.trace) {
            return;
        }
        const char* scope = scopes[src].empty() ? "" : scopes[src].back();
        trace.push_back(TraceEvent{op, src, dst, bytes, scope});
    }

    void check_alive(RankId r) const {
        if (r < 0 || r >= p) {
            throw Error("rank id out of range: " + std::to_string(r));
        }
        if (dead[r]) {
            throw RankDeadError(r);
        }
    }

    Window& window(RankId owner, int slot) {
        auto it = wins[owner].find(slot);
        if (it == wins[owner].end()) {
            throw Error("no window slot " + std::to_string(slot) + " at rank " + std::to_string(owner));
        }
        return it->second;
    }

    void check_bounds(const Window& w, std::size_t offset, std::size_t len) const {
        if (offset > w.mem.size() || len > w.mem.size() - offset) {
            throw OutOfBoundsError("window access [" + std::to_string(offset) + ", " +
                                   std::to_string(offset + len) + ") exceeds capacity " +
                                   std::to_string(w.mem.size()));
        }
    }

    std::vector<RankId> alive_now() const {
        std::vector<RankId> out;
        for (int r = 0; r < p; ++r) {
            if (!dead[r]) {
                out.push_back(r);
            }
        }
        return out;
    }

    CollectiveRound& round_at(std::uint64_t round) {
        while (round_base + rounds.size() <= round) {
            rounds.emplace_back();
        }
        return rounds[round - round_base];
    }

    void try_complete_front_rounds() {
        auto alive = alive_now();
        for (auto& rd : rounds) {
            if (rd.complete || rd.aborted) {
                continue;
            }
            bool all_arrived = std::all_of(alive.begin(), alive.end(),
                                           [&](RankId a) { return rd.arrived.count(a) != 0; });
            if (all_arrived && !rd.arrived.empty()) {
                rd.complete = true;
                rd.result = rd.accum;
            }
        }
    }

    void gc_rounds() {
        while (!rounds.empty()) {
            auto& f = rounds.front();
            if (!(f.complete || f.aborted)) {
                break;
            }
            bool drained = std::all_of(f.arrived.begin(), f.arrived.end(),
                                       [&](RankId a) { return f.collected.count(a) != 0; });
            if (!drained) {
                break;
            }
            rounds.pop_front();
            ++round_base;
        }
    }

    // Fail-stop: mark dead, abort open collective rounds, wake everyone.
    // Caller must hold the turn.
    void kill(RankId r) {
        dead[r] = true;
        death_log.push_back(r);
        record(TraceOp::Death, r, r, 0);
        for (auto& rd : rounds) {
            if (!rd.complete && !rd.aborted && !rd.arrived.empty()) {
                rd.aborted = true;
                rd.abort_rank = r;
            }
        }
        try_complete_front_rounds();
        op_done();
    }
};

World::World(int p, FaultSchedule schedule, std::uint64_t seed, WorldOptions opts)
    : p_(p), seed_(seed) {
    if (p < 1) {
        throw InvalidScheduleError("world size must be >= 1");
    }
    schedule.validate(p);
    impl_ = std::make_unique<Impl>(p, std::move(schedule), seed, opts);
}

World::~World() = default;

void World::run(const std::function<void(Rank&)>& body) {
    std::vector<std::thread> threads;
    threads.reserve(p_);
    for (int r = 0; r < p_; ++r) {
        threads.emplace_back([this, r, &body] {
            Rank rank(this, r);
            try {
                body(rank);
                std::lock_guard<std::mutex> lk(impl_->mu);
                impl_->finished[r] = true;
                if (impl_->turn == r) {
                    impl_->advance_turn();
                }
                impl_->cv.notify_all();
            } catch (const FailStopSignal&) {
                // death already recorded under the turn
            } catch (...) {
                std::lock_guard<std::mutex> lk(impl_->mu);
                if (!impl_->first_error) {
                    impl_->first_error = std::current_exception();
                }
                impl_->finished[r] = true;
                impl_->abort_world("rank body error");
                if (impl_->turn == r) {
                    impl_->advance_turn();
                }
            }
        });
    }
    for (auto& t : threads) {
        t.join();
    }
    if (impl_->first_error) {
        std::rethrow_exception(impl_->first_error);
    }
}

const std::vector<TraceEvent>& World::trace() const { return impl_->trace; }

std::vector<RankId> World::death_order() const {
    std::lock_guard<std::mutex> lk(impl_->mu);
    return impl_->death_log;
}

std::vector<RankId> World::alive_ranks_now() const {
    std::lock_guard<std::mutex> lk(impl_->mu);
    return impl_->alive_now();
}

// ---- Rank ----

int Rank::world_size() const { return world_->p_; }

std::uint64_t Rank::seed() const { return world_->seed_; }

bool Rank::alive(RankId r) const {
    auto& im = *world_->impl_;
    std::unique_lock<std::mutex> lk(im.mu);
    im.wait_for_turn(lk, id_);
    bool out = (r >= 0 && r < im.p) && !im.dead[r];
    im.op_done();
    return out;
}

std::vector<RankId> Rank::alive_ranks() const {
    auto& im = *world_->impl_;
    std::unique_lock<std::mutex> lk(im.mu);
    im.wait_for_turn(lk, id_);
    auto out = im.alive_now();
    im.op_done();
    return out;
}

RankId Rank::master() const {
    auto a = alive_ranks();
    return a.empty() ? -1 : a.front();
}

std::optional<RankId> Rank::next_alive_successor(RankId r) const {
    auto& im = *world_->impl_;
    std::unique_lock<std::mutex> lk(im.mu);
    im.wait_for_turn(lk, id_);
    std::optional<RankId> out;
    for (int i = 1; i < im.p; ++i) {
        int c = (r + i) % im.p;
        if (!im.dead[c]) {
            out = c;
            break;
        }
    }
    im.op_done();
    return out;
}

void Rank::win_create(int slot, std::size_t bytes, WinKind kind) {
    auto& im = *world_->impl_;
    std::unique_lock<std::mutex> lk(im.mu);
    im.wait_for_turn(lk, id_);
    if (im.wins[id_].count(slot) != 0) {
        im.op_done();
        throw Error("window slot already exists: " + std::to_string(slot));
    }
    Window w;
    w.mem.assign(bytes, 0);
    w.kind = kind;
    im.wins[id_].emplace(slot, std::move(w));
    im.record(TraceOp::WinCreate, id_, id_, bytes);
    im.op_done();
}

void Rank::win_resize(int slot, std::size_t bytes) {
    auto& im = *world_->impl_;
    std::unique_lock<std::mutex> lk(im.mu);
    im.wait_for_turn(lk, id_);
    try {
        Window& w = im.window(id_, slot);
        if (w.kind != WinKind::Dynamic) {
            throw Error("resize on a static window");
        }
        w.mem.resize(bytes, 0);
        im.record(TraceOp::WinResize, id_, id_, bytes);
    } catch (...) {
        im.op_done();
        throw;
    }
    im.op_done();
}

std::size_t Rank::win_capacity(RankId owner, int slot) const {
    auto& im = *world_->impl_;
    std::unique_lock<std::mutex> lk(im.mu);
    im.wait_for_turn(lk, id_);
    std::size_t out = 0;
    try {
        out = im.window(owner, slot).mem.size();
    } catch (...) {
        im.op_done();
        throw;
    }
    im.op_done();
    return out;
}

void Rank::put(RankId target, int slot, std::size_t offset, std::span<const std::uint8_t> payload) {
    auto& im = *world_->impl_;
    std::unique_lock<std::mutex> lk(im.mu);
    im.wait_for_turn(lk, id_);
    try {
        im.check_alive(target);
        Window& w = im.window(target, slot);
        im.check_bounds(w, offset, payload.size());
        std::memcpy(w.mem.data() + offset, payload.data(), payload.size());
        im.record(TraceOp::Put, id_, target, payload.size());
    } catch (...) {
        im.op_done();
        throw;
    }
    im.op_done();
}

std::vector<std::uint8_t> Rank::get(RankId target, int slot, std::size_t offset, std::size_t len) {
    auto& im = *world_->impl_;
    std::unique_lock<std::mutex> lk(im.mu);
    im.wait_for_turn(lk, id_);
    std::vector<std::uint8_t> out;
    try {
        im.check_alive(target);
        Window& w = im.window(target, slot);
        im.check_bounds(w, offset, len);
        out.assign(w.mem.begin() + static_cast<std::ptrdiff_t>(offset),
                   w.mem.begin() + static_cast<std::ptrdiff_t>(offset + len));
        im.record(TraceOp::Get, id_, target, len);
    } catch (...) {
        im.op_done();
        throw;
    }
    im.op_done();
    return out;
}

std::int64_t Rank::fetch_add(RankId target, int slot, std::size_t offset, std::int64_t delta) {
    auto& im = *world_->impl_;
    std::unique_lock<std::mutex> lk(im.mu);
    im.wait_for_turn(lk, id_);
    std::int64_t old = 0;
    try {
        im.check_alive(target);
        Window& w = im.window(target, slot);
        im.check_bounds(w, offset, sizeof(std::int64_t));
        std::memcpy(&old, w.mem.data() + offset, sizeof(old));
        std::int64_t updated = old + delta;
        std::memcpy(w.mem.data() + offset, &updated, sizeof(updated));
        im.record(TraceOp::FetchAdd, id_, target, sizeof(std::int64_t));
    } catch (...) {
        im.op_done();
        throw;
    }
    im.op_done();
    return old;
}

void Rank::send(RankId target, int tag, std::span<const std::uint8_t> payload) {
    auto& im = *world_->impl_;
    std::unique_lock<std::mutex> lk(im.mu);
    im.wait_for_turn(lk, id_);
    try {
        im.check_alive(target);
        im.channel(id_, target).push_back(Message{tag, {payload.begin(), payload.end()}});
        im.record(TraceOp::Send, id_, target, payload.size());
    } catch (...) {
        im.op_done();
        throw;
    }
    im.op_done();
}

std::vector<std::uint8_t> Rank::recv(RankId source, int tag) {
    auto& im = *world_->impl_;
    std::unique_lock<std::mutex> lk(im.mu);
    for (;;) {
        im.wait_for_turn(lk, id_);
        auto& q = im.channel(source, id_);
        auto it = std::find_if(q.begin(), q.end(), [&](const Message& m) { return m.tag == tag; });
        if (it != q.end()) {
            auto bytes = std::move(it->bytes);
            q.erase(it);
            im.parked[id_] = false;
            im.record(TraceOp::Recv, id_, source, bytes.size());
            im.op_done();
            return bytes;
        }
        if (im.dead[source]) {
            im.parked[id_] = false;
            im.op_done();
            throw RankDeadError(source);
        }
        im.park_recheck_failed(id_);
    }
}

std::optional<std::vector<std::uint8_t>> Rank::try_recv(RankId source, int tag) {
    auto& im = *world_->impl_;
    std::unique_lock<std::mutex> lk(im.mu);
    im.wait_for_turn(lk, id_);
    auto& q = im.channel(source, id_);
    auto it = std::find_if(q.begin(), q.end(), [&](const Message& m) { return m.tag == tag; });
    std::optional<std::vector<std::uint8_t>> out;
    if (it != q.end()) {
        out = std::move(it->bytes);
        q.erase(it);
        im.record(TraceOp::Recv, id_, source, out->size());
    }
    im.op_done();
    return out;
}

std::optional<std::pair<RankId, std::vector<std::uint8_t>>> Rank::try_recv_any(int tag) {
    auto& im = *world_->impl_;
    std::unique_lock<std::mutex> lk(im.mu);
    im.wait_for_turn(lk, id_);
    std::optional<std::pair<RankId, std::vector<std::uint8_t>>> out;
    for (int src = 0; src < im.p && !out; ++src) {
        auto& q = im.channel(src, id_);
        auto it = std::find_if(q.begin(), q.end(), [&](const Message& m) { return m.tag == tag; });
        if (it != q.end()) {
            out = std::make_pair(src, std::move(it->bytes));
            q.erase(it);
            im.record(TraceOp::Recv, id_, src, out->second.size());
        }
    }
    im.op_done();
    return out;
}

std::vector<std::int64_t> Rank::allreduce_sum(std::span<const std::int64_t> local) {
    auto& im = *world_->impl_;
    std::unique_lock<std::mutex> lk(im.mu);
    im.wait_for_turn(lk, id_);

    const std::uint64_t my_round = im.next_round[id_]++;
    CollectiveRound& rd0 = im.round_at(my_round);
    if (!rd0.aborted) {
        if (!rd0.has_accum) {
            rd0.accum.assign(local.begin(), local.end());
            rd0.has_accum = true;
        } else {
            if (rd0.accum.size() != local.size()) {
                im.op_done();
                throw Error("allreduce vector length mismatch");
            }
            for (std::size_t i = 0; i < local.size(); ++i) {
                rd0.accum[i] += local[i];
            }
        }
        rd0.arrived.insert(id_);
        im.try_complete_front_rounds();
        im.record(TraceOp::Allreduce, id_, id_, local.size_bytes());
    }
    im.op_done();

    for (;;) {
        im.wait_for_turn(lk, id_);
        CollectiveRound& rd = im.round_at(my_round);
        if (rd.aborted) {
            RankId culprit = rd.abort_rank;
            rd.collected.insert(id_);
            im.parked[id_] = false;
            im.gc_rounds();
            im.op_done();
            throw RankDeadError(culprit);
        }
        if (rd.complete) {
            auto result = rd.result;
            rd.collected.insert(id_);
            im.parked[id_] = false;
            im.gc_rounds();
            im.op_done();
            return result;
        }
        im.park_recheck_failed(id_);
    }
}

void Rank::barrier() {
    std::vector<std::int64_t> empty;
    (void)allreduce_sum(std::span<const std::int64_t>(empty.data(), 0));
}

std::vector<RankId> Rank::poll_faults() {
    auto& im = *world_->impl_;
    std::unique_lock<std::mutex> lk(im.mu);
    im.wait_for_turn(lk, id_);
    std::vector<RankId> out;
    auto& cursor = im.death_cursor[id_];
    while (cursor < im.death_log.size()) {
        out.push_back(im.death_log[cursor++]);
    }
    im.op_done();
    return out;
}

void Rank::progress_transactions(std::uint64_t done, std::uint64_t total) {
    auto& im = *world_->impl_;
    auto& t = im.trig[id_];
    if (!t.armed) {
        return;
    }
    bool fires = false;
    switch (t.ev.kind) {
        case FaultTrigger::AfterTransactions:
            fires = done >= t.ev.count;
            break;
        case FaultTrigger::AtProgressFraction: {
            if (!t.threshold_set) {
                t.threshold = static_cast<std::uint64_t>(
                    std::ceil(t.ev.fraction * static_cast<double>(total) - 1e-9));
                t.threshold_set = true;
            }
            fires = done >= t.threshold;
            break;
        }
        case FaultTrigger::AfterIteration:
            break;
    }
    if (!fires) {
        return;
    }
    std::unique_lock<std::mutex> lk(im.mu);
    im.wait_for_turn(lk, id_);
    im.kill(id_);
    throw FailStopSignal{};
}

void Rank::progress_iteration(std::uint64_t iteration, std::uint64_t total) {
    auto& im = *world_->impl_;
    auto& t = im.trig[id_];
    if (!t.armed) {
        return;
    }
    bool fires = false;
    switch (t.ev.kind) {
        case FaultTrigger::AfterIteration:
            fires = iteration >= t.ev.count;
            break;
        case FaultTrigger::AtProgressFraction: {
            if (!t.threshold_set) {
                t.threshold = static_cast<std::uint64_t>(
                    std::ceil(t.ev.fraction * static_cast<double>(total) - 1e-9));
                t.threshold_set = true;
            }
            fires = iteration >= t.threshold;
            break;
        }
        case FaultTrigger::AfterTransactions:
            break;
    }
    if (!fires) {
        return;
    }
    std::unique_lock<std::mutex> lk(im.mu);
    im.wait_for_turn(lk, id_);
    im.kill(id_);
    throw FailStopSignal{};
}

void Rank::yield() {
    auto& im = *world_->impl_;
    std::unique_lock<std::mutex> lk(im.mu);
    im.wait_for_turn(lk, id_);
    im.op_done();
}

void Rank::push_scope(const char* label) {
    auto& im = *world_->impl_;
    std::lock_guard<std::mutex> lk(im.mu);
    im.scopes[id_].push_back(label);
}

void Rank::pop_scope() {
    auto& im = *world_->impl_;
    std::lock_guard<std::mutex> lk(im.mu);
    im.scopes[id_].pop_back();
}

}  // namespace ftmine::fabric
