#include "ftmine/checkpoint.hpp"

#include "ftmine/wire.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

namespace ftmine::checkpoint {

namespace fs = std::filesystem;

CheckpointPolicy CheckpointPolicy::for_shard(std::uint64_t shard_size, std::uint64_t c) {
    if (c < 1) {
        throw InvalidRangeError("checkpoint count must be >= 1");
    }
    CheckpointPolicy p;
    p.checkpoints = c;
    p.interval = shard_size == 0 ? 1 : (shard_size + c - 1) / c;
    if (p.interval == 0) {
        p.interval = 1;
    }
    return p;
}

CheckpointKind amft_decide(std::int64_t free_bytes, std::int64_t tree_bytes,
                           std::int64_t remaining_bytes, bool complete_done) {
    if (!complete_done && free_bytes >= tree_bytes + remaining_bytes) {
        return CheckpointKind::Complete;
    }
    if (free_bytes >= tree_bytes) {
        return CheckpointKind::Partial;
    }
    return CheckpointKind::None;
}

std::vector<std::uint8_t> pack_source_fields(const MetadataRecord& m, int source) {
    wire::Writer w;
    w.i64(m.cf_ptr);
    w.i64(m.cfs);
    w.i64(m.ct);
    w.i64(m.sct);
    w.i64(m.nct);
    w.i64(source);
    return w.take();
}

std::pair<MetadataRecord, int> unpack_source_fields(std::span<const std::uint8_t> bytes) {
    wire::Reader r(bytes);
    MetadataRecord m;
    m.cf_ptr = r.i64();
    m.cfs = r.i64();
    m.ct = r.i64();
    m.sct = r.i64();
    m.nct = r.i64();
    int source = static_cast<int>(r.i64());
    return {m, source};
}

std::vector<std::uint8_t> serialize_transactions(std::span<const Transaction> txns) {
    wire::Writer w;
    for (const auto& t : txns) {
        w.u32(static_cast<std::uint32_t>(t.size()));
        for (auto item : t) {
            w.u32(item);
        }
    }
    return w.take();
}

std::vector<Transaction> parse_transactions(std::span<const std::uint8_t> bytes,
                                            std::size_t expect_count) {
    wire::Reader r(bytes);
    std::vector<Transaction> out;
    out.reserve(expect_count);
    for (std::size_t i = 0; i < expect_count; ++i) {
        std::uint32_t len = r.u32();
        Transaction t(len);
        for (std::uint32_t j = 0; j < len; ++j) {
            t[j] = r.u32();
        }
        out.push_back(std::move(t));
    }
    return out;
}

// ---- DFT disk store ----

namespace {

std::uint32_t fnv32(std::span<const std::uint8_t> bytes) {
    std::uint32_t h = 0x811c9dc5u;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 16777619u;
    }
    return h;
}

void write_file_atomic(const fs::path& final_path, std::span<const std::uint8_t> bytes) {
    fs::path tmp = final_path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write " + tmp.string());
        }
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw IoError("short write " + tmp.string());
        }
    }
    fs::rename(tmp, final_path);
}

std::optional<std::vector<std::uint8_t>> read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        return std::nullopt;
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

}  // namespace

std::string DftStore::rank_dir(const std::string& root, int rank) {
    return (fs::path(root) / ("rank" + std::to_string(rank))).string();
}

DftStore::DftStore(std::string root, int rank) : root_(std::move(root)), rank_(rank) {
    fs::create_directories(rank_dir(root_, rank_));
}

void DftStore::write_epoch(std::span<const std::uint8_t> payload, std::uint32_t ct) {
    const fs::path dir = rank_dir(root_, rank_);
    const std::uint32_t e = next_epoch_++;
    write_file_atomic(dir / ("epoch" + std::to_string(e) + ".tree"), payload);

    wire::Writer meta;
    meta.u32(e);
    meta.u32(ct);
    meta.u32(fnv32(payload));
    meta.u32(1);  // committed
    write_file_atomic(dir / ("epoch" + std::to_string(e) + ".meta"), meta.data());

    if (e >= 2) {
        std::error_code ec;
        fs::remove(dir / ("epoch" + std::to_string(e - 2) + ".tree"), ec);
        fs::remove(dir / ("epoch" + std::to_string(e - 2) + ".meta"), ec);
    }
}

std::optional<DftStore::Loaded> DftStore::load_latest(const std::string& root, int rank,
                                                      dataset::ReadStats* stats,
                                                      double read_delay_ms) {
    const fs::path dir = rank_dir(root, rank);
    if (!fs::exists(dir)) {
        return std::nullopt;
    }
    std::optional<Loaded> best;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("epoch", 0) != 0 || entry.path().extension() != ".meta") {
            continue;
        }
        auto meta_bytes = read_file(entry.path());
        if (!meta_bytes || meta_bytes->size() != 16) {
            continue;
        }
        wire::Reader r(*meta_bytes);
        std::uint32_t epoch = r.u32();
        std::uint32_t ct = r.u32();
        std::uint32_t checksum = r.u32();
        std::uint32_t flag = r.u32();
        if (flag != 1) {
            continue;
        }
        fs::path tree_path = dir / ("epoch" + std::to_string(epoch) + ".tree");
        auto payload = read_file(tree_path);
        if (!payload || fnv32(*payload) != checksum) {
            continue;
        }
        if (stats != nullptr) {
            stats->read_calls.fetch_add(1, std::memory_order_relaxed);
        }
        if (read_delay_ms > 0.0) {
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(read_delay_ms));
        }
        if (!best || ct > best->ct || (ct == best->ct && epoch > best->epoch)) {
            best = Loaded{std::move(*payload), ct, epoch};
        }
    }
    return best;
}

// ---- strategies ----

namespace {

class StrategyBase : public FpStrategy {
public:
    explicit StrategyBase(Setup setup) : s_(setup) {}

protected:
    fabric::Rank& rank() { return *s_.rank; }
    metrics::Registry& reg() { return *s_.registry; }
    const std::vector<Transaction>& shard() const { return *s_.shard; }

    // Fresh ring target; nullopt once this rank is the only survivor.
    std::optional<fabric::RankId> fresh_target() {
        auto t = rank().next_alive_successor(rank().id());
        if (!t || *t == rank().id()) {
            return std::nullopt;
        }
        return t;
    }

    Setup s_;
};

class NoneStrategy final : public StrategyBase {
public:
    using StrategyBase::StrategyBase;
    const char* name() const override { return "none"; }
    void checkpoint(const fptree::FpTree&, std::uint64_t) override {}
    std::optional<MetadataRecord> stored_metadata_for(fabric::RankId) override {
        return std::nullopt;
    }
    std::vector<std::uint8_t> stored_tree_bytes(const MetadataRecord&) override { return {}; }
    std::vector<Transaction> stored_transactions(const MetadataRecord&) override { return {}; }
};

class DftStrategy final : public StrategyBase {
public:
    explicit DftStrategy(Setup setup)
        : StrategyBase(setup), store_(setup.ckpt_dir, setup.rank->id()) {}

    const char* name() const override { return "dft"; }

    void checkpoint(const fptree::FpTree& tree, std::uint64_t processed) override {
        auto t0 = std::chrono::steady_clock::now();
        auto bytes = tree.serialize();
        store_.write_epoch(bytes, static_cast<std::uint32_t>(processed - 1));
        reg().add_ckpt_bytes(bytes.size());
        auto t1 = std::chrono::steady_clock::now();
        reg().add_ckpt_ns(static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
    }

    std::optional<MetadataRecord> stored_metadata_for(fabric::RankId failed) override {
        auto loaded = DftStore::load_latest(s_.ckpt_dir, failed, &reg().recovery_reads(),
                                            s_.disk_delay_ms);
        if (!loaded) {
            return std::nullopt;
        }
        MetadataRecord m;
        m.cfs = static_cast<std::int64_t>(loaded->payload.size());
        m.ct = loaded->ct;
        cached_tree_ = std::move(loaded->payload);
        return m;
    }

    std::vector<std::uint8_t> stored_tree_bytes(const MetadataRecord&) override {
        return cached_tree_;
    }

    std::vector<Transaction> stored_transactions(const MetadataRecord&) override {
        return {};  // DFT never checkpoints transactions; the dataset is on disk
    }

private:
    DftStore store_;
    std::vector<std::uint8_t> cached_tree_;
};

// Shared plumbing for the two memory-based strategies: window-backed
// metadata and per-target state reset on re-targeting.
class MemoryStrategyBase : public StrategyBase {
public:
    using StrategyBase::StrategyBase;

    bool memory_based() const override { return true; }

    void handle_deaths(const std::vector<fabric::RankId>& dead, const fptree::FpTree& tree,
                       std::uint64_t processed) override {
        if (!target_) {
            return;
        }
        if (std::find(dead.begin(), dead.end(), *target_) == dead.end()) {
            return;
        }
        // Backup holder failed: immediately re-replicate to the next alive
        // successor, cascading through further deaths.
        target_.reset();
        critical_checkpoint(tree, processed);
    }

    void recovery_critical_checkpoint(bool as_source, fabric::RankId source,
                                      const fptree::FpTree& tree,
                                      std::uint64_t processed) override {
        if (as_source) {
            target_.reset();
            critical_checkpoint(tree, processed);
        } else {
            serve_one_critical(source);
        }
    }

protected:
    void critical_checkpoint(const fptree::FpTree& tree, std::uint64_t processed) {
        critical_mode_ = true;
        for (;;) {
            auto t = fresh_target();
            if (!t) {
                reg().set_degraded();
                break;
            }
            try {
                checkpoint(tree, processed);
                break;
            } catch (const RankDeadError&) {
                target_.reset();  // cascade to the next alive successor
            }
        }
        critical_mode_ = false;
    }

    // SMFT overrides this to answer the handshake; one-sided AMFT needs no
    // target-side action.
    virtual void serve_one_critical(fabric::RankId source) { (void)source; }

    void retarget_if_needed(fabric::RankId t) {
        if (target_ && *target_ == t) {
            return;
        }
        target_ = t;
        // Checkpoints stored on the previous target are gone with it.
        trans_offset_ = 0;
        trans_bytes_ = 0;
        trans_count_ = 0;
        sct_ = 0;
    }

    std::optional<fabric::RankId> target_;
    bool critical_mode_ = false;
    bool complete_done_ = false;  // once-complete rule survives re-targeting
    std::int64_t trans_offset_ = 0;
    std::int64_t trans_bytes_ = 0;
    std::int64_t trans_count_ = 0;
    std::int64_t sct_ = 0;
};

class AmftStrategy final : public MemoryStrategyBase {
public:
    using MemoryStrategyBase::MemoryStrategyBase;

    const char* name() const override { return "amft"; }

    void init() override {
        prefix_bytes_.assign(shard().size() + 1, 0);
        for (std::size_t i = 0; i < shard().size(); ++i) {
            prefix_bytes_[i + 1] = prefix_bytes_[i] + dataset::transaction_bytes(shard()[i]);
        }
        shard_bytes_ = prefix_bytes_.back();

        rank().win_create(kSlotMeta, kMetaWindowBytes, fabric::WinKind::Static);
        rank().win_create(kSlotTransWin, shard_bytes_, fabric::WinKind::Static);
        if (shard_bytes_ > 0) {
            auto all = serialize_transactions(shard());
            rank().put(rank().id(), kSlotTransWin, 0, all);
        }
        reg().set_capacity(rank().id(), shard_bytes_);
    }

    void on_transaction_processed(std::uint64_t processed) override {
        // Publish reclaimed space: this is the LS-PTR watermark other
        // ranks read before checkpointing here. Local, no peer involved.
        std::int64_t delta = static_cast<std::int64_t>(prefix_bytes_[processed]) -
                             static_cast<std::int64_t>(prefix_bytes_[processed - 1]);
        rank().fetch_add(rank().id(), kSlotMeta, 0, delta);
        reg().set_unprocessed(rank().id(), shard_bytes_ - prefix_bytes_[processed]);
        if (need_critical_ && s_.tree != nullptr) {
            need_critical_ = false;
            critical_checkpoint(*s_.tree, processed);
        }
    }

    void checkpoint(const fptree::FpTree& tree, std::uint64_t processed) override {
        auto t = fresh_target();
        if (!t) {
            reg().set_degraded();
            return;
        }
        retarget_if_needed(*t);
        const fabric::RankId target = *target_;

        auto t0 = std::chrono::steady_clock::now();
        fabric::TraceScope scope(rank(), "ckpt");

        // Atomic read of the target's free-space watermark; no target-side
        // code runs on this path.
        std::int64_t avail = rank().fetch_add(target, kSlotMeta, 0, 0);
        auto tree_bytes = tree.serialize();
        const std::int64_t tree_sz = static_cast<std::int64_t>(tree_bytes.size());
        const std::int64_t remaining_count =
            static_cast<std::int64_t>(shard().size()) - static_cast<std::int64_t>(processed);
        const std::int64_t remaining_bytes =
            static_cast<std::int64_t>(shard_bytes_ - prefix_bytes_[processed]);

        const std::int64_t free_bytes = trans_offset_ > 0 ? trans_offset_ : avail;
        CheckpointKind kind = amft_decide(free_bytes, tree_sz, remaining_bytes, complete_done_);

        MetadataRecord m;
        switch (kind) {
            case CheckpointKind::None:
                reg().count_kind(0, 0, 1);
                if (critical_mode_) {
                    need_critical_ = true;  // replica missing; retry per transaction
                }
                return;  // otherwise retried at the next scheduled opportunity
            case CheckpointKind::Complete: {
                if (remaining_count > 0) {
                    auto txn_bytes = serialize_transactions(
                        std::span<const Transaction>(shard().data() + processed,
                                                     static_cast<std::size_t>(remaining_count)));
                    trans_offset_ = avail - remaining_bytes;
                    rank().put(target, kSlotTransWin,
                               static_cast<std::size_t>(trans_offset_), txn_bytes);
                    trans_bytes_ = remaining_bytes;
                    trans_count_ = remaining_count;
                    reg().add_ckpt_bytes(txn_bytes.size());
                } else {
                    trans_offset_ = 0;
                    trans_bytes_ = 0;
                    trans_count_ = 0;
                }
                sct_ = static_cast<std::int64_t>(processed);
                complete_done_ = true;
                reg().count_kind(1, 0, 0);
                break;
            }
            case CheckpointKind::Partial:
                reg().count_kind(0, 1, 0);
                break;
        }

        rank().put(target, kSlotTransWin, 0, tree_bytes);
        m.cf_ptr = trans_offset_;
        m.cfs = tree_sz;
        m.ct = static_cast<std::int64_t>(processed) - 1;
        m.sct = sct_;
        m.nct = trans_count_;
        rank().put(target, kSlotMeta, kMetaSourceFieldsOffset,
                   pack_source_fields(m, rank().id()));

        reg().add_ckpt_bytes(tree_bytes.size());
        reg().set_ckpt_resident(target, static_cast<std::uint64_t>(tree_sz + trans_bytes_));
        auto t1 = std::chrono::steady_clock::now();
        reg().add_ckpt_ns(static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
    }

    std::optional<MetadataRecord> stored_metadata_for(fabric::RankId failed) override {
        auto bytes = rank().get(rank().id(), kSlotMeta, kMetaSourceFieldsOffset,
                                kMetaWindowBytes - kMetaSourceFieldsOffset);
        auto [m, source] = unpack_source_fields(bytes);
        if (source != failed || m.cfs == 0) {
            return std::nullopt;
        }
        return m;
    }

    std::vector<std::uint8_t> stored_tree_bytes(const MetadataRecord& meta) override {
        return rank().get(rank().id(), kSlotTransWin, 0, static_cast<std::size_t>(meta.cfs));
    }

    std::vector<Transaction> stored_transactions(const MetadataRecord& meta) override {
        std::size_t cap = rank().win_capacity(rank().id(), kSlotTransWin);
        auto bytes = rank().get(rank().id(), kSlotTransWin,
                                static_cast<std::size_t>(meta.cf_ptr),
                                cap - static_cast<std::size_t>(meta.cf_ptr));
        return parse_transactions(bytes, static_cast<std::size_t>(meta.nct));
    }

protected:
    void serve_one_critical(fabric::RankId) override {}  // one-sided: nothing to serve

private:
    std::vector<std::uint64_t> prefix_bytes_;
    std::uint64_t shard_bytes_ = 0;
    bool need_critical_ = false;
};

class SmftStrategy final : public MemoryStrategyBase {
public:
    using MemoryStrategyBase::MemoryStrategyBase;

    const char* name() const override { return "smft"; }

    void init() override {
        rank().win_create(kSlotMeta, kMetaWindowBytes, fabric::WinKind::Static);
        rank().win_create(kSlotChkTree, 0, fabric::WinKind::Dynamic);
        rank().win_create(kSlotChkTrans, 0, fabric::WinKind::Dynamic);
    }

    void service() override {
        while (auto req = rank().try_recv_any(kTagSmftSize)) {
            auto [from, payload] = std::move(*req);
            wire::Reader r(payload);
            std::uint32_t which = r.u32();
            std::uint64_t size = r.u64();
            rank().win_resize(which == 0 ? kSlotChkTree : kSlotChkTrans, size);
            wire::Writer ack;
            ack.u64(0);  // base offset of the re-attached vector
            rank().send(from, kTagSmftAddr, ack.data());
        }
    }

    void checkpoint(const fptree::FpTree& tree, std::uint64_t processed) override {
        auto t = fresh_target();
        if (!t) {
            reg().set_degraded();
            return;
        }
        retarget_if_needed(*t);
        const fabric::RankId target = *target_;

        auto t0 = std::chrono::steady_clock::now();
        fabric::TraceScope scope(rank(), "ckpt");

        auto tree_bytes = tree.serialize();
        handshake_and_put(target, 0, kSlotChkTree, tree_bytes);
        reg().add_ckpt_bytes(tree_bytes.size());

        // Remaining transactions are checkpointed exactly once, at the
        // first round where they fit the space already reclaimed.
        const std::uint64_t total = shard().size();
        if (trans_count_ == 0 && !trans_done_ && processed > 0 && total - processed <= processed &&
            total - processed > 0) {
            auto txns = serialize_transactions(std::span<const Transaction>(
                shard().data() + processed, static_cast<std::size_t>(total - processed)));
            handshake_and_put(target, 1, kSlotChkTrans, txns);
            trans_count_ = static_cast<std::int64_t>(total - processed);
            trans_bytes_ = static_cast<std::int64_t>(txns.size());
            trans_offset_ = 1;  // presence tag; the region lives in its own window
            sct_ = static_cast<std::int64_t>(processed);
            trans_done_ = true;
            reg().add_ckpt_bytes(txns.size());
            reg().count_kind(1, 0, 0);
        } else {
            reg().count_kind(0, 1, 0);
        }

        MetadataRecord m;
        m.cf_ptr = trans_offset_;
        m.cfs = static_cast<std::int64_t>(tree_bytes.size());
        m.ct = static_cast<std::int64_t>(processed) - 1;
        m.sct = sct_;
        m.nct = trans_count_;
        rank().put(target, kSlotMeta, kMetaSourceFieldsOffset,
                   pack_source_fields(m, rank().id()));

        auto t1 = std::chrono::steady_clock::now();
        reg().add_ckpt_ns(static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
    }

    void drain() override {
        for (fabric::RankId r : rank().alive_ranks()) {
            if (r == rank().id()) {
                continue;
            }
            try {
                rank().send(r, kTagPhaseDone, {});
            } catch (const RankDeadError&) {
            }
        }
        std::vector<bool> done(static_cast<std::size_t>(rank().world_size()), false);
        for (;;) {
            service();
            while (auto d = rank().try_recv_any(kTagPhaseDone)) {
                done[static_cast<std::size_t>(d->first)] = true;
            }
            bool all = true;
            for (fabric::RankId r : rank().alive_ranks()) {
                if (r != rank().id() && !done[static_cast<std::size_t>(r)]) {
                    all = false;
                    break;
                }
            }
            if (all) {
                return;
            }
            rank().yield();
        }
    }

    std::optional<MetadataRecord> stored_metadata_for(fabric::RankId failed) override {
        auto bytes = rank().get(rank().id(), kSlotMeta, kMetaSourceFieldsOffset,
                                kMetaWindowBytes - kMetaSourceFieldsOffset);
        auto [m, source] = unpack_source_fields(bytes);
        if (source != failed || m.cfs == 0) {
            return std::nullopt;
        }
        return m;
    }

    std::vector<std::uint8_t> stored_tree_bytes(const MetadataRecord& meta) override {
        return rank().get(rank().id(), kSlotChkTree, 0, static_cast<std::size_t>(meta.cfs));
    }

    std::vector<Transaction> stored_transactions(const MetadataRecord& meta) override {
        std::size_t cap = rank().win_capacity(rank().id(), kSlotChkTrans);
        auto bytes = rank().get(rank().id(), kSlotChkTrans, 0, cap);
        return parse_transactions(bytes, static_cast<std::size_t>(meta.nct));
    }

protected:
    void serve_one_critical(fabric::RankId source) override {
        fabric::TraceScope scope(rank(), "recover");
        for (;;) {
            if (auto req = rank().try_recv(source, kTagSmftSize)) {
                wire::Reader r(*req);
                std::uint32_t which = r.u32();
                std::uint64_t size = r.u64();
                rank().win_resize(which == 0 ? kSlotChkTree : kSlotChkTrans, size);
                wire::Writer ack;
                ack.u64(0);
                rank().send(source, kTagSmftAddr, ack.data());
                return;
            }
            rank().yield();
        }
    }

private:
    // Size request, owner-side resize, address announcement, then the
    // one-sided payload transfer.
    void handshake_and_put(fabric::RankId target, std::uint32_t which, int slot,
                           std::span<const std::uint8_t> payload) {
        wire::Writer req;
        req.u32(which);
        req.u64(payload.size());
        rank().send(target, kTagSmftSize, req.data());
        for (;;) {
            if (auto ack = rank().try_recv(target, kTagSmftAddr)) {
                break;
            }
            if (!rank().alive(target)) {
                throw RankDeadError(target);
            }
            service();  // keep answering our own source while blocked
            rank().yield();
        }
        rank().put(target, slot, 0, payload);
    }

    bool trans_done_ = false;
};

// ---- KNN strategies ----

class KnnStrategyBase : public KnnStrategy {
public:
    explicit KnnStrategyBase(Setup setup) : s_(setup) {}

protected:
    fabric::Rank& rank() { return *s_.rank; }
    metrics::Registry& reg() { return *s_.registry; }

    std::optional<fabric::RankId> alive_succ() {
        auto t = rank().next_alive_successor(rank().id());
        if (!t || *t == rank().id()) {
            return std::nullopt;
        }
        return t;
    }

    fabric::RankId alive_pred() {
        const int p = rank().world_size();
        for (int i = 1; i < p; ++i) {
            int c = (rank().id() - i % p + p) % p;
            if (rank().alive(c)) {
                return c;
            }
        }
        return rank().id();
    }

    Setup s_;
};

class KnnNoneStrategy final : public KnnStrategyBase {
public:
    using KnnStrategyBase::KnnStrategyBase;
    void checkpoint(std::span<const std::uint8_t>, std::uint64_t) override {}
    std::optional<knn::QueueSnapshot> load_checkpoint(fabric::RankId) override {
        return std::nullopt;
    }
};

class KnnDftStrategy final : public KnnStrategyBase {
public:
    explicit KnnDftStrategy(Setup setup)
        : KnnStrategyBase(setup), store_(setup.ckpt_dir, setup.rank->id()) {}

    void checkpoint(std::span<const std::uint8_t> snapshot, std::uint64_t tag) override {
        auto t0 = std::chrono::steady_clock::now();
        store_.write_epoch(snapshot, static_cast<std::uint32_t>(tag));
        reg().add_ckpt_bytes(snapshot.size());
        auto t1 = std::chrono::steady_clock::now();
        reg().add_ckpt_ns(static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
    }

    std::optional<knn::QueueSnapshot> load_checkpoint(fabric::RankId failed) override {
        auto loaded = DftStore::load_latest(s_.ckpt_dir, failed, &reg().recovery_reads(),
                                            s_.disk_delay_ms);
        if (!loaded) {
            return std::nullopt;
        }
        auto snap = knn::parse_snapshot(loaded->payload);
        if (static_cast<fabric::RankId>(snap.owner) != failed) {
            return std::nullopt;
        }
        return snap;
    }

private:
    DftStore store_;
};

// One-sided: the successor reserves a buffer up front; each checkpoint is
// a single framed put.
class KnnAmftStrategy final : public KnnStrategyBase {
public:
    using KnnStrategyBase::KnnStrategyBase;

    void init(std::size_t reserve_bound) override {
        rank().win_create(kSlotQueueChk, 0, fabric::WinKind::Dynamic);
        exchange_and_resize(reserve_bound, "ckpt-init");
    }

    void checkpoint(std::span<const std::uint8_t> snapshot, std::uint64_t tag) override {
        (void)tag;  // the tag rides inside the snapshot
        auto succ = alive_succ();
        if (!succ) {
            reg().set_degraded();
            return;
        }
        auto t0 = std::chrono::steady_clock::now();
        fabric::TraceScope scope(rank(), "ckpt");
        wire::Writer framed;
        framed.u64(snapshot.size());
        framed.bytes(snapshot);
        rank().put(*succ, kSlotQueueChk, 0, framed.data());
        reg().add_ckpt_bytes(snapshot.size());
        auto t1 = std::chrono::steady_clock::now();
        reg().add_ckpt_ns(static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
    }

    std::optional<knn::QueueSnapshot> load_checkpoint(fabric::RankId failed) override {
        std::size_t cap = rank().win_capacity(rank().id(), kSlotQueueChk);
        if (cap < 8) {
            return std::nullopt;
        }
        auto head = rank().get(rank().id(), kSlotQueueChk, 0, 8);
        wire::Reader r(head);
        std::uint64_t len = r.u64();
        if (len == 0 || len > cap - 8) {
            return std::nullopt;
        }
        auto payload = rank().get(rank().id(), kSlotQueueChk, 8, len);
        auto snap = knn::parse_snapshot(payload);
        if (static_cast<fabric::RankId>(snap.owner) != failed) {
            return std::nullopt;
        }
        return snap;
    }

    void post_recovery_reserve(std::size_t reserve_bound) override {
        exchange_and_resize(reserve_bound, "recover");
    }

private:
    // Symmetric bound announcement: tell the successor how much space my
    // snapshots need, size my own buffer for the predecessor's.
    void exchange_and_resize(std::size_t my_bound, const char* scope_label) {
        auto succ = alive_succ();
        if (!succ) {
            return;
        }
        fabric::TraceScope scope(rank(), scope_label);
        wire::Writer w;
        w.u64(my_bound);
        rank().send(*succ, kTagKnnSize, w.data());
        fabric::RankId pred = alive_pred();
        auto bytes = rank().recv(pred, kTagKnnSize);
        wire::Reader r(bytes);
        std::uint64_t pred_bound = r.u64();
        std::size_t want = 8 + pred_bound;
        std::size_t cap = rank().win_capacity(rank().id(), kSlotQueueChk);
        if (want > cap) {
            rank().win_resize(kSlotQueueChk, want);
        }
    }
};

// Per-round size handshake: the successor resizes before the put, which
// is what the synchronous variant trades for not reserving up front.
class KnnSmftStrategy final : public KnnStrategyBase {
public:
    using KnnStrategyBase::KnnStrategyBase;

    void init(std::size_t) override {
        rank().win_create(kSlotQueueChk, 0, fabric::WinKind::Dynamic);
    }

    void checkpoint(std::span<const std::uint8_t> snapshot, std::uint64_t tag) override {
        auto succ = alive_succ();
        if (!succ) {
            reg().set_degraded();
            return;
        }
        auto t0 = std::chrono::steady_clock::now();
        fabric::TraceScope scope(rank(), "ckpt");

        // A: announce my size to the successor.
        wire::Writer req;
        req.u64(tag);
        req.u64(snapshot.size());
        try {
            rank().send(*succ, kTagKnnSize, req.data());
        } catch (const RankDeadError&) {
            return;
        }

        // B: serve the predecessor's announcement for this round.
        fabric::RankId pred = alive_pred();
        while (pred != rank().id()) {
            auto msg = rank().try_recv(pred, kTagKnnSize);
            if (msg) {
                wire::Reader r(*msg);
                std::uint64_t round = r.u64();
                std::uint64_t len = r.u64();
                if (round < tag) {
                    continue;  // stale round left over from an aborted exchange
                }
                rank().win_resize(kSlotQueueChk, 8 + len);
                wire::Writer ack;
                ack.u64(round);
                rank().send(pred, kTagKnnAddr, ack.data());
                break;
            }
            if (!rank().alive(pred)) {
                break;
            }
            rank().yield();
        }

        // C: wait for my own ack, then transfer.
        for (;;) {
            auto ack = rank().try_recv(*succ, kTagKnnAddr);
            if (ack) {
                wire::Reader r(*ack);
                if (r.u64() < tag) {
                    continue;
                }
                wire::Writer framed;
                framed.u64(snapshot.size());
                framed.bytes(snapshot);
                try {
                    rank().put(*succ, kSlotQueueChk, 0, framed.data());
                    reg().add_ckpt_bytes(snapshot.size());
                } catch (const RankDeadError&) {
                }
                break;
            }
            if (!rank().alive(*succ)) {
                break;
            }
            rank().yield();
        }
        auto t1 = std::chrono::steady_clock::now();
        reg().add_ckpt_ns(static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
    }

    std::optional<knn::QueueSnapshot> load_checkpoint(fabric::RankId failed) override {
        std::size_t cap = rank().win_capacity(rank().id(), kSlotQueueChk);
        if (cap < 8) {
            return std::nullopt;
        }
        auto head = rank().get(rank().id(), kSlotQueueChk, 0, 8);
        wire::Reader r(head);
        std::uint64_t len = r.u64();
        if (len == 0 || len > cap - 8) {
            return std::nullopt;
        }
        auto payload = rank().get(rank().id(), kSlotQueueChk, 8, len);
        auto snap = knn::parse_snapshot(payload);
        if (static_cast<fabric::RankId>(snap.owner) != failed) {
            return std::nullopt;
        }
        return snap;
    }
};

}  // namespace

std::unique_ptr<FpStrategy> make_none_strategy(FpStrategy::Setup setup) {
    return std::make_unique<NoneStrategy>(setup);
}
std::unique_ptr<FpStrategy> make_dft_strategy(FpStrategy::Setup setup) {
    return std::make_unique<DftStrategy>(setup);
}
std::unique_ptr<FpStrategy> make_smft_strategy(FpStrategy::Setup setup) {
    return std::make_unique<SmftStrategy>(setup);
}
std::unique_ptr<FpStrategy> make_amft_strategy(FpStrategy::Setup setup) {
    return std::make_unique<AmftStrategy>(setup);
}

std::unique_ptr<KnnStrategy> make_knn_none_strategy(KnnStrategy::Setup setup) {
    return std::make_unique<KnnNoneStrategy>(setup);
}
std::unique_ptr<KnnStrategy> make_knn_dft_strategy(KnnStrategy::Setup setup) {
    return std::make_unique<KnnDftStrategy>(setup);
}
std::unique_ptr<KnnStrategy> make_knn_smft_strategy(KnnStrategy::Setup setup) {
    return std::make_unique<KnnSmftStrategy>(setup);
}
std::unique_ptr<KnnStrategy> make_knn_amft_strategy(KnnStrategy::Setup setup) {
    return std::make_unique<KnnAmftStrategy>(setup);
}

}  // namespace ftmine::checkpoint
