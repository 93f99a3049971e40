#pragma once

#include "ftmine/dataset.hpp"

#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

namespace ftmine::metrics {

// Shared per-run counter sink. Strategies and recovery report here; the
// harness turns it into the metrics row.
class Registry {
public:
    explicit Registry(int p) : space_(p) {}

    // ---- AMFT space accounting (per target rank) ----
    // peak of (resident checkpoint bytes + unprocessed transaction bytes),
    // updated whenever either side changes.
    void set_capacity(int rank, std::uint64_t bytes) {
        std::lock_guard<std::mutex> lk(mu_);
        space_[rank].capacity = bytes;
        space_[rank].unprocessed = bytes;
        bump_peak(rank);
    }
    void set_unprocessed(int rank, std::uint64_t bytes) {
        std::lock_guard<std::mutex> lk(mu_);
        space_[rank].unprocessed = bytes;
        bump_peak(rank);
    }
    void set_ckpt_resident(int rank, std::uint64_t bytes) {
        std::lock_guard<std::mutex> lk(mu_);
        space_[rank].resident = bytes;
        bump_peak(rank);
    }

    struct Space {
        std::uint64_t capacity = 0;
        std::uint64_t unprocessed = 0;
        std::uint64_t resident = 0;
        std::uint64_t peak = 0;
    };
    Space space(int rank) const {
        std::lock_guard<std::mutex> lk(mu_);
        return space_[rank];
    }
    int ranks() const { return static_cast<int>(space_.size()); }

    // ---- checkpoint + recovery counters ----
    void add_ckpt_bytes(std::uint64_t n) {
        std::lock_guard<std::mutex> lk(mu_);
        ckpt_bytes_ += n;
    }
    void add_ckpt_ns(std::uint64_t ns) {
        std::lock_guard<std::mutex> lk(mu_);
        ckpt_ns_ += ns;
    }
    void add_recovery_ns(std::uint64_t ns) {
        std::lock_guard<std::mutex> lk(mu_);
        if (ns > recovery_ns_) {
            recovery_ns_ = ns;  // stop-the-world: keep the slowest rank
        }
    }
    void count_kind(int complete, int partial, int none) {
        std::lock_guard<std::mutex> lk(mu_);
        complete_ += complete;
        partial_ += partial;
        none_ += none;
    }
    void set_degraded() {
        std::lock_guard<std::mutex> lk(mu_);
        degraded_ = true;
    }
    void log_recovery(const std::string& line) {
        std::lock_guard<std::mutex> lk(mu_);
        recovery_log_.push_back(line);
    }
    void set_redistribution(std::vector<std::uint64_t> per_survivor) {
        std::lock_guard<std::mutex> lk(mu_);
        redistribution_ = std::move(per_survivor);
    }

    // Disk traffic caused by recovery of failed shards.
    dataset::ReadStats& recovery_reads() { return recovery_reads_; }

    std::uint64_t ckpt_bytes() const { return locked(ckpt_bytes_); }
    std::uint64_t ckpt_ns() const { return locked(ckpt_ns_); }
    std::uint64_t recovery_ns() const { return locked(recovery_ns_); }
    std::uint64_t complete_checkpoints() const { return locked(complete_); }
    std::uint64_t partial_checkpoints() const { return locked(partial_); }
    std::uint64_t skipped_checkpoints() const { return locked(none_); }
    bool degraded() const {
        std::lock_guard<std::mutex> lk(mu_);
        return degraded_;
    }
    std::vector<std::string> recovery_log() const {
        std::lock_guard<std::mutex> lk(mu_);
        return recovery_log_;
    }
    std::vector<std::uint64_t> redistribution() const {
        std::lock_guard<std::mutex> lk(mu_);
        return redistribution_;
    }

private:
    void bump_peak(int rank) {
        auto& s = space_[rank];
        std::uint64_t now = s.resident + s.unprocessed;
        if (now > s.peak) {
            s.peak = now;
        }
    }
    std::uint64_t locked(const std::uint64_t& v) const {
        std::lock_guard<std::mutex> lk(mu_);
        return v;
    }

    mutable std::mutex mu_;
    std::vector<Space> space_;
    std::uint64_t ckpt_bytes_ = 0;
    std::uint64_t ckpt_ns_ = 0;
    std::uint64_t recovery_ns_ = 0;
    std::uint64_t complete_ = 0;
    std::uint64_t partial_ = 0;
    std::uint64_t none_ = 0;
    bool degraded_ = false;
    std::vector<std::string> recovery_log_;
    std::vector<std::uint64_t> redistribution_;
    dataset::ReadStats recovery_reads_;
};

}  // namespace ftmine::metrics
