#pragma once

#include "ftmine/errors.hpp"

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

namespace ftmine::dataset {

using ItemId = std::uint32_t;

// Sorted, duplicate-free list of item ids.
using Transaction = std::vector<ItemId>;

using Point = std::vector<double>;

struct ShardRange {
    std::uint64_t start = 0;
    std::uint64_t count = 0;
    std::uint64_t end() const { return start + count; }
};

// rank -> contiguous shard; shards are disjoint, cover [0, n) and differ in
// size by at most one, with the remainder going to lower ranks.
class PartitionManifest {
public:
    static PartitionManifest even_split(std::uint64_t n_total, int p);

    ShardRange shard(int rank) const { return shards_.at(static_cast<std::size_t>(rank)); }
    int parts() const { return static_cast<int>(shards_.size()); }
    std::uint64_t total() const { return total_; }

private:
    std::vector<ShardRange> shards_;
    std::uint64_t total_ = 0;
};

// Splits a failed shard evenly among survivors, in survivor order. The
// concatenation of the returned ranges equals `failed`.
std::vector<ShardRange> split_among(ShardRange failed, std::size_t parts);

struct ReadStats {
    std::atomic<std::uint64_t> read_calls{0};
    std::atomic<std::uint64_t> records_read{0};
};

// Immutable on-disk transaction store with a per-record offset index, so
// recovery can seek straight to any transaction.
class TransactionFile {
public:
    struct GenParams {
        std::uint64_t n_trans = 0;
        std::uint32_t n_items = 1;
        std::uint32_t len_lo = 1;
        std::uint32_t len_hi = 1;
        std::uint64_t seed = 0;
        double zipf_s = 1.0;  // item-frequency skew exponent
    };
    static void generate(const std::string& path, const GenParams& params);

    explicit TransactionFile(const std::string& path);

    std::uint64_t n_trans() const { return n_trans_; }
    std::uint32_t n_items() const { return n_items_; }
    const std::string& path() const { return path_; }

    std::vector<Transaction> read_range(std::uint64_t start, std::uint64_t count,
                                        ReadStats* stats = nullptr) const;

    // Optional synthetic per-read latency (recovery trend experiments).
    void set_read_delay_ms(double ms) { read_delay_ms_ = ms; }

private:
    std::string path_;
    std::uint64_t n_trans_ = 0;
    std::uint32_t n_items_ = 0;
    std::vector<std::uint64_t> index_;
    double read_delay_ms_ = 0.0;
};

// Fixed-width KNN sample store; coordinates are uniform in [-1, 1].
class PointFile {
public:
    static void generate(const std::string& path, std::uint64_t n, std::uint32_t dims,
                         std::uint64_t seed);

    explicit PointFile(const std::string& path);

    std::uint64_t n() const { return n_; }
    std::uint32_t dims() const { return dims_; }
    const std::string& path() const { return path_; }

    std::vector<Point> read_range(std::uint64_t start, std::uint64_t count,
                                  ReadStats* stats = nullptr) const;

    void set_read_delay_ms(double ms) { read_delay_ms_ = ms; }

private:
    std::string path_;
    std::uint64_t n_ = 0;
    std::uint32_t dims_ = 0;
    double read_delay_ms_ = 0.0;
};

std::uint64_t file_checksum(const std::string& path);

// Splits n records into a leading (test) block and the rest (train).
std::pair<std::uint64_t, std::uint64_t> head_split(std::uint64_t n, double head_fraction);

// Serialized byte size of a transaction record (u32 length prefix + items).
inline std::size_t transaction_bytes(const Transaction& t) {
    return sizeof(std::uint32_t) + t.size() * sizeof(ItemId);
}

}  // namespace ftmine::dataset
