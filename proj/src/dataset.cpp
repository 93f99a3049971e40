#include "ftmine/dataset.hpp"

#include "ftmine/wire.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <thread>

namespace ftmine::dataset {

namespace {

constexpr std::uint32_t kTxnMagic = 0x4E585446;    // "FTXN"
constexpr std::uint32_t kPointMagic = 0x544E5046;  // "FPNT"
constexpr std::uint32_t kVersion = 1;

// 53-bit uniform in [0, 1). The generator is seeded mt19937_64, so output
// is identical across platforms for a fixed seed.
double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
    return n == 0 ? 0 : rng() % n;
}

void write_all(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for write: " + path);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

void apply_read_delay(double ms) {
    if (ms > 0.0) {
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
    }
}

}  // namespace

PartitionManifest PartitionManifest::even_split(std::uint64_t n_total, int p) {
    if (p < 1) {
        throw InvalidRangeError("partition requires p >= 1");
    }
    PartitionManifest m;
    m.total_ = n_total;
    const std::uint64_t base = n_total / static_cast<std::uint64_t>(p);
    const std::uint64_t rem = n_total % static_cast<std::uint64_t>(p);
    std::uint64_t at = 0;
    for (int r = 0; r < p; ++r) {
        std::uint64_t count = base + (static_cast<std::uint64_t>(r) < rem ? 1 : 0);
        m.shards_.push_back(ShardRange{at, count});
        at += count;
    }
    return m;
}

std::vector<ShardRange> split_among(ShardRange failed, std::size_t parts) {
    if (parts == 0) {
        throw InvalidRangeError("split_among requires at least one part");
    }
    std::vector<ShardRange> out;
    const std::uint64_t base = failed.count / parts;
    const std::uint64_t rem = failed.count % parts;
    std::uint64_t at = failed.start;
    for (std::size_t i = 0; i < parts; ++i) {
        std::uint64_t count = base + (i < rem ? 1 : 0);
        out.push_back(ShardRange{at, count});
        at += count;
    }
    return out;
}

void TransactionFile::generate(const std::string& path, const GenParams& p) {
    if (p.n_items < 1 || p.len_lo < 1 || p.len_lo > p.len_hi || p.len_hi > p.n_items) {
        throw InvalidRangeError("transaction length range must satisfy 1 <= lo <= hi <= n_items");
    }

    std::mt19937_64 rng(p.seed);

    // Zipf-like item popularity: weight(i) = 1 / (i+1)^s.
    std::vector<double> cum(p.n_items);
    double total = 0.0;
    for (std::uint32_t i = 0; i < p.n_items; ++i) {
        total += 1.0 / std::pow(static_cast<double>(i) + 1.0, p.zipf_s);
        cum[i] = total;
    }

    wire::Writer records;
    std::vector<std::uint64_t> index(p.n_trans);
    const std::size_t header_size = 24;
    const std::size_t index_size = p.n_trans * sizeof(std::uint64_t);

    std::set<ItemId> picked;
    for (std::uint64_t t = 0; t < p.n_trans; ++t) {
        const std::uint32_t len =
            p.len_lo + static_cast<std::uint32_t>(bounded(rng, p.len_hi - p.len_lo + 1));
        picked.clear();
        while (picked.size() < len) {
            double u = uniform01(rng) * total;
            auto it = std::lower_bound(cum.begin(), cum.end(), u);
            auto item = static_cast<ItemId>(it == cum.end() ? p.n_items - 1 : it - cum.begin());
            picked.insert(item);
        }
        index[t] = header_size + index_size + records.size();
        records.u32(len);
        for (ItemId item : picked) {
            records.u32(item);
        }
    }

    wire::Writer out;
    out.u32(kTxnMagic);
    out.u32(kVersion);
    out.u64(p.n_trans);
    out.u32(p.n_items);
    out.u32(0);
    for (std::uint64_t off : index) {
        out.u64(off);
    }
    out.bytes(records.data());
    write_all(path, out.data());
}

TransactionFile::TransactionFile(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open dataset: " + path);
    }
    std::uint8_t header[24];
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!in) {
        throw CorruptBufferError("dataset header truncated: " + path);
    }
    wire::Reader r(std::span<const std::uint8_t>(header, sizeof(header)));
    if (r.u32() != kTxnMagic) {
        throw CorruptBufferError("bad transaction-file magic: " + path);
    }
    if (r.u32() != kVersion) {
        throw CorruptBufferError("unsupported dataset version: " + path);
    }
    n_trans_ = r.u64();
    n_items_ = r.u32();

    index_.resize(n_trans_);
    in.read(reinterpret_cast<char*>(index_.data()),
            static_cast<std::streamsize>(n_trans_ * sizeof(std::uint64_t)));
    if (!in) {
        throw CorruptBufferError("dataset index truncated: " + path);
    }
}

std::vector<Transaction> TransactionFile::read_range(std::uint64_t start, std::uint64_t count,
                                                     ReadStats* stats) const {
    if (start > n_trans_ || count > n_trans_ - start) {
        throw OutOfBoundsError("read_range [" + std::to_string(start) + ", " +
                               std::to_string(start + count) + ") exceeds " +
                               std::to_string(n_trans_));
    }
    std::vector<Transaction> out;
    out.reserve(count);
    if (count == 0) {
        return out;
    }
    apply_read_delay(read_delay_ms_);
    if (stats != nullptr) {
        stats->read_calls.fetch_add(1, std::memory_order_relaxed);
        stats->records_read.fetch_add(count, std::memory_order_relaxed);
    }

    std::ifstream in(path_, std::ios::binary);
    if (!in) {
        throw IoError("cannot open dataset: " + path_);
    }
    in.seekg(static_cast<std::streamoff>(index_[start]));
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint32_t len = 0;
        in.read(reinterpret_cast<char*>(&len), sizeof(len));
        Transaction t(len);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(len * sizeof(ItemId)));
        if (!in) {
            throw CorruptBufferError("dataset record truncated: " + path_);
        }
        out.push_back(std::move(t));
    }
    return out;
}

void PointFile::generate(const std::string& path, std::uint64_t n, std::uint32_t dims,
                         std::uint64_t seed) {
    if (dims < 1) {
        throw InvalidRangeError("points require dims >= 1");
    }
    std::mt19937_64 rng(seed);
    wire::Writer out;
    out.u32(kPointMagic);
    out.u32(kVersion);
    out.u64(n);
    out.u32(dims);
    out.u32(0);
    for (std::uint64_t i = 0; i < n; ++i) {
        for (std::uint32_t d = 0; d < dims; ++d) {
            out.f64(uniform01(rng) * 2.0 - 1.0);
        }
    }
    write_all(path, out.data());
}

PointFile::PointFile(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open points: " + path);
    }
    std::uint8_t header[24];
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!in) {
        throw CorruptBufferError("points header truncated: " + path);
    }
    wire::Reader r(std::span<const std::uint8_t>(header, sizeof(header)));
    if (r.u32() != kPointMagic) {
        throw CorruptBufferError("bad point-file magic: " + path);
    }
    if (r.u32() != kVersion) {
        throw CorruptBufferError("unsupported points version: " + path);
    }
    n_ = r.u64();
    dims_ = r.u32();
}

std::vector<Point> PointFile::read_range(std::uint64_t start, std::uint64_t count,
                                         ReadStats* stats) const {
    if (start > n_ || count > n_ - start) {
        throw OutOfBoundsError("point read_range [" + std::to_string(start) + ", " +
                               std::to_string(start + count) + ") exceeds " + std::to_string(n_));
    }
    std::vector<Point> out;
    out.reserve(count);
    if (count == 0) {
        return out;
    }
    apply_read_delay(read_delay_ms_);
    if (stats != nullptr) {
        stats->read_calls.fetch_add(1, std::memory_order_relaxed);
        stats->records_read.fetch_add(count, std::memory_order_relaxed);
    }

    std::ifstream in(path_, std::ios::binary);
    if (!in) {
        throw IoError("cannot open points: " + path_);
    }
    const std::size_t rec = dims_ * sizeof(double);
    in.seekg(static_cast<std::streamoff>(24 + start * rec));
    for (std::uint64_t i = 0; i < count; ++i) {
        Point pt(dims_);
        in.read(reinterpret_cast<char*>(pt.data()), static_cast<std::streamsize>(rec));
        if (!in) {
            throw CorruptBufferError("point record truncated: " + path_);
        }
        out.push_back(std::move(pt));
    }
    return out;
}

std::pair<std::uint64_t, std::uint64_t> head_split(std::uint64_t n, double head_fraction) {
    if (head_fraction <= 0.0 || head_fraction >= 1.0) {
        throw InvalidRangeError("head fraction must lie in (0, 1)");
    }
    auto head = static_cast<std::uint64_t>(
        std::ceil(head_fraction * static_cast<double>(n) - 1e-9));
    if (head > n) {
        head = n;
    }
    return {head, n - head};
}

std::uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open for checksum: " + path);
    }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h = wire::fnv1a(std::span<const std::uint8_t>(
                            reinterpret_cast<const std::uint8_t*>(buf),
                            static_cast<std::size_t>(in.gcount())),
                        h);
        if (!in) {
            break;
        }
    }
    return h;
}

}  // namespace ftmine::dataset
