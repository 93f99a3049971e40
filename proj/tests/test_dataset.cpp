#include "ftmine/dataset.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <set>

using namespace ftmine;
using dataset::PartitionManifest;
using dataset::ShardRange;
using dataset::TransactionFile;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

TransactionFile::GenParams params(std::uint64_t n, std::uint32_t items, std::uint32_t lo,
                                  std::uint32_t hi, std::uint64_t seed) {
    TransactionFile::GenParams p;
    p.n_trans = n;
    p.n_items = items;
    p.len_lo = lo;
    p.len_hi = hi;
    p.seed = seed;
    return p;
}

}  // namespace

TEST_CASE("generator is deterministic per seed") {
    auto a = tmp_path("ds_det_a.bin");
    auto b = tmp_path("ds_det_b.bin");
    TransactionFile::generate(a, params(100, 1000, 15, 20, 42));
    TransactionFile::generate(b, params(100, 1000, 15, 20, 42));
    CHECK(dataset::file_checksum(a) == dataset::file_checksum(b));

    TransactionFile::generate(b, params(100, 1000, 15, 20, 43));
    CHECK(dataset::file_checksum(a) != dataset::file_checksum(b));
}

TEST_CASE("forced full-range transactions contain every item") {
    auto path = tmp_path("ds_full.bin");
    TransactionFile::generate(path, params(10, 5, 5, 5, 1));
    TransactionFile file(path);
    auto all = file.read_range(0, file.n_trans());
    REQUIRE(all.size() == 10);
    for (const auto& t : all) {
        CHECK(t == dataset::Transaction{0, 1, 2, 3, 4});
    }
}

TEST_CASE("transactions are sorted, duplicate-free, in range") {
    auto path = tmp_path("ds_shape.bin");
    TransactionFile::generate(path, params(200, 20, 3, 6, 7));
    TransactionFile file(path);
    for (const auto& t : file.read_range(0, 200)) {
        REQUIRE(t.size() >= 3);
        REQUIRE(t.size() <= 6);
        std::set<dataset::ItemId> uniq(t.begin(), t.end());
        CHECK(uniq.size() == t.size());
        for (std::size_t i = 1; i < t.size(); ++i) {
            CHECK(t[i - 1] < t[i]);
        }
        CHECK(t.back() < 20);
    }
}

TEST_CASE("zipf skew yields at least one high-support item") {
    // Brute-force frequency count over the generated file.
    auto path = tmp_path("ds_skew.bin");
    TransactionFile::generate(path, params(200, 20, 3, 6, 7));
    TransactionFile file(path);
    std::vector<std::uint64_t> counts(20, 0);
    for (const auto& t : file.read_range(0, 200)) {
        for (auto item : t) {
            ++counts[item];
        }
    }
    std::uint64_t best = *std::max_element(counts.begin(), counts.end());
    CHECK(best >= 60);  // support >= 0.3 of 200 transactions
}

TEST_CASE("invalid length ranges are rejected") {
    CHECK_THROWS_AS(TransactionFile::generate(tmp_path("ds_bad.bin"), params(5, 4, 3, 5, 0)),
                    InvalidRangeError);
    CHECK_THROWS_AS(TransactionFile::generate(tmp_path("ds_bad.bin"), params(5, 4, 0, 2, 0)),
                    InvalidRangeError);
    CHECK_THROWS_AS(TransactionFile::generate(tmp_path("ds_bad.bin"), params(5, 4, 3, 2, 0)),
                    InvalidRangeError);
}

TEST_CASE("read_range returns exact slices and bounds-checks") {
    auto path = tmp_path("ds_rr.bin");
    TransactionFile::generate(path, params(37, 12, 2, 5, 3));
    TransactionFile file(path);
    auto all = file.read_range(0, 37);

    auto slice = file.read_range(10, 7);
    REQUIRE(slice.size() == 7);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(slice[i] == all[10 + i]);
    }
    CHECK(file.read_range(5, 0).empty());
    CHECK_THROWS_AS(file.read_range(31, 7), OutOfBoundsError);
}

TEST_CASE("partition splits evenly, remainder to lower ranks") {
    auto m = PartitionManifest::even_split(10, 3);
    CHECK(m.shard(0).count == 4);
    CHECK(m.shard(1).count == 3);
    CHECK(m.shard(2).count == 3);

    auto one_each = PartitionManifest::even_split(6, 6);
    for (int r = 0; r < 6; ++r) {
        CHECK(one_each.shard(r).count == 1);
    }

    auto sparse = PartitionManifest::even_split(5, 8);
    for (int r = 0; r < 8; ++r) {
        CHECK(sparse.shard(r).count == (r < 5 ? 1u : 0u));
    }
}

TEST_CASE("partition + read_range reconstructs the dataset") {
    auto path = tmp_path("ds_part.bin");
    TransactionFile::generate(path, params(53, 15, 2, 6, 11));
    TransactionFile file(path);
    auto all = file.read_range(0, 53);

    std::mt19937_64 rng(4);
    for (int round = 0; round < 10; ++round) {
        int p = 1 + static_cast<int>(rng() % 8);
        auto m = PartitionManifest::even_split(53, p);
        std::vector<dataset::Transaction> glued;
        std::uint64_t expect_start = 0;
        for (int r = 0; r < p; ++r) {
            auto s = m.shard(r);
            CHECK(s.start == expect_start);
            expect_start = s.end();
            auto part = file.read_range(s.start, s.count);
            glued.insert(glued.end(), part.begin(), part.end());
        }
        CHECK(expect_start == 53);
        CHECK(glued == all);
    }
}

TEST_CASE("split_among partitions a failed shard evenly") {
    auto slices = dataset::split_among(ShardRange{20, 12}, 3);
    REQUIRE(slices.size() == 3);
    for (const auto& s : slices) {
        CHECK(s.count == 4);
    }
    CHECK(slices[0].start == 20);
    CHECK(slices[2].end() == 32);

    auto uneven = dataset::split_among(ShardRange{0, 7}, 3);
    CHECK(uneven[0].count == 3);
    CHECK(uneven[1].count == 2);
    CHECK(uneven[2].count == 2);
}

TEST_CASE("split_among concatenation equals a direct read") {
    auto path = tmp_path("ds_sa.bin");
    TransactionFile::generate(path, params(40, 10, 2, 4, 9));
    TransactionFile file(path);
    ShardRange failed{13, 19};
    auto direct = file.read_range(failed.start, failed.count);

    auto slices = dataset::split_among(failed, 4);
    std::vector<dataset::Transaction> glued;
    for (const auto& s : slices) {
        auto part = file.read_range(s.start, s.count);
        glued.insert(glued.end(), part.begin(), part.end());
    }
    CHECK(glued == direct);
}

TEST_CASE("read stats count calls and records") {
    auto path = tmp_path("ds_stats.bin");
    TransactionFile::generate(path, params(30, 10, 2, 4, 5));
    TransactionFile file(path);
    dataset::ReadStats stats;
    file.read_range(0, 10, &stats);
    file.read_range(10, 5, &stats);
    file.read_range(20, 0, &stats);  // empty reads are free
    CHECK(stats.read_calls.load() == 2);
    CHECK(stats.records_read.load() == 15);
}

TEST_CASE("point generation: deterministic, bounded, empty case") {
    auto a = tmp_path("pts_a.bin");
    auto b = tmp_path("pts_b.bin");
    dataset::PointFile::generate(a, 4, 1, 0);
    dataset::PointFile::generate(b, 4, 1, 0);
    CHECK(dataset::file_checksum(a) == dataset::file_checksum(b));

    dataset::PointFile::generate(a, 0, 3, 0);
    dataset::PointFile empty(a);
    CHECK(empty.n() == 0);
    CHECK(empty.read_range(0, 0).empty());

    dataset::PointFile::generate(b, 1000, 2, 9);
    dataset::PointFile pts(b);
    for (const auto& p : pts.read_range(0, 1000)) {
        for (double v : p) {
            CHECK(std::isfinite(v));
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("head_split carves the leading block") {
    auto [test, train] = dataset::head_split(100, 0.25);
    CHECK(test == 25);
    CHECK(train == 75);
    auto [t2, r2] = dataset::head_split(7, 0.5);
    CHECK(t2 == 4);
    CHECK(r2 == 3);
    CHECK_THROWS_AS(dataset::head_split(10, 0.0), InvalidRangeError);
    CHECK_THROWS_AS(dataset::head_split(10, 1.0), InvalidRangeError);
}
