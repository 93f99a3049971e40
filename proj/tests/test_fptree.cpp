#include "ftmine/fptree.hpp"

#include "ftmine/oracle.hpp"

#include <doctest.h>

#include <random>
#include <set>

using namespace ftmine;
using dataset::Transaction;
using fptree::FpTree;
using fptree::ItemOrder;
using fptree::MiningResult;

namespace {

ItemOrder order_of(const std::vector<Transaction>& txns, std::uint32_t n_items,
                   std::uint64_t min_count) {
    auto freq = fptree::count_local(txns, n_items);
    return ItemOrder::build(freq.counts(), min_count);
}

FpTree build(const std::vector<Transaction>& txns, const ItemOrder* order) {
    FpTree tree(order);
    for (const auto& t : txns) {
        tree.insert(t);
    }
    return tree;
}

std::vector<Transaction> random_transactions(std::mt19937_64& rng, std::size_t n,
                                             std::uint32_t n_items) {
    std::vector<Transaction> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::set<dataset::ItemId> items;
        std::size_t len = 1 + rng() % 6;
        len = std::min<std::size_t>(len, n_items);
        while (items.size() < len) {
            items.insert(static_cast<dataset::ItemId>(rng() % n_items));
        }
        out.emplace_back(items.begin(), items.end());
    }
    return out;
}

}  // namespace

TEST_CASE("count_local tallies per-item transaction membership") {
    // items: a=0, b=1, c=2
    std::vector<Transaction> txns{{0, 1}, {1, 2}, {0, 1, 2}};
    auto freq = fptree::count_local(txns, 3);
    CHECK(freq.count(0) == 2);
    CHECK(freq.count(1) == 3);
    CHECK(freq.count(2) == 2);

    auto empty = fptree::count_local(std::vector<Transaction>{}, 3);
    CHECK(empty.counts() == std::vector<std::uint64_t>{0, 0, 0});

    std::vector<Transaction> fives(5, Transaction{0});
    CHECK(fptree::count_local(fives, 1).count(0) == 5);
}

TEST_CASE("min_support_count rounds up without float drift") {
    CHECK(fptree::min_support_count(0.05, 200) == 10);
    CHECK(fptree::min_support_count(0.03, 100) == 3);
    CHECK(fptree::min_support_count(0.5, 4) == 2);
    CHECK(fptree::min_support_count(0.3, 7) == 3);  // 2.1 -> 3
    CHECK(fptree::min_support_count(1.0, 9) == 9);
    CHECK(fptree::min_support_count(0.0, 9) == 0);
}

TEST_CASE("item order: descending count, ties by ascending id") {
    // a and b both appear twice across 4 transactions, theta 0.5.
    std::vector<Transaction> txns{{0}, {1}, {0, 1}, {2}};
    auto freq = fptree::count_local(txns, 3);
    auto order = ItemOrder::build(freq.counts(), 2);
    REQUIRE(order.size() == 2);
    CHECK(order.item_at(0) == 0);  // tie on count=2 broken by id
    CHECK(order.item_at(1) == 1);
    CHECK(!order.position(2).has_value());

    auto keep_all = ItemOrder::build(freq.counts(), 0);
    CHECK(keep_all.size() == 3);  // theta=0 keeps everything

    auto none = ItemOrder::build(freq.counts(), 5);
    CHECK(none.size() == 0);
}

TEST_CASE("insert builds shared prefix paths") {
    std::vector<Transaction> txns{{0, 1}, {0, 1}};
    auto order = order_of(txns, 2, 1);
    auto tree = build(txns, &order);
    CHECK(tree.node_count() == 2);  // one a->b path (plus the implicit root)
    CHECK(tree.absorbed() == 2);
}

TEST_CASE("insert with no frequent items only bumps the absorbed counter") {
    std::vector<Transaction> seed{{0}, {0}};
    auto order = order_of(seed, 3, 2);
    FpTree tree(&order);
    tree.insert({1, 2});
    CHECK(tree.node_count() == 0);
    CHECK(tree.absorbed() == 1);
}

TEST_CASE("insertion normalizes to the frequency order") {
    // b (=1) is more frequent than a (=0); the path must start at b even
    // though the transaction lists a first.
    std::vector<Transaction> txns{{1}, {1}, {0, 1}};
    auto order = order_of(txns, 2, 1);
    FpTree tree(&order);
    tree.insert({0, 1});
    auto bytes = tree.serialize();
    auto copy = FpTree::deserialize(bytes, &order);
    CHECK(copy.node_count() == 2);
    // first serialized record is the root's child: item b
    CHECK(bytes[24] == 1);
}

TEST_CASE("merge with an empty tree is the identity both ways") {
    std::vector<Transaction> txns{{0, 1}, {1, 2}, {0, 1, 2}};
    auto order = order_of(txns, 3, 1);
    auto tree = build(txns, &order);
    auto reference = tree.serialize();

    FpTree empty(&order);
    tree.merge_from(empty);
    CHECK(tree.serialize() == reference);

    FpTree other(&order);
    other.merge_from(build(txns, &order));
    CHECK(other.mine(1) == build(txns, &order).mine(1));
}

TEST_CASE("merge equals building from the union (random oracle)") {
    std::mt19937_64 rng(21);
    for (int round = 0; round < 20; ++round) {
        auto a = random_transactions(rng, 1 + rng() % 30, 8);
        auto b = random_transactions(rng, 1 + rng() % 30, 8);
        std::vector<Transaction> both = a;
        both.insert(both.end(), b.begin(), b.end());

        auto freq = fptree::count_local(both, 8);
        auto order = ItemOrder::build(freq.counts(), 1);

        auto ta = build(a, &order);
        auto tb = build(b, &order);
        ta.merge_from(tb);
        auto merged_mine = ta.mine(2);

        auto tu = build(both, &order);
        CHECK(merged_mine == tu.mine(2));

        // commutativity
        auto ta2 = build(a, &order);
        auto tb2 = build(b, &order);
        tb2.merge_from(ta2);
        CHECK(tb2.mine(2) == merged_mine);
    }
}

TEST_CASE("merge rejects trees built under different orders") {
    std::vector<Transaction> txns{{0, 1}};
    auto order_a = order_of(txns, 2, 1);
    auto order_b = order_of({{1}, {1}, {0}}, 2, 1);  // reversed frequency order
    auto ta = build(txns, &order_a);
    auto tb = build(txns, &order_b);
    CHECK(order_a.fingerprint() != order_b.fingerprint());
    CHECK_THROWS_AS(ta.merge_from(tb), OrderMismatchError);
}

TEST_CASE("serialization roundtrips losslessly") {
    std::mt19937_64 rng(5);
    for (int round = 0; round < 20; ++round) {
        auto txns = random_transactions(rng, 1 + rng() % 50, 10);
        auto order = order_of(txns, 10, 1);
        auto tree = build(txns, &order);
        auto bytes = tree.serialize();
        auto copy = FpTree::deserialize(bytes, &order);
        CHECK(copy.node_count() == tree.node_count());
        CHECK(copy.absorbed() == tree.absorbed());
        CHECK(copy.serialize() == bytes);
        CHECK(copy.mine(1) == tree.mine(1));
    }
}

TEST_CASE("empty tree roundtrips") {
    auto order = order_of({{0}}, 1, 1);
    FpTree tree(&order);
    auto copy = FpTree::deserialize(tree.serialize(), &order);
    CHECK(copy.node_count() == 0);
    CHECK(copy.mine(1).empty());
}

TEST_CASE("serialized size is header + nodes * record") {
    // two paths, three nodes: a->b and c
    std::vector<Transaction> txns{{0, 1}, {2}};
    auto order = order_of(txns, 3, 1);
    auto tree = build(txns, &order);
    REQUIRE(tree.node_count() == 3);
    CHECK(tree.serialized_size() == 24 + 3 * 16);
    CHECK(tree.serialize().size() == tree.serialized_size());
}

TEST_CASE("deserialize rejects corrupt buffers") {
    auto order = order_of({{0, 1}}, 2, 1);
    auto tree = build({{0, 1}}, &order);
    auto bytes = tree.serialize();

    auto bad_magic = bytes;
    bad_magic[0] ^= 0xFF;
    CHECK_THROWS_AS(FpTree::deserialize(bad_magic, &order), CorruptBufferError);

    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(FpTree::deserialize(truncated, &order), CorruptBufferError);

    auto other_order = order_of({{1}, {1}, {0}}, 2, 1);
    CHECK_THROWS_AS(FpTree::deserialize(bytes, &other_order), OrderMismatchError);
}

TEST_CASE("mine matches the hand-computed example") {
    std::vector<Transaction> txns{{0, 1}, {1, 2}, {0, 1, 2}};
    auto order = order_of(txns, 3, 2);
    auto tree = build(txns, &order);
    auto result = tree.mine(2);

    MiningResult expected{
        {{0}, 2}, {{1}, 3}, {{2}, 2}, {{0, 1}, 2}, {{1, 2}, 2},
    };
    CHECK(result == expected);
}

TEST_CASE("mine of a single transaction yields its powerset") {
    std::vector<Transaction> txns{{0, 1}};
    auto order = order_of(txns, 2, 1);
    auto tree = build(txns, &order);
    MiningResult expected{{{0}, 1}, {{1}, 1}, {{0, 1}, 1}};
    CHECK(tree.mine(1) == expected);
}

TEST_CASE("mine of an empty tree is empty") {
    auto order = order_of({}, 4, 1);
    FpTree tree(&order);
    CHECK(tree.mine(1).empty());
}

TEST_CASE("build-equivalence against the powerset oracle") {
    std::mt19937_64 rng(77);
    for (int round = 0; round < 15; ++round) {
        std::uint32_t n_items = 5 + rng() % 10;
        auto txns = random_transactions(rng, 20 + rng() % 180, n_items);
        std::uint64_t min_count = 2 + rng() % 5;

        auto freq = fptree::count_local(txns, n_items);
        auto order = ItemOrder::build(freq.counts(), min_count);
        auto tree = build(txns, &order);

        CHECK(tree.mine(min_count) == oracle::bruteforce_frequent(txns, n_items, min_count));
    }
}

TEST_CASE("partition invariance: shard, build, merge == build whole") {
    std::mt19937_64 rng(31);
    auto txns = random_transactions(rng, 120, 9);
    auto freq = fptree::count_local(txns, 9);
    auto order = ItemOrder::build(freq.counts(), 4);
    auto whole = build(txns, &order).mine(4);

    for (int p = 1; p <= 6; ++p) {
        FpTree merged(&order);
        std::size_t at = 0;
        for (int r = 0; r < p; ++r) {
            std::size_t take =
                txns.size() / p + (static_cast<std::size_t>(r) < txns.size() % p ? 1 : 0);
            std::vector<Transaction> shard(txns.begin() + at, txns.begin() + at + take);
            at += take;
            merged.merge_from(build(shard, &order));
        }
        CHECK(merged.mine(4) == whole);
    }
}

TEST_CASE("result text roundtrips through format/parse") {
    MiningResult result{{{0}, 2}, {{1}, 3}, {{0, 1}, 2}};
    auto text = fptree::format_result(result);
    CHECK(text == "0\t2\n0,1\t2\n1\t3\n");
    CHECK(fptree::parse_result(text) == result);
}
