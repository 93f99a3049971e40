#pragma once

#include "ftmine/dataset.hpp"
#include "ftmine/errors.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ftmine::fptree {

using dataset::ItemId;
using dataset::Transaction;

// Per-item transaction counts for one rank's shard.
class FrequencyTable {
public:
    explicit FrequencyTable(std::uint32_t n_items) : counts_(n_items, 0) {}

    std::uint64_t count(ItemId i) const { return counts_.at(i); }
    void bump(ItemId i) { ++counts_.at(i); }
    std::uint32_t n_items() const { return static_cast<std::uint32_t>(counts_.size()); }
    const std::vector<std::uint64_t>& counts() const { return counts_; }

private:
    std::vector<std::uint64_t> counts_;
};

FrequencyTable count_local(std::span<const Transaction> transactions, std::uint32_t n_items);

// Smallest integer c with c >= theta * total. The epsilon absorbs binary
// representation error in theta (0.05 * 200 must give 10, not 11).
std::uint64_t min_support_count(double theta, std::uint64_t total_trans);

// Global frequency order: descending count, ties by ascending item id.
// Items below min_count are excluded (min_count 0 keeps everything).
class ItemOrder {
public:
    static ItemOrder build(const std::vector<std::uint64_t>& global_counts,
                           std::uint64_t min_count);

    std::optional<std::uint32_t> position(ItemId item) const;
    ItemId item_at(std::uint32_t pos) const { return items_.at(pos); }
    std::uint64_t count_at(std::uint32_t pos) const { return counts_.at(pos); }
    std::size_t size() const { return items_.size(); }
    std::uint64_t fingerprint() const { return fingerprint_; }

private:
    std::vector<ItemId> items_;
    std::vector<std::uint64_t> counts_;
    std::vector<std::int64_t> pos_of_;
    std::uint64_t fingerprint_ = 0;
};

// Canonical mining output: itemset (sorted ascending) -> exact support.
// std::map keys are lexicographically ordered, which is also the canonical
// result-file order.
using MiningResult = std::map<std::vector<ItemId>, std::uint64_t>;

// Prefix tree of frequency-ordered transactions. Confined to one rank;
// serialized form is what moves between ranks and into checkpoints.
class FpTree {
public:
    explicit FpTree(const ItemOrder* order);

    // Filters to frequent items, sorts by the global order, inserts as a
    // prefix path. Infrequent-only transactions still count as absorbed.
    void insert(const Transaction& t);

    // Path-wise additive merge; both trees must share the item order.
    void merge_from(const FpTree& src);

    std::size_t node_count() const { return nodes_.size(); }
    std::uint64_t absorbed() const { return absorbed_; }
    const ItemOrder& order() const { return *order_; }

    std::vector<std::uint8_t> serialize() const;
    static FpTree deserialize(std::span<const std::uint8_t> bytes, const ItemOrder* order);
    std::size_t serialized_size() const;
    static std::size_t serialized_size_for(std::size_t node_count);

    // Frequent itemsets with support >= min_count via conditional-pattern
    // recursion; run on the merged global tree.
    MiningResult mine(std::uint64_t min_count) const;

private:
    static constexpr std::uint32_t kRoot = 0xFFFFFFFFu;

    struct Node {
        std::uint32_t pos;  // position in the item order
        std::uint64_t count;
        std::uint32_t parent;  // node index or kRoot
        std::vector<std::uint32_t> children;
    };

    void insert_path(std::span<const std::uint32_t> positions, std::uint64_t count);
    std::uint32_t find_or_add_child(std::uint32_t parent, std::uint32_t pos);
    void mine_rec(std::vector<ItemId>& suffix, std::uint64_t min_count, MiningResult& out) const;

    const ItemOrder* order_;
    std::vector<Node> nodes_;
    std::vector<std::uint32_t> roots_;
    std::vector<std::vector<std::uint32_t>> header_;  // per position -> node indices
    std::uint64_t absorbed_ = 0;
};

// Result-file rendering: one line per itemset, `item,item,...\tsupport\n`.
std::string format_result(const MiningResult& result);
MiningResult parse_result(const std::string& text);

}  // namespace ftmine::fptree
