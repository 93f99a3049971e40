#include "ftmine/fptree.hpp"

#include "ftmine/wire.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ftmine::fptree {

FrequencyTable count_local(std::span<const Transaction> transactions, std::uint32_t n_items) {
    FrequencyTable table(n_items);
    for (const auto& t : transactions) {
        for (ItemId item : t) {
            table.bump(item);
        }
    }
    return table;
}

std::uint64_t min_support_count(double theta, std::uint64_t total_trans) {
    if (theta <= 0.0) {
        return 0;
    }
    double raw = theta * static_cast<double>(total_trans);
    double c = std::ceil(raw - 1e-9);
    return c <= 0.0 ? 0 : static_cast<std::uint64_t>(c);
}

ItemOrder ItemOrder::build(const std::vector<std::uint64_t>& global_counts,
                           std::uint64_t min_count) {
    ItemOrder order;
    order.pos_of_.assign(global_counts.size(), -1);

    std::vector<ItemId> kept;
    for (std::size_t i = 0; i < global_counts.size(); ++i) {
        if (global_counts[i] >= min_count) {
            kept.push_back(static_cast<ItemId>(i));
        }
    }
    std::sort(kept.begin(), kept.end(), [&](ItemId a, ItemId b) {
        if (global_counts[a] != global_counts[b]) {
            return global_counts[a] > global_counts[b];
        }
        return a < b;
    });

    wire::Writer fp;
    for (std::uint32_t pos = 0; pos < kept.size(); ++pos) {
        ItemId item = kept[pos];
        order.items_.push_back(item);
        order.counts_.push_back(global_counts[item]);
        order.pos_of_[item] = pos;
        fp.u32(item);
    }
    order.fingerprint_ = wire::fnv1a(fp.data());
    return order;
}

std::optional<std::uint32_t> ItemOrder::position(ItemId item) const {
    if (item >= pos_of_.size() || pos_of_[item] < 0) {
        return std::nullopt;
    }
    return static_cast<std::uint32_t>(pos_of_[item]);
}

FpTree::FpTree(const ItemOrder* order) : order_(order), header_(order->size()) {}

std::uint32_t FpTree::find_or_add_child(std::uint32_t parent, std::uint32_t pos) {
    auto& kids = parent == kRoot ? roots_ : nodes_[parent].children;
    for (std::uint32_t c : kids) {
        if (nodes_[c].pos == pos) {
            return c;
        }
    }
    auto idx = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(Node{pos, 0, parent, {}});
    (parent == kRoot ? roots_ : nodes_[parent].children).push_back(idx);
    header_[pos].push_back(idx);
    return idx;
}

void FpTree::insert_path(std::span<const std::uint32_t> positions, std::uint64_t count) {
    std::uint32_t at = kRoot;
    for (std::uint32_t pos : positions) {
        at = find_or_add_child(at, pos);
        nodes_[at].count += count;
    }
}

void FpTree::insert(const Transaction& t) {
    std::vector<std::uint32_t> positions;
    positions.reserve(t.size());
    for (ItemId item : t) {
        if (auto pos = order_->position(item)) {
            positions.push_back(*pos);
        }
    }
    std::sort(positions.begin(), positions.end());
    insert_path(positions, 1);
    ++absorbed_;
}

void FpTree::merge_from(const FpTree& src) {
    if (src.order_->fingerprint() != order_->fingerprint()) {
        throw OrderMismatchError("merge of trees built under different item orders");
    }
    // Depth-first walk of src, mirroring each node onto dst and adding its
    // count. Per-node counts carry the full path multiset, so this equals
    // rebuilding from the union of both transaction sets.
    std::vector<std::pair<std::uint32_t, std::uint32_t>> stack;  // (src node, dst parent)
    for (auto it = src.roots_.rbegin(); it != src.roots_.rend(); ++it) {
        stack.emplace_back(*it, kRoot);
    }
    while (!stack.empty()) {
        auto [s, dst_parent] = stack.back();
        stack.pop_back();
        const Node& sn = src.nodes_[s];
        std::uint32_t d = find_or_add_child(dst_parent, sn.pos);
        nodes_[d].count += sn.count;
        for (auto it = sn.children.rbegin(); it != sn.children.rend(); ++it) {
            stack.emplace_back(*it, d);
        }
    }
    absorbed_ += src.absorbed_;
}

namespace {
constexpr std::uint32_t kTreeMagic = 0x52545046;  // "FPTR"
constexpr std::size_t kTreeHeader = 24;
constexpr std::size_t kTreeRecord = 16;
}  // namespace

std::size_t FpTree::serialized_size_for(std::size_t node_count) {
    return kTreeHeader + node_count * kTreeRecord;
}

std::size_t FpTree::serialized_size() const { return serialized_size_for(nodes_.size()); }

std::vector<std::uint8_t> FpTree::serialize() const {
    wire::Writer w;
    w.u32(kTreeMagic);
    w.u32(static_cast<std::uint32_t>(nodes_.size()));
    w.u64(order_->fingerprint());
    w.u64(absorbed_);

    // Preorder, so every parent is written before its children and parent
    // references are indices into the serialized array.
    std::vector<std::uint32_t> remap(nodes_.size(), kRoot);
    std::vector<std::uint32_t> stack(roots_.rbegin(), roots_.rend());
    std::uint32_t emitted = 0;
    while (!stack.empty()) {
        std::uint32_t n = stack.back();
        stack.pop_back();
        const Node& node = nodes_[n];
        remap[n] = emitted++;
        w.u32(order_->item_at(node.pos));
        w.u32(node.parent == kRoot ? kRoot : remap[node.parent]);
        w.u64(node.count);
        for (auto it = node.children.rbegin(); it != node.children.rend(); ++it) {
            stack.push_back(*it);
        }
    }
    return w.take();
}

FpTree FpTree::deserialize(std::span<const std::uint8_t> bytes, const ItemOrder* order) {
    wire::Reader r(bytes);
    if (bytes.size() < kTreeHeader) {
        throw CorruptBufferError("serialized tree truncated");
    }
    if (r.u32() != kTreeMagic) {
        throw CorruptBufferError("bad serialized-tree magic");
    }
    std::uint32_t count = r.u32();
    std::uint64_t fingerprint = r.u64();
    std::uint64_t absorbed = r.u64();
    if (bytes.size() != serialized_size_for(count)) {
        throw CorruptBufferError("serialized tree length mismatch");
    }
    if (fingerprint != order->fingerprint()) {
        throw OrderMismatchError("serialized tree built under a different item order");
    }

    FpTree tree(order);
    tree.absorbed_ = absorbed;
    tree.nodes_.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        ItemId item = r.u32();
        std::uint32_t parent = r.u32();
        std::uint64_t node_count = r.u64();
        auto pos = order->position(item);
        if (!pos || (parent != kRoot && parent >= i)) {
            throw CorruptBufferError("serialized tree node invalid");
        }
        tree.nodes_.push_back(Node{*pos, node_count, parent, {}});
        if (parent == kRoot) {
            tree.roots_.push_back(i);
        } else {
            tree.nodes_[parent].children.push_back(i);
        }
        tree.header_[*pos].push_back(i);
    }
    return tree;
}

void FpTree::mine_rec(std::vector<ItemId>& suffix, std::uint64_t min_count,
                      MiningResult& out) const {
    for (std::uint32_t pos = static_cast<std::uint32_t>(header_.size()); pos-- > 0;) {
        const auto& nodes_of_item = header_[pos];
        if (nodes_of_item.empty()) {
            continue;
        }
        std::uint64_t support = 0;
        for (std::uint32_t n : nodes_of_item) {
            support += nodes_[n].count;
        }
        if (support < min_count) {
            continue;
        }

        std::vector<ItemId> itemset = suffix;
        itemset.push_back(order_->item_at(pos));
        std::sort(itemset.begin(), itemset.end());
        out[itemset] = support;

        // Conditional tree over the prefix paths of this item.
        FpTree cond(order_);
        std::vector<std::uint32_t> prefix;
        for (std::uint32_t n : nodes_of_item) {
            prefix.clear();
            for (std::uint32_t a = nodes_[n].parent; a != kRoot; a = nodes_[a].parent) {
                prefix.push_back(nodes_[a].pos);
            }
            if (prefix.empty()) {
                continue;
            }
            std::reverse(prefix.begin(), prefix.end());
            cond.insert_path(prefix, nodes_[n].count);
        }
        if (cond.node_count() != 0) {
            std::vector<ItemId> next_suffix = itemset;
            cond.mine_rec(next_suffix, min_count, out);
        }
    }
}

MiningResult FpTree::mine(std::uint64_t min_count) const {
    MiningResult out;
    std::vector<ItemId> suffix;
    mine_rec(suffix, min_count, out);
    return out;
}

std::string format_result(const MiningResult& result) {
    std::ostringstream out;
    for (const auto& [itemset, support] : result) {
        for (std::size_t i = 0; i < itemset.size(); ++i) {
            if (i != 0) {
                out << ',';
            }
            out << itemset[i];
        }
        out << '\t' << support << '\n';
    }
    return out.str();
}

MiningResult parse_result(const std::string& text) {
    MiningResult out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw CorruptBufferError("result line missing tab: " + line);
        }
        std::vector<ItemId> itemset;
        std::istringstream items(line.substr(0, tab));
        std::string tok;
        while (std::getline(items, tok, ',')) {
            itemset.push_back(static_cast<ItemId>(std::stoul(tok)));
        }
        out[itemset] = std::stoull(line.substr(tab + 1));
    }
    return out;
}

}  // namespace ftmine::fptree
