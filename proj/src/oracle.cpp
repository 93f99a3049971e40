#include "ftmine/oracle.hpp"

#include "ftmine/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ftmine::oracle {

fptree::MiningResult bruteforce_frequent(std::span<const dataset::Transaction> transactions,
                                         std::uint32_t n_items, std::uint64_t min_count) {
    if (transactions.size() > 1000 || n_items > 20) {
        throw TooLargeForOracleError("brute force guarded to |T| <= 1000, n_items <= 20");
    }
    if (min_count < 1) {
        throw Error("brute force requires min_count >= 1");
    }

    std::vector<std::uint32_t> masks;
    masks.reserve(transactions.size());
    for (const auto& t : transactions) {
        std::uint32_t m = 0;
        for (auto item : t) {
            m |= 1u << item;
        }
        masks.push_back(m);
    }

    // Single-item prune: a set containing an infrequent item cannot be
    // frequent, so only subsets of the frequent-item union are counted.
    std::vector<std::uint64_t> single(n_items, 0);
    for (std::uint32_t m : masks) {
        for (std::uint32_t i = 0; i < n_items; ++i) {
            single[i] += (m >> i) & 1u;
        }
    }
    std::uint32_t universe = 0;
    for (std::uint32_t i = 0; i < n_items; ++i) {
        if (single[i] >= min_count) {
            universe |= 1u << i;
        }
    }

    fptree::MiningResult out;
    std::uint32_t s = universe;
    while (true) {
        if (s != 0) {
            std::uint64_t support = 0;
            for (std::uint32_t m : masks) {
                support += (m & s) == s;
            }
            if (support >= min_count) {
                std::vector<dataset::ItemId> itemset;
                for (std::uint32_t i = 0; i < n_items; ++i) {
                    if ((s >> i) & 1u) {
                        itemset.push_back(i);
                    }
                }
                out[itemset] = support;
            }
        }
        if (s == 0) {
            break;
        }
        s = (s - 1) & universe;
    }
    return out;
}

std::vector<std::vector<knn::Neighbor>> exhaustive_knn(std::span<const dataset::Point> test,
                                                       std::span<const dataset::Point> train,
                                                       std::size_t k) {
    if (test.size() * train.size() > 1000000) {
        throw TooLargeForOracleError("exhaustive scan guarded to |test|*|train| <= 1e6");
    }
    std::vector<std::vector<knn::Neighbor>> out;
    out.reserve(test.size());
    std::vector<knn::Neighbor> all;
    for (const auto& t : test) {
        all.clear();
        all.reserve(train.size());
        for (std::size_t j = 0; j < train.size(); ++j) {
            double sum = 0.0;
            for (std::size_t d = 0; d < t.size(); ++d) {
                double diff = t[d] - train[j][d];
                sum += diff * diff;
            }
            all.push_back(knn::Neighbor{std::sqrt(sum), static_cast<std::uint32_t>(j)});
        }
        std::sort(all.begin(), all.end(), knn::neighbor_less);
        if (all.size() > k) {
            all.resize(k);
        }
        out.push_back(all);
    }
    return out;
}

namespace {

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string itemset_str(const std::vector<dataset::ItemId>& itemset) {
    std::string s = "{";
    for (std::size_t i = 0; i < itemset.size(); ++i) {
        if (i != 0) {
            s += ",";
        }
        s += std::to_string(itemset[i]);
    }
    return s + "}";
}

}  // namespace

VerifyReport verify_fp_result(const std::string& result_path, const std::string& dataset_path,
                              double theta) {
    dataset::TransactionFile file(dataset_path);
    if (theta <= 0.0) {
        throw UsageError("verification requires a positive support threshold");
    }
    auto transactions = file.read_range(0, file.n_trans());
    const std::uint64_t min_count = fptree::min_support_count(theta, file.n_trans());
    auto expected = bruteforce_frequent(transactions, file.n_items(), min_count);
    auto got = fptree::parse_result(read_text(result_path));

    VerifyReport report;
    for (const auto& [itemset, support] : expected) {
        auto it = got.find(itemset);
        if (it == got.end()) {
            report.diffs.push_back("missing " + itemset_str(itemset) + " support " +
                                   std::to_string(support));
        } else if (it->second != support) {
            report.diffs.push_back("support mismatch " + itemset_str(itemset) + ": got " +
                                   std::to_string(it->second) + " want " +
                                   std::to_string(support));
        } else {
            ++report.matched;
        }
    }
    for (const auto& [itemset, support] : got) {
        if (expected.find(itemset) == expected.end()) {
            report.diffs.push_back("spurious " + itemset_str(itemset) + " support " +
                                   std::to_string(support));
        }
    }
    report.pass = report.diffs.empty();
    return report;
}

std::string format_neighbor_lines(
    const std::vector<std::pair<std::uint32_t, std::vector<knn::Neighbor>>>& rows) {
    std::string out;
    char buf[64];
    for (const auto& [test_id, neighbors] : rows) {
        out += std::to_string(test_id);
        out += '\t';
        for (std::size_t i = 0; i < neighbors.size(); ++i) {
            if (i != 0) {
                out += ',';
            }
            std::snprintf(buf, sizeof(buf), "%u:%.9f", neighbors[i].train_id,
                          neighbors[i].distance);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

VerifyReport verify_knn_result(const std::string& result_path, const std::string& data_path,
                               std::size_t k, double test_fraction) {
    dataset::PointFile file(data_path);
    const auto [n_test, n_train] = dataset::head_split(file.n(), test_fraction);
    auto test = file.read_range(0, n_test);
    auto train = file.read_range(n_test, n_train);
    auto oracle_rows = exhaustive_knn(test, train, k);

    std::vector<std::pair<std::uint32_t, std::vector<knn::Neighbor>>> rows;
    for (std::uint32_t i = 0; i < oracle_rows.size(); ++i) {
        rows.emplace_back(i, std::move(oracle_rows[i]));
    }
    const std::string expected = format_neighbor_lines(rows);
    const std::string got = read_text(result_path);

    VerifyReport report;
    std::istringstream want_in(expected);
    std::istringstream got_in(got);
    std::string want_line;
    std::string got_line;
    while (std::getline(want_in, want_line)) {
        if (!std::getline(got_in, got_line)) {
            report.diffs.push_back("result truncated, expected: " + want_line);
            continue;
        }
        if (want_line != got_line) {
            report.diffs.push_back("line mismatch: got '" + got_line + "' want '" + want_line +
                                   "'");
        } else {
            ++report.matched;
        }
    }
    while (std::getline(got_in, got_line)) {
        if (!got_line.empty()) {
            report.diffs.push_back("trailing line: " + got_line);
        }
    }
    report.pass = report.diffs.empty();
    return report;
}

}  // namespace ftmine::oracle
