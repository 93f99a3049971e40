#pragma once

#include "ftmine/dataset.hpp"
#include "ftmine/fptree.hpp"
#include "ftmine/knn.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ftmine::oracle {

// Exhaustive powerset support count. Deliberately shares no code with the
// FP-tree mining path; this is the independent route results are checked
// against. Guarded to |T| <= 1000, n_items <= 20.
fptree::MiningResult bruteforce_frequent(std::span<const dataset::Transaction> transactions,
                                         std::uint32_t n_items, std::uint64_t min_count);

// Full pairwise scan under the (distance, id) order. Guarded to
// |test| * |train| <= 10^6.
std::vector<std::vector<knn::Neighbor>> exhaustive_knn(
    std::span<const dataset::Point> test, std::span<const dataset::Point> train, std::size_t k);

struct VerifyReport {
    bool pass = false;
    std::size_t matched = 0;
    std::vector<std::string> diffs;
};

VerifyReport verify_fp_result(const std::string& result_path, const std::string& dataset_path,
                              double theta);

VerifyReport verify_knn_result(const std::string& result_path, const std::string& data_path,
                               std::size_t k, double test_fraction);

// Canonical neighbor-file rendering shared by the runner and the oracle,
// so comparisons are byte-exact.
std::string format_neighbor_lines(
    const std::vector<std::pair<std::uint32_t, std::vector<knn::Neighbor>>>& rows);

}  // namespace ftmine::oracle
