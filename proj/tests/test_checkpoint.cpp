#include "ftmine/checkpoint.hpp"

#include "ftmine/fabric.hpp"
#include "ftmine/fptree.hpp"
#include "ftmine/metrics.hpp"
#include "ftmine/wire.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace ftmine;
using checkpoint::CheckpointKind;
using checkpoint::CheckpointPolicy;
using checkpoint::MetadataRecord;
using dataset::Transaction;

namespace {

std::string tmp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

fptree::ItemOrder order_of(const std::vector<Transaction>& txns, std::uint32_t n_items) {
    auto freq = fptree::count_local(txns, n_items);
    return fptree::ItemOrder::build(freq.counts(), 1);
}

constexpr int kTagTestDone = 900;

}  // namespace

TEST_CASE("checkpoint cadence: every ceil(shard/c) transactions") {
    auto p = CheckpointPolicy::for_shard(100, 4);
    CHECK(p.interval == 25);
    std::vector<std::uint64_t> hits;
    for (std::uint64_t t = 0; t <= 100; ++t) {
        if (p.should_checkpoint(t)) {
            hits.push_back(t);
        }
    }
    CHECK(hits == std::vector<std::uint64_t>{25, 50, 75, 100});

    auto once = CheckpointPolicy::for_shard(100, 1);
    for (std::uint64_t t = 1; t < 100; ++t) {
        CHECK(!once.should_checkpoint(t));
    }
    CHECK(once.should_checkpoint(100));

    CHECK(!p.should_checkpoint(0));
    CHECK_THROWS_AS(CheckpointPolicy::for_shard(10, 0), InvalidRangeError);
}

TEST_CASE("amft_decide follows the complete/partial/none rule") {
    CHECK(checkpoint::amft_decide(100, 60, 30, false) == CheckpointKind::Complete);
    CHECK(checkpoint::amft_decide(80, 60, 30, false) == CheckpointKind::Partial);
    CHECK(checkpoint::amft_decide(50, 60, 30, false) == CheckpointKind::None);
    // once a complete checkpoint happened, later ones are partial at most
    CHECK(checkpoint::amft_decide(1000, 60, 30, true) == CheckpointKind::Partial);
    CHECK(checkpoint::amft_decide(90, 60, 0, false) == CheckpointKind::Complete);
}

TEST_CASE("metadata source fields pack/unpack") {
    MetadataRecord m;
    m.cf_ptr = 128;
    m.cfs = 512;
    m.ct = 79;
    m.sct = 80;
    m.nct = 20;
    auto bytes = checkpoint::pack_source_fields(m, 3);
    auto [back, source] = checkpoint::unpack_source_fields(bytes);
    CHECK(source == 3);
    CHECK(back.cf_ptr == 128);
    CHECK(back.cfs == 512);
    CHECK(back.ct == 79);
    CHECK(back.sct == 80);
    CHECK(back.nct == 20);
}

TEST_CASE("transaction blobs roundtrip") {
    std::vector<Transaction> txns{{1, 5, 9}, {2}, {0, 3, 4, 7}};
    auto bytes = checkpoint::serialize_transactions(txns);
    CHECK(checkpoint::parse_transactions(bytes, 3) == txns);
}

TEST_CASE("dft store: write, read back, pick latest") {
    auto dir = tmp_dir("dft_rt");
    checkpoint::DftStore store(dir, 0);
    std::vector<std::uint8_t> payload_a{1, 2, 3, 4};
    std::vector<std::uint8_t> payload_b{9, 8, 7};
    store.write_epoch(payload_a, 24);
    store.write_epoch(payload_b, 49);

    auto loaded = checkpoint::DftStore::load_latest(dir, 0);
    REQUIRE(loaded.has_value());
    CHECK(loaded->ct == 49);
    CHECK(loaded->payload == payload_b);

    CHECK(!checkpoint::DftStore::load_latest(dir, 1).has_value());
}

TEST_CASE("dft store: torn checkpoint falls back to prior epoch") {
    auto dir = tmp_dir("dft_torn");
    checkpoint::DftStore store(dir, 2);
    std::vector<std::uint8_t> good{5, 5, 5};
    store.write_epoch(good, 10);
    // crash after the tree write, before the meta write
    std::ofstream torn(std::filesystem::path(checkpoint::DftStore::rank_dir(dir, 2)) /
                           "epoch1.tree",
                       std::ios::binary);
    torn << "partial";
    torn.close();

    auto loaded = checkpoint::DftStore::load_latest(dir, 2);
    REQUIRE(loaded.has_value());
    CHECK(loaded->ct == 10);
    CHECK(loaded->payload == good);
}

TEST_CASE("dft store: checksum mismatch invalidates an epoch") {
    auto dir = tmp_dir("dft_sum");
    checkpoint::DftStore store(dir, 1);
    store.write_epoch(std::vector<std::uint8_t>{1, 1}, 3);
    store.write_epoch(std::vector<std::uint8_t>{2, 2}, 7);
    {
        std::ofstream clobber(std::filesystem::path(checkpoint::DftStore::rank_dir(dir, 1)) /
                                  "epoch1.tree",
                              std::ios::binary | std::ios::trunc);
        clobber << "xx";
    }
    auto loaded = checkpoint::DftStore::load_latest(dir, 1);
    REQUIRE(loaded.has_value());
    CHECK(loaded->ct == 3);  // epoch 1 is invalid, epoch 0 still good
}

TEST_CASE("dft store retains two epochs") {
    auto dir = tmp_dir("dft_gc");
    checkpoint::DftStore store(dir, 0);
    for (std::uint32_t e = 0; e < 5; ++e) {
        store.write_epoch(std::vector<std::uint8_t>{static_cast<std::uint8_t>(e)}, e * 10);
    }
    int trees = 0;
    for (const auto& entry :
         std::filesystem::directory_iterator(checkpoint::DftStore::rank_dir(dir, 0))) {
        trees += entry.path().extension() == ".tree" ? 1 : 0;
    }
    CHECK(trees == 2);
    CHECK(checkpoint::DftStore::load_latest(dir, 0)->ct == 40);
}

TEST_CASE("smft checkpoint: handshake, payload, metadata") {
    fabric::WorldOptions opts;
    opts.trace = true;
    fabric::World world(2, {}, 0, opts);
    metrics::Registry reg(2);

    world.run([&](fabric::Rank& rank) {
        std::vector<Transaction> shard{{0, 1}, {1, 2}, {0, 2}, {2, 3}};
        auto order = order_of(shard, 4);
        fptree::FpTree tree(&order);

        checkpoint::FpStrategy::Setup setup;
        setup.rank = &rank;
        setup.registry = &reg;
        setup.shard = &shard;
        setup.tree = &tree;
        auto strategy = checkpoint::make_smft_strategy(setup);
        strategy->init();
        rank.barrier();

        if (rank.id() == 0) {
            tree.insert(shard[0]);
            tree.insert(shard[1]);
            strategy->checkpoint(tree, 2);
            auto first_size = tree.serialized_size();

            // growing tree: second checkpoint replaces the first
            tree.insert(shard[2]);
            tree.insert(shard[3]);
            strategy->checkpoint(tree, 4);
            CHECK(tree.serialized_size() > first_size);
            rank.send(1, kTagTestDone, {});
        } else {
            while (!rank.try_recv(0, kTagTestDone)) {
                strategy->service();
                rank.yield();
            }
            auto meta = strategy->stored_metadata_for(0);
            CHECK(meta.has_value());
            if (!meta) {
                return;
            }
            CHECK(meta->ct == 3);  // latest checkpoint processed 4 transactions
            CHECK(meta->nct == 2);  // remaining half was checkpointed at processed=2
            CHECK(meta->sct == 2);

            auto bytes = strategy->stored_tree_bytes(*meta);
            auto stored = fptree::FpTree::deserialize(bytes, &order);
            CHECK(stored.absorbed() == 4);  // latest wins

            auto txns = strategy->stored_transactions(*meta);
            CHECK(txns == std::vector<Transaction>{{0, 2}, {2, 3}});

            CHECK(!strategy->stored_metadata_for(1).has_value());
        }
        rank.barrier();
    });

    // the resize handshake is two-sided and visible in the trace
    bool saw_ckpt_send = false;
    for (const auto& ev : world.trace()) {
        if (std::string(ev.scope) == "ckpt" &&
            (ev.op == fabric::TraceOp::Send || ev.op == fabric::TraceOp::Recv)) {
            saw_ckpt_send = true;
        }
    }
    CHECK(saw_ckpt_send);
}

TEST_CASE("amft checkpoint: none then complete then partial, one-sided") {
    fabric::WorldOptions opts;
    opts.trace = true;
    fabric::World world(2, {}, 0, opts);
    metrics::Registry reg(2);

    world.run([&](fabric::Rank& rank) {
        // rank 1 (the target) owns a roomy shard; rank 0 checkpoints into it
        std::vector<Transaction> shard;
        if (rank.id() == 0) {
            shard = {{0, 1}, {1, 2}, {0, 2}, {1, 3}};
        } else {
            for (int i = 0; i < 6; ++i) {
                Transaction t;
                for (std::uint32_t j = 0; j < 30; ++j) {
                    t.push_back(j);
                }
                shard.push_back(t);
            }
        }
        std::vector<Transaction> ref{{0, 1}, {1, 2}, {0, 2}, {1, 3}};
        auto order = order_of(ref, 31);
        fptree::FpTree tree(&order);

        checkpoint::FpStrategy::Setup setup;
        setup.rank = &rank;
        setup.registry = &reg;
        setup.shard = &shard;
        setup.tree = &tree;
        auto strategy = checkpoint::make_amft_strategy(setup);
        strategy->init();
        rank.barrier();

        if (rank.id() == 0) {
            tree.insert(shard[0]);
            tree.insert(shard[1]);
            // target has processed nothing: no space, no checkpoint
            strategy->checkpoint(tree, 2);
            CHECK(reg.skipped_checkpoints() == 1);
        }
        rank.barrier();
        if (rank.id() == 1) {
            // open up space: two processed transactions = 248 bytes
            strategy->on_transaction_processed(1);
            strategy->on_transaction_processed(2);
        }
        rank.barrier();
        if (rank.id() == 0) {
            strategy->checkpoint(tree, 2);  // fits tree + 2 remaining: complete
            CHECK(reg.complete_checkpoints() == 1);

            tree.insert(shard[2]);
            tree.insert(shard[3]);
            strategy->checkpoint(tree, 4);  // once-complete: partial from now on
            CHECK(reg.partial_checkpoints() == 1);
        }
        rank.barrier();
        if (rank.id() == 1) {
            auto meta = strategy->stored_metadata_for(0);
            CHECK(meta.has_value());
            if (!meta) {
                return;
            }
            CHECK(meta->ct == 3);
            CHECK(meta->sct == 2);
            CHECK(meta->nct == 2);
            CHECK(meta->cf_ptr > 0);

            auto stored = fptree::FpTree::deserialize(strategy->stored_tree_bytes(*meta), &order);
            CHECK(stored.absorbed() == 4);

            // the complete checkpoint kept the then-remaining suffix
            CHECK(strategy->stored_transactions(*meta) ==
                  std::vector<Transaction>{{0, 2}, {1, 3}});
        }
        rank.barrier();
    });

    // truly one-sided: no ckpt-scoped two-sided traffic at all
    for (const auto& ev : world.trace()) {
        if (std::string(ev.scope) == "ckpt") {
            CHECK(ev.op != fabric::TraceOp::Send);
            CHECK(ev.op != fabric::TraceOp::Recv);
        }
    }

    // space accounting: resident checkpoints + unprocessed transactions
    // never exceeded the shard allocation
    auto space = reg.space(1);
    CHECK(space.capacity > 0);
    CHECK(space.peak <= space.capacity + 1024);
}

TEST_CASE("amft critical checkpoint cascades to the next alive successor") {
    fabric::FaultSchedule sched;
    sched.add(fabric::FaultEvent{1, fabric::FaultTrigger::AfterTransactions, 1, 0.0});
    fabric::World world(3, sched, 0);
    metrics::Registry reg(3);

    world.run([&](fabric::Rank& rank) {
        std::vector<Transaction> shard;
        if (rank.id() == 2) {
            for (int i = 0; i < 4; ++i) {
                Transaction t;
                for (std::uint32_t j = 0; j < 30; ++j) {
                    t.push_back(j);
                }
                shard.push_back(t);
            }
        } else {
            shard.assign(4, Transaction{0, 1, 2, 3, 4, 5, 6, 7});
        }
        std::vector<Transaction> ref(4, Transaction{0, 1, 2, 3, 4, 5, 6, 7});
        auto order = order_of(ref, 31);
        fptree::FpTree tree(&order);

        checkpoint::FpStrategy::Setup setup;
        setup.rank = &rank;
        setup.registry = &reg;
        setup.shard = &shard;
        setup.tree = &tree;
        auto strategy = checkpoint::make_amft_strategy(setup);
        strategy->init();
        rank.barrier();

        if (rank.id() == 0) {
            tree.insert(shard[0]);
            strategy->checkpoint(tree, 1);  // no space at rank 1 yet: records the target
            tree = fptree::FpTree(&order);
        }
        rank.barrier();
        if (rank.id() == 1) {
            rank.progress_transactions(1, 4);  // dies here
            return;
        }
        if (rank.id() == 2) {
            // make room for rank 0's critical checkpoint
            for (std::uint64_t t = 1; t <= 4; ++t) {
                tree.insert(shard[t - 1]);
                strategy->on_transaction_processed(t);
            }
        }
        fabric::retry_barrier(rank);  // re-issued once rank 1's death lands
        if (rank.id() == 0) {
            tree.insert(shard[0]);
            std::vector<int> dead;
            while (dead.empty()) {
                dead = rank.poll_faults();
                rank.yield();
            }
            // rank 1 was the recorded backup holder (the earlier attempt
            // targeted it); its death forces a critical checkpoint that
            // cascades past it to rank 2
            strategy->handle_deaths(dead, tree, 1);
            rank.send(2, kTagTestDone, {});
        } else {
            (void)rank.recv(0, kTagTestDone);
            auto meta = strategy->stored_metadata_for(0);
            CHECK(meta.has_value());
            if (!meta) {
                return;
            }
            CHECK(meta->ct == 0);
            auto stored = fptree::FpTree::deserialize(strategy->stored_tree_bytes(*meta), &order);
            CHECK(stored.absorbed() == 1);
        }
    });
}

TEST_CASE("knn strategies roundtrip a queue snapshot") {
    auto dir = tmp_dir("knn_ckpt");
    for (auto mode : {0, 1, 2}) {  // dft, smft, amft
        fabric::World world(2, {}, 0);
        metrics::Registry reg(2);
        world.run([&](fabric::Rank& rank) {
            checkpoint::KnnStrategy::Setup setup;
            setup.rank = &rank;
            setup.registry = &reg;
            setup.ckpt_dir = dir + "/m" + std::to_string(mode);
            std::unique_ptr<checkpoint::KnnStrategy> strategy;
            if (mode == 0) {
                strategy = checkpoint::make_knn_dft_strategy(setup);
            } else if (mode == 1) {
                strategy = checkpoint::make_knn_smft_strategy(setup);
            } else {
                strategy = checkpoint::make_knn_amft_strategy(setup);
            }
            strategy->init(knn::snapshot_bytes_bound(4, 2, 3));
            rank.barrier();

            knn::QueueSnapshot snap;
            snap.owner = static_cast<std::uint32_t>(rank.id());
            snap.iteration_tag = 1;
            snap.k = 3;
            knn::GroupState g;
            g.sample_ids = {static_cast<std::uint32_t>(10 + rank.id())};
            knn::NeighborQueue q(3);
            q.offer(0.5, 2);
            q.offer(0.25, 7);
            g.queues.push_back(q);
            g.seen_mask = 0b01;
            snap.groups.push_back(g);

            // two rounds; the later tag must win
            strategy->checkpoint(knn::serialize_snapshot(snap), 1);
            snap.iteration_tag = 2;
            strategy->checkpoint(knn::serialize_snapshot(snap), 2);
            rank.barrier();

            const int pred = 1 - rank.id();
            auto loaded = strategy->load_checkpoint(pred);
            CHECK(loaded.has_value());
            if (!loaded || loaded->groups.size() != 1) {
                CHECK(false);
                return;
            }
            CHECK(loaded->owner == static_cast<std::uint32_t>(pred));
            CHECK(loaded->iteration_tag == 2);
            CHECK(loaded->groups[0].sample_ids ==
                  std::vector<std::uint32_t>{static_cast<std::uint32_t>(10 + pred)});
            CHECK(loaded->groups[0].seen_mask == 0b01);
            CHECK(loaded->groups[0].queues[0].sorted_entries()[0].train_id == 7);
            rank.barrier();
        });
    }
}
