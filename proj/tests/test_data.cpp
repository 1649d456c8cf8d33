#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "hkt/data.hpp"
#include "hkt/errors.hpp"

using namespace hkt;
using namespace hkt::data;

namespace {

/// Leave-one-out 1-nearest-neighbor accuracy, brute force.
double loo_1nn_accuracy(const Dataset& ds) {
    const std::size_t n = ds.size();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = 1e300;
        int best_label = -1;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dx = ds.inputs->data[i * 2] - ds.inputs->data[j * 2];
            const double dy = ds.inputs->data[i * 2 + 1] - ds.inputs->data[j * 2 + 1];
            const double d = dx * dx + dy * dy;
            if (d < best) {
                best = d;
                best_label = ds.labels[j];
            }
        }
        if (best_label == ds.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

void check_standardized(const Dataset& ds, std::size_t features) {
    const std::size_t n = ds.size();
    const std::size_t stride = ds.inputs->size() / n;
    const std::size_t group = stride / features;
    for (std::size_t f = 0; f < features; ++f) {
        double mean = 0.0, var = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t g = 0; g < group; ++g) mean += ds.inputs->data[s * stride + f * group + g];
        }
        mean /= static_cast<double>(n * group);
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t g = 0; g < group; ++g) {
                const double d = ds.inputs->data[s * stride + f * group + g] - mean;
                var += d * d;
            }
        }
        var /= static_cast<double>(n * group);
        CHECK(std::abs(mean) <= 1e-9);
        CHECK(std::abs(var - 1.0) <= 1e-6);
    }
}

}  // namespace

TEST_CASE("gen_spiral: determinism, counts, standardization, separability") {
    auto a = gen_spiral(100, 3, 0.25, 7);
    auto b = gen_spiral(100, 3, 0.25, 7);
    CHECK(a.inputs->data == b.inputs->data);
    CHECK(a.labels == b.labels);

    auto c = gen_spiral(100, 3, 0.25, 8);
    CHECK(a.inputs->data != c.inputs->data);

    CHECK(a.size() == 300);
    CHECK(a.class_count == 3);
    std::vector<int> counts(3, 0);
    for (int label : a.labels) ++counts[static_cast<std::size_t>(label)];
    CHECK(counts == std::vector<int>{100, 100, 100});

    check_standardized(a, 2);

    // noiseless arms are disjoint curves
    auto clean = gen_spiral(100, 2, 0.0, 7);
    CHECK(loo_1nn_accuracy(clean) == 1.0);

    CHECK_THROWS_AS(gen_spiral(0, 3, 0.1, 7), ConfigError);
    CHECK_THROWS_AS(gen_spiral(10, 1, 0.1, 7), ConfigError);
    CHECK_THROWS_AS(gen_spiral(10, 3, -0.1, 7), ConfigError);
}

TEST_CASE("gen_textured_patches: shape, determinism, validation") {
    auto a = gen_textured_patches(24, 8, 3, 11);
    CHECK(a.inputs->shape == std::vector<std::size_t>{24, 3, 8, 8});
    CHECK(a.size() == 24);
    auto b = gen_textured_patches(24, 8, 3, 11);
    CHECK(a.inputs->data == b.inputs->data);
    check_standardized(a, 3);

    std::vector<int> counts(3, 0);
    for (int label : a.labels) ++counts[static_cast<std::size_t>(label)];
    CHECK(counts == std::vector<int>{8, 8, 8});

    CHECK_THROWS_AS(gen_textured_patches(0, 8, 3, 11), ConfigError);
    CHECK_THROWS_AS(gen_textured_patches(10, 3, 3, 11), ConfigError);
    CHECK_THROWS_AS(gen_textured_patches(10, 8, 1, 11), ConfigError);
}

TEST_CASE("cifar record parsing") {
    // two records: label 3 with ascending pixels, label 9 with constants
    std::vector<std::uint8_t> bytes(2 * 3073, 0);
    bytes[0] = 3;
    for (std::size_t p = 0; p < 3072; ++p) bytes[1 + p] = static_cast<std::uint8_t>(p % 251);
    bytes[3073] = 9;
    for (std::size_t p = 0; p < 3072; ++p) bytes[3074 + p] = 128;

    auto ds = parse_cifar_records(bytes, "fixture");
    CHECK(ds.size() == 2);
    CHECK(ds.inputs->shape == std::vector<std::size_t>{2, 3, 32, 32});
    CHECK(ds.labels == std::vector<int>{3, 9});
    CHECK(ds.class_count == 10);
    CHECK(ds.inputs->data[0] == 0.0);
    CHECK(ds.inputs->data[1] == 1.0 / 255.0);
    CHECK(ds.inputs->data[3072] == 128.0 / 255.0);

    // first image round-trips to the original bytes
    for (std::size_t p = 0; p < 3072; ++p) {
        const auto back = static_cast<std::uint8_t>(std::lround(ds.inputs->data[p] * 255.0));
        CHECK(back == bytes[1 + p]);
    }

    // bad label and ragged file are rejected
    auto bad_label = bytes;
    bad_label[0] = 10;
    CHECK_THROWS_AS(parse_cifar_records(bad_label, "fixture"), ValidationError);
    bytes.pop_back();
    CHECK_THROWS_AS(parse_cifar_records(bytes, "fixture"), ValidationError);
}

TEST_CASE("cifar loader rejects missing and short files") {
    CHECK_THROWS_AS(load_cifar10_binary("./no_such_dir"), IoError);

    // directory with one short batch file
    const std::string dir = ".";
    {
        std::ofstream f("./data_batch_1.bin", std::ios::binary);
        const char junk[16] = {};
        f.write(junk, sizeof junk);
    }
    CHECK_THROWS_AS(load_cifar10_binary(dir), ValidationError);
    std::remove("./data_batch_1.bin");
}

TEST_CASE("batch_iter partitions the dataset deterministically") {
    // unique feature values let us recover the visited indices exactly
    Dataset ds;
    ds.inputs = zeros({10, 2});
    for (std::size_t i = 0; i < 10; ++i) ds.inputs->data[i * 2] = static_cast<double>(i);
    ds.labels.assign(10, 0);
    for (std::size_t i = 0; i < 10; ++i) ds.labels[i] = static_cast<int>(i % 3);
    ds.class_count = 3;

    BatchIter it(ds, 4, 99);
    CHECK(it.batch_count() == 3);
    std::vector<double> seen;
    std::vector<std::size_t> sizes;
    while (auto batch = it.next()) {
        sizes.push_back(batch->labels.size());
        for (std::size_t r = 0; r < batch->labels.size(); ++r) {
            const double row_id = batch->inputs->data[r * 2];
            seen.push_back(row_id);
            // label travels with its row
            CHECK(batch->labels[r] == static_cast<int>(static_cast<std::size_t>(row_id) % 3));
        }
    }
    CHECK(sizes == std::vector<std::size_t>{4, 4, 2});
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < 10; ++i) CHECK(seen[i] == static_cast<double>(i));

    // same epoch seed reproduces the order; a different seed changes it
    auto order_of = [&](std::uint64_t seed) {
        BatchIter jt(ds, 4, seed);
        std::vector<double> order;
        while (auto batch = jt.next()) {
            for (std::size_t r = 0; r < batch->labels.size(); ++r) {
                order.push_back(batch->inputs->data[r * 2]);
            }
        }
        return order;
    };
    CHECK(order_of(99) == order_of(99));
    CHECK(order_of(99) != order_of(100));

    // batch_size >= N gives one batch holding a permutation
    BatchIter big(ds, 64, 5);
    CHECK(big.batch_count() == 1);
    auto only = big.next();
    REQUIRE(only.has_value());
    CHECK(only->labels.size() == 10);
    CHECK_FALSE(big.next().has_value());

    CHECK_THROWS_AS(BatchIter(ds, 0, 1), ConfigError);
}

TEST_CASE("split_dataset cuts once with no overlap") {
    auto ds = gen_spiral(50, 2, 0.1, 3);
    auto [train, val] = split_dataset(ds, 0.8, 17);
    CHECK(train.size() == 80);
    CHECK(val.size() == 20);
    CHECK(train.split == "train");
    CHECK(val.split == "val");

    // no point appears on both sides (spiral points are distinct)
    for (std::size_t i = 0; i < val.size(); ++i) {
        for (std::size_t j = 0; j < train.size(); ++j) {
            const bool same = val.inputs->data[i * 2] == train.inputs->data[j * 2] &&
                              val.inputs->data[i * 2 + 1] == train.inputs->data[j * 2 + 1];
            CHECK_FALSE(same);
        }
    }

    auto [t2, v2] = split_dataset(ds, 0.8, 17);
    CHECK(t2.inputs->data == train.inputs->data);

    CHECK_THROWS_AS(split_dataset(ds, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(split_dataset(ds, 1.0, 1), ConfigError);
}

TEST_CASE("dump_csv writes one row per sample") {
    auto ds = gen_spiral(5, 2, 0.0, 3);
    dump_csv(ds, "./spiral_dump.csv");
    std::ifstream in("./spiral_dump.csv");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        CHECK(std::count(line.begin(), line.end(), ',') == 2);
    }
    CHECK(rows == 10);
    std::remove("./spiral_dump.csv");
}
