#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "pol/data.hpp"
#include "pol/digest.hpp"
#include "pol/errors.hpp"
#include "pol/rng.hpp"

using namespace pol;
namespace fs = std::filesystem;

namespace {
fs::path tmpdir() {
    auto p = fs::temp_directory_path() / "pol_data_test";
    fs::create_directories(p);
    return p;
}
}  // namespace

TEST_CASE("make_blobs shape, balance, determinism") {
    auto d = make_blobs(300, 5, 3, 2.0, 1.0, 42);
    CHECK(d.n() == 300);
    CHECK(d.dim() == 5);
    std::vector<int> counts(3, 0);
    for (auto l : d.labels) counts[static_cast<std::size_t>(l)]++;
    CHECK(counts[0] == 100);
    CHECK(counts[1] == 100);
    CHECK(counts[2] == 100);

    auto d2 = make_blobs(300, 5, 3, 2.0, 1.0, 42);
    CHECK(std::memcmp(d.features.v.data(), d2.features.v.data(), 300 * 5 * sizeof(double)) == 0);
    auto d3 = make_blobs(300, 5, 3, 2.0, 1.0, 43);
    CHECK(std::memcmp(d.features.v.data(), d3.features.v.data(), 300 * 5 * sizeof(double)) != 0);

    // class means are separated: mean distance between class centroids ≳ separation
    std::vector<std::vector<double>> cent(3, std::vector<double>(5, 0.0));
    for (std::size_t i = 0; i < d.n(); ++i)
        for (std::size_t j = 0; j < 5; ++j)
            cent[static_cast<std::size_t>(d.labels[i])][j] += d.features.at(i, j) / 100.0;
    double d01 = 0;
    for (std::size_t j = 0; j < 5; ++j)
        d01 += (cent[0][j] - cent[1][j]) * (cent[0][j] - cent[1][j]);
    CHECK(std::sqrt(d01) > 1.0);
}

TEST_CASE("make_moons labels and support") {
    auto d = make_moons(200, 0.05, 7);
    CHECK(d.n() == 200);
    CHECK(d.dim() == 2);
    for (std::size_t i = 0; i < d.n(); ++i) {
        CHECK(d.labels[i] >= 0);
        CHECK(d.labels[i] <= 1);
        CHECK(std::abs(d.features.at(i, 0)) < 3.0);
        CHECK(std::abs(d.features.at(i, 1)) < 3.0);
    }
}

TEST_CASE("csv golden file parses to exact values") {
    auto p = tmpdir() / "golden.csv";
    {
        std::ofstream f(p);
        f << "f0,f1,label\n"
             "1.5,-2.25,0\n"
             "0.125,3,2\n";
    }
    auto d = load_csv(p);
    REQUIRE(d.n() == 2);
    REQUIRE(d.dim() == 2);
    CHECK(d.features.at(0, 0) == 1.5);
    CHECK(d.features.at(0, 1) == -2.25);
    CHECK(d.features.at(1, 0) == 0.125);
    CHECK(d.features.at(1, 1) == 3.0);
    CHECK(d.labels[0] == 0);
    CHECK(d.labels[1] == 2);
}

TEST_CASE("csv label column can sit anywhere; missing label errors") {
    auto p = tmpdir() / "mid.csv";
    {
        std::ofstream f(p);
        f << "f0,label,f1\n"
             "1,4,2\n";
    }
    auto d = load_csv(p);
    CHECK(d.labels[0] == 4);
    CHECK(d.features.at(0, 0) == 1.0);
    CHECK(d.features.at(0, 1) == 2.0);

    auto q = tmpdir() / "nolabel.csv";
    {
        std::ofstream f(q);
        f << "a,b\n1,2\n";
    }
    CHECK_THROWS_AS(load_csv(q), Error);
}

TEST_CASE("csv round-trip is bit-exact") {
    auto d = make_blobs(50, 3, 2, 1.5, 0.7, 9);
    auto p = tmpdir() / "rt.csv";
    save_csv(d, p);
    auto d2 = load_csv(p);
    REQUIRE(d2.n() == d.n());
    REQUIRE(d2.dim() == d.dim());
    CHECK(std::memcmp(d.features.v.data(), d2.features.v.data(),
                      d.features.v.size() * sizeof(double)) == 0);
    CHECK(d.labels == d2.labels);
}

TEST_CASE("binary cache round-trip and corruption detection") {
    auto d = make_blobs(64, 4, 2, 1.0, 1.0, 5);
    auto p = tmpdir() / "ds.pold";
    save_cache(d, p);
    auto d2 = load_cache(p);
    CHECK(std::memcmp(d.features.v.data(), d2.features.v.data(),
                      d.features.v.size() * sizeof(double)) == 0);
    CHECK(d.labels == d2.labels);

    // bad magic
    {
        std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
    }
    CHECK_THROWS_AS(load_cache(p), Error);

    // truncation
    save_cache(d, p);
    fs::resize_file(p, fs::file_size(p) / 2);
    CHECK_THROWS_AS(load_cache(p), Error);
}

TEST_CASE("split_disjoint: disjoint, union, balanced") {
    auto d = make_blobs(100, 3, 2, 1.0, 1.0, 11);
    auto [a, b] = split_disjoint(d, 0.5, 3);
    CHECK(a.n() == 50);
    CHECK(b.n() == 50);

    // id every row by its byte pattern and check partition
    auto key = [&](const Dataset& ds, std::size_t i) {
        std::string k(reinterpret_cast<const char*>(ds.features.row(i)), 3 * sizeof(double));
        k.append(reinterpret_cast<const char*>(&ds.labels[i]), sizeof(std::int64_t));
        return k;
    };
    std::multiset<std::string> parent, kids;
    for (std::size_t i = 0; i < d.n(); ++i) parent.insert(key(d, i));
    for (std::size_t i = 0; i < a.n(); ++i) kids.insert(key(a, i));
    for (std::size_t i = 0; i < b.n(); ++i) kids.insert(key(b, i));
    CHECK(parent == kids);

    // class balance within ±10% of the parent's (exact here by stratification)
    std::vector<int> ca(2, 0), cb(2, 0);
    for (auto l : a.labels) ca[static_cast<std::size_t>(l)]++;
    for (auto l : b.labels) cb[static_cast<std::size_t>(l)]++;
    CHECK(ca[0] == 25);
    CHECK(ca[1] == 25);
    CHECK(cb[0] == 25);
    CHECK(cb[1] == 25);

    CHECK_THROWS_AS(split_disjoint(d, 0.0, 1), ConfigError);
}

TEST_CASE("get_batches: without-replacement partition per epoch") {
    auto batches = get_batches(100, 10, 8, 77, 0);
    REQUIRE(batches.size() == 10);
    std::set<std::size_t> seen;
    for (const auto& b : batches) {
        REQUIRE(b.rows.size() == 8);
        for (auto r : b.rows) {
            CHECK(r < 100);
            CHECK(seen.insert(r).second);  // no row reused within the epoch
        }
    }

    auto again = get_batches(100, 10, 8, 77, 0);
    CHECK(again[3].rows == batches[3].rows);
    auto other_epoch = get_batches(100, 10, 8, 77, 1);
    CHECK(other_epoch[0].rows != batches[0].rows);

    CHECK_THROWS_AS(get_batches(50, 10, 8, 1, 0), ConfigError);
}

TEST_CASE("sha256 known answers") {
    CHECK(to_hex(sha256_bytes(nullptr, 0)) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    const char* abc = "abc";
    CHECK(to_hex(sha256_bytes(reinterpret_cast<const std::uint8_t*>(abc), 3)) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    auto d = digest_from_hex("ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(to_hex(d) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("batch digests flag single-ulp tampering, always") {
    auto d = make_blobs(200, 4, 2, 1.0, 1.0, 123);
    auto st = rng::Stream::derive(99, 1);
    int detected = 0;
    const int trials = 100;
    for (int t = 0; t < trials; ++t) {
        BatchIndex bi;
        while (bi.rows.size() < 8) bi.rows.push_back(st.next_below(200));
        const auto ref = batch_digest(d, bi);

        Dataset tampered = d;
        const std::size_t row = bi.rows[st.next_below(8)];
        if (st.next_below(5) == 0) {
            tampered.labels[row] ^= 1;
        } else {
            double& x = tampered.features.at(row, st.next_below(4));
            x = std::nextafter(x, std::numeric_limits<double>::infinity());
        }
        if (!verify_signature(tampered, bi, ref)) ++detected;
        CHECK(verify_signature(d, bi, ref));
    }
    CHECK(detected == trials);
}
