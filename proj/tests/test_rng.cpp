#include <cmath>
#include <set>

#include "doctest.h"
#include "marsim/parallel.hpp"
#include "marsim/rng.hpp"

using namespace marsim;

// Known-answer vectors from the Random123 distribution (kat_vectors, philox4x32_10).
TEST_CASE("philox4x32-10 known answers") {
    using C = Philox4x32::Counter;
    CHECK(Philox4x32::generate({0, 0, 0, 0}, {0, 0}) == C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(Philox4x32::generate({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
          C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(Philox4x32::generate({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
          C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("counter rng streams are addressable and distinct") {
    CounterRng a(5, 1), b(5, 1), c(5, 2), d(6, 1);
    for (int i = 0; i < 100; ++i) {
        const auto x = a();
        CHECK(x == b());
        (void)c();
        (void)d();
    }
    CounterRng a2(5, 1), c2(5, 2), d2(6, 1);
    int same_c = 0, same_d = 0;
    for (int i = 0; i < 100; ++i) {
        const auto x = a2();
        same_c += x == c2();
        same_d += x == d2();
    }
    CHECK(same_c < 3);
    CHECK(same_d < 3);
}

TEST_CASE("uniform lies in the open unit interval") {
    CHECK(to_unit_open(0) > 0.0);
    CHECK(to_unit_open(~std::uint64_t(0)) < 1.0);
    CHECK(1.0 - to_unit_open(~std::uint64_t(0)) == 0x1.0p-53);
    CounterRng r(1, 1);
    double sum = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) sum += r.uniform();
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("normal draws have unit variance") {
    CounterRng r(3, 4);
    const int n = 400000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        s2 += x * x;
    }
    const double mean = s / n;
    CHECK(std::abs(mean) < 5.0 / std::sqrt(n));
    CHECK(s2 / n - mean * mean == doctest::Approx(1.0).epsilon(0.01));

    double c2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = counter_normal(9, 2, std::uint64_t(i));
        c2 += x * x;
    }
    CHECK(c2 / n == doctest::Approx(1.0).epsilon(0.01));
    CHECK(counter_normal(9, 2, 17) == counter_normal(9, 2, 17));
    CHECK(counter_normal(9, 2, 17) != counter_normal(9, 3, 17));
}

TEST_CASE("mix_seed spreads indices") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(mix_seed(1, i));
    CHECK(seen.size() == 1000);
    CHECK(mix_seed(1, 0) != mix_seed(2, 0));
}

TEST_CASE("parallel_for covers every index once, nested calls run") {
    for (unsigned threads : {1u, 3u}) {
        set_thread_count(threads);
        std::vector<int> hits(1000, 0);
        parallel_for(hits.size(), [&](std::size_t i) { ++hits[i]; });
        for (int h : hits) CHECK(h == 1);
        std::vector<int> nested(40, 0);
        parallel_for(4, [&](std::size_t i) { parallel_for(10, [&](std::size_t j) { ++nested[i * 10 + j]; }); });
        for (int h : nested) CHECK(h == 1);
    }
    set_thread_count(0);
}
