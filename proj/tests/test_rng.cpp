#include <doctest.h>

#include <cmath>
#include <vector>

#include "dlspf/rng.hpp"

using dlspf::RngStream;

TEST_CASE("same (seed, id) reproduces the sequence exactly") {
    RngStream a(42, 7);
    RngStream b(42, 7);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("distinct stream ids differ") {
    RngStream a(42, 0);
    RngStream b(42, 1);
    int same = 0;
    for (int i = 0; i < 100; ++i)
        if (a.next_u64() == b.next_u64()) ++same;
    CHECK(same == 0);
}

TEST_CASE("distinct seeds differ") {
    RngStream a(1, 0);
    RngStream b(2, 0);
    int same = 0;
    for (int i = 0; i < 100; ++i)
        if (a.next_u64() == b.next_u64()) ++same;
    CHECK(same == 0);
}

TEST_CASE("normal draws pass mean/variance sanity at n = 1e4") {
    RngStream rng(123, 5);
    const int n = 10000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        sumsq += v * v;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("uniform stays in [0, 1) and covers the range") {
    RngStream rng(9, 3);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}

TEST_CASE("substream ids separate nested contexts") {
    CHECK(dlspf::substream_id(1, 2, 3) != dlspf::substream_id(1, 3, 2));
    CHECK(dlspf::substream_id(0, 0, 0) != dlspf::substream_id(0, 0, 1));
    CHECK(dlspf::substream_id(5, 0, 0) != dlspf::substream_id(0, 5, 0));
}
