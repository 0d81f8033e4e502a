#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dat/codebook.hpp"
#include "dat/gradcheck.hpp"

using namespace dat;

namespace {

Codebook<double> random_codebook(int K, int d, uint64_t seed) {
    RngStream rng(seed, "codebook_init");
    auto cb = make_codebook<double>(K, d, rng);
    // spread the entries out beyond the tiny init range for distance tests
    for (long i = 0; i < cb.entries->size(); ++i) cb.entries->value[i] *= double(K);
    return cb;
}

}  // namespace

TEST_CASE("quantize exact match returns the entry, index, distance 0") {
    auto cb = random_codebook(8, 4, 1);
    auto lat = make_tensor<double>({1, 1, 4});
    for (int j = 0; j < 4; ++j) lat->value[j] = cb.entries->value[3 * 4 + j];
    auto r = quantize<double>(nullptr, lat, cb);
    CHECK(r.indices == std::vector<int>{3});
    for (int j = 0; j < 4; ++j) CHECK(r.quantized->value[j] == cb.entries->value[3 * 4 + j]);
}

TEST_CASE("quantize tie breaks to the lowest index") {
    Codebook<double> cb{make_tensor<double>({6, 1}, {5.0, 0.0, 2.0, 9.0, 9.0, 2.0}, true)};
    // latent at 1.0 is equidistant from entries 1 (0.0) and 2/5 (2.0)
    auto lat = make_tensor<double>({1, 1, 1}, {1.0});
    auto r = quantize<double>(nullptr, lat, cb);
    CHECK(r.indices[0] == 1);
    // equidistant between the two 2.0 entries (indices 2 and 5)
    auto lat2 = make_tensor<double>({1, 1, 1}, {2.0});
    CHECK(quantize<double>(nullptr, lat2, cb).indices[0] == 2);
}

TEST_CASE("quantize matches the exhaustive distance-scan oracle") {
    auto cb = random_codebook(32, 6, 2);
    RngStream rng(3, "latents");
    auto lat = make_tensor<double>({10, 10, 6});
    for (long i = 0; i < lat->size(); ++i) lat->value[i] = rng.uniform(-2.0, 2.0);
    auto r = quantize<double>(nullptr, lat, cb);
    REQUIRE(r.indices.size() == 100);
    for (int v = 0; v < 100; ++v) {
        int best = -1;
        double best_dist = 1e300;
        for (int k = 0; k < 32; ++k) {
            double dist = 0;
            for (int j = 0; j < 6; ++j) {
                double d = lat->value[v * 6 + j] - cb.entries->value[k * 6 + j];
                dist += d * d;
            }
            if (dist < best_dist) {
                best_dist = dist;
                best = k;
            }
        }
        CHECK(r.indices[v] == best);
    }
}

TEST_CASE("quantize rejects non-finite latents") {
    auto cb = random_codebook(4, 2, 4);
    auto lat = make_tensor<double>({1, 1, 2}, {0.5, std::nan("")});
    CHECK_THROWS_AS(quantize<double>(nullptr, lat, cb), std::invalid_argument);
}

TEST_CASE("quantize is idempotent bitwise") {
    auto cb = random_codebook(16, 3, 5);
    RngStream rng(6, "latents_idem");
    auto lat = make_tensor<double>({4, 4, 3});
    for (long i = 0; i < lat->size(); ++i) lat->value[i] = rng.uniform(-2.0, 2.0);
    auto r1 = quantize<double>(nullptr, lat, cb);
    auto r2 = quantize<double>(nullptr, r1.quantized, cb);
    CHECK(r1.indices == r2.indices);
    for (long i = 0; i < lat->size(); ++i) CHECK(r1.quantized->value[i] == r2.quantized->value[i]);
}

TEST_CASE("vq_losses are zero on exact codebook points") {
    auto cb = random_codebook(8, 2, 7);
    auto lat = make_tensor<double>({2, 1, 2});
    for (int j = 0; j < 2; ++j) {
        lat->value[j] = cb.entries->value[0 * 2 + j];
        lat->value[2 + j] = cb.entries->value[5 * 2 + j];
    }
    auto q = quantize<double>(nullptr, lat, cb);
    auto [cl, co] = vq_losses<double>(nullptr, lat, q.quantized);
    CHECK(cl->value[0] == 0.0);
    CHECK(co->value[0] == 0.0);
}

TEST_CASE("vq_losses symmetric value r^2 at distance r, d=1") {
    Codebook<double> cb{make_tensor<double>({2, 1}, {0.0, 10.0}, true)};
    auto lat = make_tensor<double>({1, 1, 1}, {0.75});
    auto q = quantize<double>(nullptr, lat, cb);
    auto [cl, co] = vq_losses<double>(nullptr, lat, q.quantized);
    CHECK(cl->value[0] == doctest::Approx(0.5625).epsilon(1e-12));
    CHECK(co->value[0] == doctest::Approx(0.5625).epsilon(1e-12));
}

TEST_CASE("vq loss gradient isolation between encoder and codebook") {
    auto cb = random_codebook(8, 3, 9);
    RngStream rng(10, "latents_grad");
    auto lat = make_tensor<double>({3, 3, 3}, true);
    for (long i = 0; i < lat->size(); ++i) lat->value[i] = rng.uniform(-2.0, 2.0);
    cb.entries->ensure_grad();

    SUBCASE("codebook term updates entries only") {
        Tape<double> tape;
        auto q = quantize(&tape, lat, cb);
        auto [cl, co] = vq_losses(&tape, lat, q.quantized);
        tape.backward(cl);
        for (long i = 0; i < lat->size(); ++i) CHECK(lat->grad[i] == 0.0);
        double cb_norm = 0;
        for (long i = 0; i < cb.entries->size(); ++i) cb_norm += std::abs(cb.entries->grad[i]);
        CHECK(cb_norm > 0.0);
    }
    SUBCASE("commitment term updates latents only") {
        Tape<double> tape;
        auto q = quantize(&tape, lat, cb);
        auto [cl, co] = vq_losses(&tape, lat, q.quantized);
        tape.backward(co);
        for (long i = 0; i < cb.entries->size(); ++i) CHECK(cb.entries->grad[i] == 0.0);
        double lat_norm = 0;
        for (long i = 0; i < lat->size(); ++i) lat_norm += std::abs(lat->grad[i]);
        CHECK(lat_norm > 0.0);
    }
}

TEST_CASE("usage_histogram counts") {
    CHECK(usage_histogram(std::vector<int>(17, 0), 4) == std::vector<long>{17, 0, 0, 0});
    CHECK(usage_histogram({0, 1, 2, 3}, 4) == std::vector<long>{1, 1, 1, 1});
    RngStream rng(11, "hist");
    std::vector<int> idx(500);
    std::vector<long> tally(32, 0);
    for (auto& i : idx) {
        i = rng.uniform_int(32);
        ++tally[size_t(i)];
    }
    CHECK(usage_histogram(idx, 32) == tally);
    long total = 0;
    for (long c : tally) total += c;
    CHECK(total == 500);
}

TEST_CASE("usage_histogram rejects out-of-range index") {
    CHECK_THROWS_AS(usage_histogram({0, 7}, 4), std::invalid_argument);
}

TEST_CASE("codebook requires K >= 2") {
    RngStream rng(12, "cb_small");
    CHECK_THROWS_AS(make_codebook<double>(1, 4, rng), std::invalid_argument);
}
