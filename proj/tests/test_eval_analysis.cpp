#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "dat/analysis.hpp"
#include "dat/eval.hpp"
#include "doctest.h"

using namespace dat;

namespace {

Tensor<float> random_image(Shape shape, uint64_t seed) {
    RngStream rng(seed, "eval_test_image");
    auto x = make_tensor<float>(shape);
    for (long i = 0; i < x->size(); ++i) x->value[i] = float(rng.uniform());
    return x;
}

}  // namespace

TEST_CASE("pcc basics") {
    std::vector<double> a{1, 2, 3, 4, 5}, b{2, 4, 6, 8, 10}, c{5, 4, 3, 2, 1};
    CHECK(pcc(a, a) == doctest::Approx(1.0));
    CHECK(pcc(a, b) == doctest::Approx(1.0));
    CHECK(pcc(a, c) == doctest::Approx(-1.0));
    CHECK_THROWS_WITH_AS(pcc(a, {1, 2}), doctest::Contains("length mismatch"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(pcc({1.0, 1.0, 1.0}, a == a ? std::vector<double>{1, 2, 3} : a),
                         doctest::Contains("constant"), std::invalid_argument);
    CHECK_THROWS_AS(pcc({1.0}, {2.0}), std::invalid_argument);
}

TEST_CASE("pcc histogram bins the closed interval") {
    auto h = pcc_histogram({-1.0, -0.9, 0.0, 0.95, 1.0}, 4);
    REQUIRE(h.counts.size() == 4);
    CHECK(h.counts[0] == 2);
    CHECK(h.counts[1] == 0);
    CHECK(h.counts[2] == 1);
    CHECK(h.counts[3] == 2);  // 1.0 falls into the top bin
    CHECK(h.edges.front() == -1.0);
    CHECK(h.edges.back() == 1.0);
    CHECK_THROWS_AS(pcc_histogram({1.5}, 4), std::invalid_argument);
    CHECK_THROWS_AS(pcc_histogram({0.0}, 0), std::invalid_argument);
}

TEST_CASE("bn statistic pcc is 1 against itself") {
    auto m = make_classifier<float>(3, 4, 4, 201);
    auto x = random_image({4, 3, 32, 32}, 1);
    auto [pm, pv] = bn_statistic_pcc(m, x, x);
    CHECK(pm == doctest::Approx(1.0));
    CHECK(pv == doctest::Approx(1.0));
}

TEST_CASE("color count") {
    auto flat = make_tensor<float>({3, 4, 4});
    std::fill(flat->value.begin(), flat->value.end(), 0.5f);
    CHECK(color_count(flat) == 1);

    auto two = make_tensor<float>({3, 4, 4});
    for (long i = 0; i < two->size(); ++i) two->value[i] = (i % 16 < 8) ? 0.25f : 0.75f;
    CHECK(color_count(two) == 2);

    // sub-quantum noise collapses under coarse quantization
    auto noisy = make_tensor<float>({3, 4, 4});
    for (long i = 0; i < noisy->size(); ++i) noisy->value[i] = 0.5f + 1e-4f * float(i % 16);
    CHECK(color_count(noisy, 16) == 1);
    CHECK(color_count(noisy, 65536) > 1);

    CHECK_THROWS_AS(color_count(make_tensor<float>({3, 4}), 256), std::invalid_argument);
    CHECK_THROWS_AS(color_count(flat, 1), std::invalid_argument);
}

TEST_CASE("radial frequency profile satisfies Parseval") {
    auto x = random_image({3, 16, 16}, 2);
    auto prof = radial_frequency_profile(x, 8);
    REQUIRE(prof.size() == 8);
    double total = 0;
    for (double v : prof) {
        CHECK(v >= 0.0);
        total += v;
    }
    double pixel_energy = 0;
    for (long i = 0; i < x->size(); ++i) pixel_energy += double(x->value[i]) * x->value[i];
    CHECK(total == doctest::Approx(pixel_energy).epsilon(1e-6));

    // a constant image is pure DC: all energy in the lowest band
    auto flat = make_tensor<float>({1, 8, 8});
    std::fill(flat->value.begin(), flat->value.end(), 0.3f);
    auto fp = radial_frequency_profile(flat, 4);
    CHECK(fp[0] == doctest::Approx(0.09 * 64).epsilon(1e-6));
    for (size_t i = 1; i < fp.size(); ++i) CHECK(fp[i] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("gradient alignment") {
    auto a = make_tensor<float>({4}, {1, 2, 3, 4});
    auto b = make_tensor<float>({4}, {-1, -2, -3, -4});
    CHECK(gradient_alignment(a, a) == doctest::Approx(1.0));
    CHECK(gradient_alignment(a, b) == doctest::Approx(-1.0));
    auto zero = make_tensor<float>({4});
    CHECK_THROWS_WITH_AS(gradient_alignment(a, zero), doctest::Contains("zero vector"),
                         std::invalid_argument);
    CHECK_THROWS_AS(gradient_alignment(a, make_tensor<float>({3})), std::invalid_argument);
}

TEST_CASE("corruption kernels: identity and edge cases") {
    auto x = random_image({3, 16, 16}, 3);
    CHECK(apply_brightness(x, 0.0f)->value == x->value);
    CHECK(apply_contrast(x, 1.0f)->value == x->value);
    CHECK(apply_pixelate(x, 1)->value == x->value);
    CHECK_THROWS_AS(apply_pixelate(x, 0), std::invalid_argument);

    auto flat = make_tensor<float>({1, 8, 8});
    std::fill(flat->value.begin(), flat->value.end(), 0.4f);
    auto blurred = apply_gaussian_blur(flat, 1.5f);
    for (long i = 0; i < flat->size(); ++i)
        CHECK(blurred->value[i] == doctest::Approx(0.4f).epsilon(1e-5));

    // shot noise of a black image stays black
    auto black = make_tensor<float>({1, 8, 8});
    auto shot = corrupt(black, {CorruptionKind::ShotNoise, 5, 42});
    for (long i = 0; i < shot->size(); ++i) CHECK(shot->value[i] == 0.0f);
}

TEST_CASE("corrupt is deterministic in the spec and bounded") {
    auto x = random_image({3, 16, 16}, 4);
    for (int k = 0; k < kNumCorruptionKinds; ++k) {
        CorruptionSpec spec{CorruptionKind(k), 3, 7};
        auto a = corrupt(x, spec);
        auto b = corrupt(x, spec);
        CHECK(a->value == b->value);
        for (long i = 0; i < a->size(); ++i) {
            CHECK(a->value[i] >= 0.0f);
            CHECK(a->value[i] <= 1.0f);
        }
    }
    auto s1 = corrupt(x, {CorruptionKind::GaussianNoise, 3, 7});
    auto s2 = corrupt(x, {CorruptionKind::GaussianNoise, 3, 8});
    CHECK(s1->value != s2->value);  // seed matters
    auto v1 = corrupt(x, {CorruptionKind::GaussianNoise, 1, 7});
    auto v5 = corrupt(x, {CorruptionKind::GaussianNoise, 5, 7});
    double d1 = 0, d5 = 0;
    for (long i = 0; i < x->size(); ++i) {
        d1 += std::abs(double(v1->value[i]) - x->value[i]);
        d5 += std::abs(double(v5->value[i]) - x->value[i]);
    }
    CHECK(d5 > d1);  // severity is monotone in expectation
    CHECK_THROWS_AS(corrupt(x, {CorruptionKind::GaussianNoise, 0, 7}), std::invalid_argument);
    CHECK_THROWS_AS(corrupt(x, {CorruptionKind::GaussianNoise, 6, 7}), std::invalid_argument);
    CHECK(corruption_from_name("pixelate") == CorruptionKind::Pixelate);
    CHECK_THROWS_AS(corruption_from_name("fog"), std::invalid_argument);
}

TEST_CASE("fgsm stays inside the epsilon ball and the image box") {
    auto m = make_classifier<float>(3, 4, 4, 202);
    auto x = random_image({2, 3, 32, 32}, 5);
    std::vector<int> y{0, 2};
    const float eps = 4.0f / 255.0f;
    auto adv = fgsm_attack(m, x, y, eps);
    for (long i = 0; i < x->size(); ++i) {
        CHECK(std::abs(adv->value[i] - x->value[i]) <= eps + 1e-6f);
        CHECK(adv->value[i] >= 0.0f);
        CHECK(adv->value[i] <= 1.0f);
    }
    auto adv2 = fgsm_attack(m, x, y, eps);
    CHECK(adv->value == adv2->value);
}

TEST_CASE("evaluate produces the metric schema and validates options") {
    auto m = make_classifier<float>(3, 4, 4, 203);
    auto test = synthetic_dataset(16, 4, 60);
    EvalOptions opts;
    opts.fgsm_eps = {1.0f / 255.0f, 4.0f / 255.0f};
    opts.batch = 16;
    auto rec = evaluate(m, test, opts);
    CHECK(rec.values.count("clean_acc") == 1);
    CHECK(rec.values.count("clean_err") == 1);
    CHECK(rec.values.count("fgsm_1_255_acc") == 1);
    CHECK(rec.values.count("fgsm_4_255_acc") == 1);
    CHECK(rec.values.count("corruption_gaussian_noise_s3_err") == 1);
    CHECK(rec.values.count("corruption_pixelate_err") == 1);
    CHECK(rec.values.count("corruption_mean_acc") == 1);
    CHECK(rec.values.at("clean_acc") + rec.values.at("clean_err") == doctest::Approx(1.0));

    EvalOptions bad;
    bad.with_discretizer = true;
    CHECK_THROWS_WITH_AS(evaluate(m, test, bad), doctest::Contains("no discretizer"),
                         std::invalid_argument);
    EvalOptions bad2;
    bad2.want_rce = true;
    CHECK_THROWS_WITH_AS(evaluate(m, test, bad2), doctest::Contains("without baseline"),
                         std::invalid_argument);
}

TEST_CASE("rCE against itself is exactly 1") {
    auto m = make_classifier<float>(3, 4, 4, 204);
    auto test = synthetic_dataset(16, 4, 61);
    EvalOptions opts;
    opts.fgsm_eps = {};
    opts.batch = 16;
    auto base = evaluate(m, test, opts);

    EvalOptions with_base = opts;
    with_base.want_rce = true;
    with_base.baseline_errors = base.values;
    auto rec = evaluate(m, test, with_base);
    CHECK(rec.values.at("rce") == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rec.values.at("mce") == doctest::Approx(1.0).epsilon(1e-12));

    // a baseline missing a severity entry is rejected
    auto broken = base.values;
    broken.erase("corruption_contrast_s2_err");
    with_base.baseline_errors = broken;
    CHECK_THROWS_WITH_AS(evaluate(m, test, with_base), doctest::Contains("missing"),
                         std::invalid_argument);
}

TEST_CASE("evaluate with a discretizer routes inputs through Q") {
    auto m = make_classifier<float>(3, 4, 4, 205);
    auto disc = make_discretizer<float>(4, 8, 16, 3, 8, 206);
    auto test = synthetic_dataset(8, 4, 62);
    EvalOptions opts;
    opts.fgsm_eps = {4.0f / 255.0f};
    opts.corruptions = false;
    opts.batch = 8;
    opts.with_discretizer = true;
    opts.discretizer = &disc;
    auto rec = evaluate(m, test, opts);
    CHECK(rec.values.count("clean_acc") == 1);
    CHECK(rec.values.count("fgsm_4_255_acc") == 1);
}
