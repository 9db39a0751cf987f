#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "crocodil/corpus/grammar.hpp"
#include "crocodil/masking/schedule.hpp"
#include "crocodil/numerics/stats.hpp"

using namespace crocodil;

TEST_CASE("linear alpha endpoints and midpoint") {
    auto s = MaskSchedule::linear();
    CHECK(s.alpha(0.0) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(s.alpha(1.0) == doctest::Approx(0.0).epsilon(1e-5));
    CHECK(s.alpha(0.25) == doctest::Approx(0.75));
    CHECK_THROWS(s.alpha(-0.1));
    CHECK_THROWS(s.alpha(1.1));
    // strictly decreasing on a grid
    double prev = 2;
    for (int i = 0; i <= 20; ++i) {
        double a = s.alpha(i / 20.0);
        CHECK(a < prev);
        prev = a;
    }
}

TEST_CASE("custom table schedule interpolates and validates") {
    auto s = MaskSchedule::table({{0.0, 1.0}, {0.5, 0.9}, {1.0, 0.0}});
    CHECK(s.alpha(0.25) == doctest::Approx(0.95));
    CHECK(s.alpha(0.75) == doctest::Approx(0.45));
    CHECK_THROWS(MaskSchedule::table({{0.0, 0.5}, {1.0, 0.7}})); // not decreasing
}

TEST_CASE("forward_mask endpoints") {
    Vocab v(std::vector<std::string>{"a", "b"});
    auto sched = MaskSchedule::linear();
    Sequence x0{v.bos(), v.id("a"), v.id("b"), v.eos()};
    RngStream rng(3, 3);
    CHECK(forward_mask(x0, 0.0, sched, v, rng) == x0);
    auto xt = forward_mask(x0, 1.0, sched, v, rng);
    for (auto id : xt) CHECK(id == v.mask());
    CHECK_THROWS(forward_mask(xt, 0.5, sched, v, rng)); // already masked
}

TEST_CASE("masked fraction matches binomial statistics at n = 10^4") {
    Vocab v(std::vector<std::string>{"a"});
    auto sched = MaskSchedule::linear();
    const int n = 10000;
    Sequence x0(size_t(n), v.id("a"));
    RngStream rng(17, 1);
    const double t = 0.3;
    auto xt = forward_mask(x0, t, sched, v, rng);
    int masked = 0;
    for (auto id : xt) masked += (id == v.mask());
    const double frac = double(masked) / n;
    const double sd = std::sqrt(0.3 * 0.7 / n);
    CHECK(std::abs(frac - t) <= 3 * sd);
}

TEST_CASE("masked fraction within 3 sigma across a 9-point t grid") {
    Vocab v(std::vector<std::string>{"a"});
    auto sched = MaskSchedule::linear();
    const int n = 10000;
    Sequence x0(size_t(n), v.id("a"));
    RngStream rng(18, 2);
    for (int k = 1; k <= 9; ++k) {
        const double t = k / 10.0;
        auto xt = forward_mask(x0, t, sched, v, rng);
        int masked = 0;
        for (auto id : xt) masked += (id == v.mask());
        const double p = 1.0 - sched.alpha(t);
        const double sd = std::sqrt(p * (1 - p) / n);
        CHECK(std::abs(double(masked) / n - p) <= 3 * sd);
    }
}

TEST_CASE("two-stage masking equals single-stage in distribution (chi-squared)") {
    // route A: mask straight to t. route B: mask to s, then apply the
    // conditional kernel keeping survivors with probability alpha_t/alpha_s.
    Vocab v(std::vector<std::string>{"a"});
    auto sched = MaskSchedule::linear();
    const double s = 0.35, t = 0.7;
    const int n = 16, N = 100000;
    Sequence x0(size_t(n), v.id("a"));
    RngStream rng(21, 4);

    // cells: number of masked positions per sample (0..n)
    std::vector<int64_t> ca(size_t(n + 1), 0), cb(size_t(n + 1), 0);
    const double keep = sched.alpha(t) / sched.alpha(s);
    for (int i = 0; i < N; ++i) {
        auto xa = forward_mask(x0, t, sched, v, rng);
        int m = 0;
        for (auto id : xa) m += (id == v.mask());
        ca[size_t(m)]++;

        auto xs = forward_mask(x0, s, sched, v, rng);
        int m2 = 0;
        for (auto& id : xs) {
            if (id != v.mask() && rng.uniform() >= keep) id = v.mask();
            m2 += (id == v.mask());
        }
        cb[size_t(m2)]++;
    }
    auto r = chi2_two_sample(ca, cb);
    CHECK(r.p_value > 0.01);
}

TEST_CASE("reverse transition closed form") {
    Vocab v(std::vector<std::string>{"a", "b"});
    auto sched = MaskSchedule::linear();
    // alpha_s = 0.75 at s = 0.25; alpha_t = 0.5 at t = 0.5
    auto r = reverse_transition(v.mask(), v.id("a"), 0.25, 0.5, sched, v);
    CHECK(r.p_stay_mask == doctest::Approx(0.5));
    CHECK(r.p_reveal == doctest::Approx(0.5));
    CHECK(r.p_stay_value == 0.0);

    auto point = reverse_transition(v.id("b"), v.id("a"), 0.25, 0.5, sched, v);
    CHECK(point.p_stay_value == 1.0);
    CHECK(point.p_stay_mask == 0.0);

    CHECK_THROWS(reverse_transition(v.mask(), v.id("a"), 0.5, 0.5, sched, v));

    // s -> t limit: staying masked approaches certainty
    auto lim = reverse_transition(v.mask(), v.id("a"), 0.499999, 0.5, sched, v);
    CHECK(lim.p_stay_mask == doctest::Approx(1.0).epsilon(1e-4));

    // valid categorical across an (s, t) grid
    for (int si = 0; si < 9; ++si)
        for (int ti = si + 1; ti <= 9; ++ti) {
            auto rt = reverse_transition(v.mask(), v.id("a"), si / 10.0 + 0.05, ti / 10.0 + 0.05,
                                         sched, v);
            CHECK(rt.p_stay_mask >= 0);
            CHECK(rt.p_reveal >= 0);
            CHECK(rt.p_stay_mask + rt.p_reveal + rt.p_stay_value ==
                  doctest::Approx(1.0).epsilon(1e-12));
        }
}

TEST_CASE("remask policies") {
    Vocab v(std::vector<std::string>{"a", "b", "c", "d"});
    auto sched = MaskSchedule::linear();
    RngStream rng(31, 7);
    Sequence x{v.id("a"), v.id("b"), v.id("c"), v.id("d")};

    CHECK(remask(x, 0.0, RemaskPolicy::Random, sched, v, rng) == x);
    auto full = remask(x, 1.0, RemaskPolicy::Random, sched, v, rng);
    for (auto id : full) CHECK(id == v.mask());

    // confidence policy: alpha_t = 0.5 masks the 2 lowest-confidence slots
    std::vector<double> conf{0.9, 0.2, 0.8, 0.1};
    auto ct = remask(x, 0.5, RemaskPolicy::Confidence, sched, v, rng, &conf);
    CHECK(ct[0] == v.id("a"));
    CHECK(ct[1] == v.mask());
    CHECK(ct[2] == v.id("c"));
    CHECK(ct[3] == v.mask());

    CHECK_THROWS(remask(x, 0.5, RemaskPolicy::Confidence, sched, v, rng, nullptr));
}

TEST_CASE("build_plan worked example and error cases") {
    auto p = build_plan(256, 32, 32);
    CHECK(p.blocks == 8);
    CHECK(p.steps_per_block == 4);
    CHECK(p.reveal_per_step == 8);
    CHECK(p.nfe() == 32);

    auto seq = build_plan(256, 256, 256);
    CHECK(seq.blocks == 1);
    CHECK(seq.reveal_per_step == 1);

    CHECK_THROWS(build_plan(256, 32, 33));
    CHECK_THROWS(build_plan(256, 33, 32));

    // sum of reveals covers the whole generation; calls equal nfe
    for (auto [g, b, f] : {std::tuple{256, 32, 64}, {128, 16, 32}, {64, 64, 16}}) {
        auto plan = build_plan(g, b, f);
        int reveals = 0;
        for (int c : plan.reveal_counts()) reveals += c;
        CHECK(reveals == plan.block_size);
        CHECK(plan.blocks * plan.steps_per_block == f);
        CHECK(plan.blocks * plan.block_size == g);
    }
}
