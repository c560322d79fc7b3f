#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "facediff/conditioning.hpp"
#include "facediff/gradcheck.hpp"

using namespace facediff;

static CoarseEncoder<double> make_encoder(ParamStore<double>& ps) {
    // 3 styles, 4 emotions, small dims.
    return CoarseEncoder<double>(ps, "cenc", 3, 4, 5, 6, 2, 7);
}

TEST_CASE("coarse encoding: shape, determinism, zero-intensity segment") {
    ParamStore<double> ps(40);
    auto enc = make_encoder(ps);
    CoarseCondition c{1, 2, 0.5};

    auto out = enc.encode_value(c);
    REQUIRE(out.rows() == 1);
    REQUIRE(out.cols() == 7);
    REQUIRE(out == enc.encode_value(c));

    // Zero intensity contributes a zero segment: identical to hand-zeroing
    // the intensity vector entirely.
    CoarseCondition c0{1, 2, 0.0};
    auto with_zero_level = enc.encode_value(c0);
    DTensor saved = enc.intensity_vector->value;
    enc.intensity_vector->value = DTensor(1, 2);
    auto with_zero_vector = enc.encode_value(c0);
    enc.intensity_vector->value = saved;
    REQUIRE(with_zero_level == with_zero_vector);
}

TEST_CASE("coarse encoding matches the concat-then-matmul oracle") {
    ParamStore<double> ps(41);
    auto enc = make_encoder(ps);
    Rng r(42);
    for (int rep = 0; rep < 20; ++rep) {
        CoarseCondition c{r.uniform_int(3), r.uniform_int(4), r.uniform(0.0, 1.0)};
        auto fast = enc.encode_value(c);
        // Scalar oracle: concat the 3 segments, then one affine map.
        std::vector<double> cat;
        for (int64_t j = 0; j < 5; ++j) cat.push_back(enc.style_table->value.at(c.style_id, j));
        for (int64_t j = 0; j < 6; ++j)
            cat.push_back(enc.emotion_table->value.at(c.emotion_id, j));
        for (int64_t j = 0; j < 2; ++j)
            cat.push_back(c.intensity * enc.intensity_vector->value.at(0, j));
        for (int64_t o = 0; o < 7; ++o) {
            double acc = enc.fuse.b->value.at(0, o);
            for (size_t k = 0; k < cat.size(); ++k)
                acc += cat[k] * enc.fuse.w->value.at(int64_t(k), o);
            REQUIRE(fast.at(0, o) == Catch::Approx(acc).margin(1e-12));
        }
    }
}

TEST_CASE("coarse encoding is linear in intensity with ids held fixed") {
    ParamStore<double> ps(43);
    auto enc = make_encoder(ps);
    for (double a : {0.5, 1.0 / 3.0, 2.0, intensity_level(2)}) {
        CoarseCondition base{2, 1, 0.0}, unit{2, 1, 1.0}, at{2, 1, a};
        auto f0 = enc.encode_value(base);
        auto f1 = enc.encode_value(unit);
        auto fa = enc.encode_value(at);
        for (int64_t j = 0; j < 7; ++j)
            REQUIRE(fa.at(0, j) - f0.at(0, j) ==
                    Catch::Approx(a * (f1.at(0, j) - f0.at(0, j))).margin(1e-12));
    }
}

TEST_CASE("coarse encoding rejects bad ids and non-finite intensity") {
    ParamStore<double> ps(44);
    auto enc = make_encoder(ps);
    REQUIRE_THROWS_AS(enc.encode_value({-1, 0, 0.0}), std::out_of_range);
    REQUIRE_THROWS_AS(enc.encode_value({3, 0, 0.0}), std::out_of_range);
    REQUIRE_THROWS_AS(enc.encode_value({0, -1, 0.0}), std::out_of_range);
    REQUIRE_THROWS_AS(enc.encode_value({0, 4, 0.0}), std::out_of_range);
    REQUIRE_THROWS_AS(enc.encode_value({0, 0, std::nan("")}), std::invalid_argument);
    REQUIRE_THROWS_AS(CoarseEncoder<double>(ps, "bad", 0, 2, 4, 4, 4, 8),
                      std::invalid_argument);
}

TEST_CASE("coarse encoder gradients: correct and confined to the used rows") {
    ParamStore<double> ps(45);
    auto enc = make_encoder(ps);
    Rng r(46);
    DTensor target(1, 7);
    for (auto& x : target.v) x = r.normal();
    CoarseCondition c{1, 3, 0.7};

    ps.zero_grads();
    auto build = [&]() { return sum_sq_diff(enc(c), constant(DTensor(target))); };
    backward(build());

    // Unused table rows receive exactly zero gradient.
    for (int64_t row = 0; row < 3; ++row)
        for (int64_t j = 0; j < 5; ++j)
            if (row != c.style_id) REQUIRE(enc.style_table->grad.at(row, j) == 0.0);
    for (int64_t row = 0; row < 4; ++row)
        for (int64_t j = 0; j < 6; ++j)
            if (row != c.emotion_id) REQUIRE(enc.emotion_table->grad.at(row, j) == 0.0);

    auto res = grad_check<double>(ps, [&]() { return build()->val.v[0]; });
    INFO(res.worst);
    REQUIRE(res.ok);
}

TEST_CASE("condition dropout: endpoints and independence") {
    Rng r(47);
    DTensor audio(4, 3), coarse(1, 5), fine(4, 6);
    ConditionBundle<double> cond{&audio, &coarse, &fine};

    DropoutPolicy never{0.0, 0.0};
    for (int i = 0; i < 50; ++i) {
        auto out = apply_dropout(cond, never, r);
        REQUIRE(out.audio == &audio);
        REQUIRE(out.coarse == &coarse);
        REQUIRE(out.fine == &fine);
    }
    DropoutPolicy always{1.0, 1.0};
    for (int i = 0; i < 50; ++i) {
        auto out = apply_dropout(cond, always, r);
        REQUIRE(out.audio == nullptr);
        REQUIRE(out.coarse == nullptr);
        REQUIRE(out.fine == &fine);  // fine never touched
    }

    // Monte-Carlo: marginal rates 0.2 ± 0.015, joint independence.
    const int n = 10000;
    int drop_a = 0, drop_c = 0, drop_both = 0;
    Rng mc = substream(48, "dropout");
    DropoutPolicy p;  // defaults 0.2 / 0.2
    for (int i = 0; i < n; ++i) {
        auto out = apply_dropout(cond, p, mc);
        bool da = out.audio == nullptr, dc = out.coarse == nullptr;
        drop_a += da;
        drop_c += dc;
        drop_both += da && dc;
    }
    double ra = double(drop_a) / n, rc = double(drop_c) / n, rb = double(drop_both) / n;
    REQUIRE(std::abs(ra - 0.2) < 0.015);
    REQUIRE(std::abs(rc - 0.2) < 0.015);
    double corr = (rb - ra * rc) / std::sqrt(ra * (1 - ra) * rc * (1 - rc));
    REQUIRE(std::abs(corr) < 0.05);

    DropoutPolicy bad{-0.1, 0.2};
    REQUIRE_THROWS_AS(apply_dropout(cond, bad, r), std::invalid_argument);
}

TEST_CASE("emotion swap: forced, never-identity, uniform") {
    Rng r = substream(49, "swap");
    CoarseCondition c{2, 0, 0.66};

    // Two labels: the only legal outcome is the other one.
    for (int i = 0; i < 100; ++i) {
        auto s = swap_emotion(c, 2, r);
        REQUIRE(s.emotion_id == 1);
        REQUIRE(s.style_id == 2);
        REQUIRE(s.intensity == 0.66);
    }

    // Five labels: never the input, roughly uniform over the other four.
    const int n = 10000;
    std::vector<int> hits(5, 0);
    CoarseCondition c5{0, 2, 1.0};
    for (int i = 0; i < n; ++i) {
        auto s = swap_emotion(c5, 5, r);
        REQUIRE(s.emotion_id != 2);
        hits[size_t(s.emotion_id)]++;
    }
    REQUIRE(hits[2] == 0);
    for (int64_t e = 0; e < 5; ++e)
        if (e != 2) REQUIRE(std::abs(hits[size_t(e)] / double(n) - 0.25) < 0.02);

    REQUIRE_THROWS_AS(swap_emotion(c, 1, r), std::invalid_argument);
    CoarseCondition oob{0, 7, 0.0};
    REQUIRE_THROWS_AS(swap_emotion(oob, 4, r), std::out_of_range);
}

TEST_CASE("fine sparsification: endpoints, subsets, and survival rate") {
    Rng r = substream(50, "sparse");
    FineCondition fc;
    fc.triplets.push_back({{"AU01", "AU04"}, 0, 10});
    fc.triplets.push_back({{"AU12"}, 5, 20});
    fc.triplets.push_back({{"AU06", "AU12", "AU15"}, 30, 42});

    // Both probabilities zero: identity, order preserved.
    auto same = sparsify_fine(fc, 0.0, 0.0, r);
    REQUIRE(same.triplets.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        REQUIRE(same.triplets[i].aus == fc.triplets[i].aus);
        REQUIRE(same.triplets[i].start == fc.triplets[i].start);
        REQUIRE(same.triplets[i].end == fc.triplets[i].end);
    }

    REQUIRE(sparsify_fine(fc, 1.0, 0.0, r).empty());
    REQUIRE(sparsify_fine(fc, 0.0, 1.0, r).empty());  // all AUs dropped → removed

    // Surviving triplets keep their interval and a subset of their AUs.
    for (int rep = 0; rep < 200; ++rep) {
        auto out = sparsify_fine(fc, 0.5, 0.5, r);
        size_t src = 0;
        for (const auto& tr : out.triplets) {
            while (src < fc.triplets.size() && fc.triplets[src].start != tr.start) ++src;
            REQUIRE(src < fc.triplets.size());
            REQUIRE(tr.end == fc.triplets[src].end);
            REQUIRE(!tr.aus.empty());
            for (const auto& au : tr.aus) {
                bool found = false;
                for (const auto& a : fc.triplets[src].aus) found = found || a == au;
                REQUIRE(found);
            }
            ++src;
        }
    }

    // Monte-Carlo triplet survival at the default p_triplet = 0.8.
    FineCondition one;
    one.triplets.push_back({{"AU02"}, 0, 4});
    int survived = 0;
    const int n = 10000;
    Rng mc = substream(51, "survival");
    for (int i = 0; i < n; ++i)
        survived += sparsify_fine(one, kDefaultPTriplet, 0.0, mc).empty() ? 0 : 1;
    REQUIRE(std::abs(survived / double(n) - 0.2) < 0.015);

    // Per-AU survival at p_au = 0.3 within surviving triplets.
    FineCondition wide;
    wide.triplets.push_back({{"AU01", "AU02", "AU04", "AU05", "AU06", "AU07", "AU45"}, 0, 9});
    int64_t kept_aus = 0;
    Rng mc2 = substream(52, "au");
    for (int i = 0; i < n; ++i) {
        auto out = sparsify_fine(wide, 0.0, kDefaultPAu, mc2);
        if (!out.empty()) kept_aus += int64_t(out.triplets[0].aus.size());
    }
    REQUIRE(std::abs(kept_aus / double(n * 7) - 0.7) < 0.015);

    REQUIRE_THROWS_AS(sparsify_fine(fc, 1.2, 0.0, r), std::invalid_argument);
    REQUIRE_THROWS_AS(sparsify_fine(fc, 0.0, -0.2, r), std::invalid_argument);
}
