#include <catch2/catch_amalgamated.hpp>

#include "facediff/rng.hpp"
#include "facediff/tensor.hpp"

using facediff::DTensor;
using facediff::Rng;

// Naive triple-loop matmul used as the oracle for the Eigen-backed gemm.
static DTensor naive_gemm(const DTensor& a, bool ta, const DTensor& b, bool tb) {
    int64_t M = ta ? a.cols() : a.rows();
    int64_t K = ta ? a.rows() : a.cols();
    int64_t N = tb ? b.rows() : b.cols();
    DTensor c(M, N);
    for (int64_t i = 0; i < M; ++i)
        for (int64_t j = 0; j < N; ++j) {
            double s = 0;
            for (int64_t k = 0; k < K; ++k)
                s += (ta ? a.at(k, i) : a.at(i, k)) * (tb ? b.at(j, k) : b.at(k, j));
            c.at(i, j) = s;
        }
    return c;
}

static DTensor random_tensor(Rng& r, int64_t rows, int64_t cols) {
    DTensor t(rows, cols);
    for (auto& x : t.v) x = r.normal();
    return t;
}

TEST_CASE("construction and layout") {
    DTensor t(2, 3);
    REQUIRE(t.rows() == 2);
    REQUIRE(t.cols() == 3);
    REQUIRE(t.size() == 6);
    for (double x : t.v) REQUIRE(x == 0.0);

    t.at(1, 2) = 5.0;
    REQUIRE(t.v[5] == 5.0);  // row-major
    REQUIRE(t.row_ptr(1)[2] == 5.0);

    auto f = DTensor::full(2, 2, 3.5);
    for (double x : f.v) REQUIRE(x == 3.5);

    auto s = DTensor::scalar(-1.25);
    REQUIRE(s.rows() == 1);
    REQUIRE(s.cols() == 1);
    REQUIRE(s.v[0] == -1.25);

    auto fr = DTensor::from_rows({{1, 2}, {3, 4}});
    REQUIRE(fr.at(0, 1) == 2.0);
    REQUIRE(fr.at(1, 0) == 3.0);
}

TEST_CASE("from_rows rejects ragged input") {
    REQUIRE_THROWS_AS(DTensor::from_rows({{1, 2}, {3}}), std::invalid_argument);
}

TEST_CASE("shape checks throw on mismatch") {
    DTensor a(2, 3), b(3, 2);
    REQUIRE_THROWS_AS(a.require_same_shape(b, "test"), std::invalid_argument);
    REQUIRE_THROWS_AS(a.add_inplace(b), std::invalid_argument);
    REQUIRE(a.shape_str() == "2x3");
}

TEST_CASE("all_finite flags NaN and inf") {
    DTensor t(2, 2);
    REQUIRE(t.all_finite());
    t.at(0, 1) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_FALSE(t.all_finite());
    t.at(0, 1) = std::numeric_limits<double>::infinity();
    REQUIRE_FALSE(t.all_finite());
}

TEST_CASE("gemm matches the naive oracle in every transpose mode") {
    Rng r(101);
    for (int ta = 0; ta < 2; ++ta) {
        for (int tb = 0; tb < 2; ++tb) {
            int64_t M = 4, K = 5, N = 3;
            DTensor a = ta ? random_tensor(r, K, M) : random_tensor(r, M, K);
            DTensor b = tb ? random_tensor(r, N, K) : random_tensor(r, K, N);
            DTensor c(M, N);
            facediff::gemm(a, ta != 0, b, tb != 0, c, false);
            DTensor ref = naive_gemm(a, ta != 0, b, tb != 0);
            for (int64_t i = 0; i < M * N; ++i)
                REQUIRE(c.v[size_t(i)] == Catch::Approx(ref.v[size_t(i)]).margin(1e-12));
        }
    }
}

TEST_CASE("gemm accumulate adds onto the destination") {
    Rng r(102);
    DTensor a = random_tensor(r, 3, 4), b = random_tensor(r, 4, 2);
    DTensor c = DTensor::full(3, 2, 1.0);
    facediff::gemm(a, false, b, false, c, true);
    DTensor ref = naive_gemm(a, false, b, false);
    for (size_t i = 0; i < c.v.size(); ++i)
        REQUIRE(c.v[i] == Catch::Approx(ref.v[i] + 1.0).margin(1e-12));
}

TEST_CASE("gemm rejects inconsistent shapes") {
    DTensor a(3, 4), b(5, 2), c(3, 2);
    REQUIRE_THROWS_AS(facediff::gemm(a, false, b, false, c, false), std::invalid_argument);
    DTensor b2(4, 2), cbad(2, 2);
    REQUIRE_THROWS_AS(facediff::gemm(a, false, b2, false, cbad, false), std::invalid_argument);
}

TEST_CASE("float instantiation works") {
    facediff::Tensor<float> a(2, 2), b(2, 2), c(2, 2);
    a.fill(1.0f);
    b.fill(2.0f);
    facediff::gemm(a, false, b, false, c, false);
    for (float x : c.v) REQUIRE(x == 4.0f);
}
