#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "facediff/params.hpp"

using facediff::DTensor;
using facediff::Init;
using facediff::ParamStore;

TEST_CASE("create registers parameters with unique names") {
    ParamStore<double> ps(1);
    auto& w = *ps.create("layer.w", 3, 4, Init::kFanIn);
    auto& b = *ps.create("layer.b", 1, 4, Init::kZeros);
    REQUIRE(w.name == "layer.w");
    REQUIRE(b.value.rows() == 1);
    REQUIRE(ps.total_scalars() == 3 * 4 + 4);
    REQUIRE_THROWS_AS(ps.create("layer.w", 2, 2, Init::kZeros), std::invalid_argument);
    REQUIRE(ps.find("layer.b") == &b);
    REQUIRE(ps.find("nope") == nullptr);
}

TEST_CASE("init kinds behave as documented") {
    ParamStore<double> ps(2);
    auto& z = *ps.create("z", 4, 4, Init::kZeros);
    for (double x : z.value.v) REQUIRE(x == 0.0);

    auto& f = *ps.create("f", 256, 64, Init::kFanIn);
    double sum = 0, sum2 = 0;
    for (double x : f.value.v) {
        sum += x;
        sum2 += x * x;
    }
    double n = double(f.value.size());
    double mean = sum / n, var = sum2 / n - mean * mean;
    double expect = 1.0 / 256.0;  // N(0, 1/rows)
    REQUIRE(std::abs(mean) < 0.01);
    REQUIRE(var > 0.8 * expect);
    REQUIRE(var < 1.2 * expect);

    auto& e = *ps.create("e", 64, 64, Init::kEmbed);
    sum2 = 0;
    for (double x : e.value.v) sum2 += x * x;
    double std_e = std::sqrt(sum2 / double(e.value.size()));
    REQUIRE(std_e > 0.04);
    REQUIRE(std_e < 0.06);
}

TEST_CASE("init is reproducible per seed") {
    ParamStore<double> a(7), b(7), c(8);
    auto& wa = *a.create("w", 8, 8, Init::kFanIn);
    auto& wb = *b.create("w", 8, 8, Init::kFanIn);
    auto& wc = *c.create("w", 8, 8, Init::kFanIn);
    REQUIRE(wa.value == wb.value);
    REQUIRE_FALSE(wa.value == wc.value);
}

TEST_CASE("zero_grads clears every gradient") {
    ParamStore<double> ps(3);
    auto& w = *ps.create("w", 2, 2, Init::kFanIn);
    w.grad.fill(5.0);
    ps.zero_grads();
    for (double x : w.grad.v) REQUIRE(x == 0.0);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    namespace fs = std::filesystem;
    fs::path path = fs::temp_directory_path() / "fdck_roundtrip.ckpt";

    ParamStore<double> ps(4);
    ps.create("a.w", 3, 5, Init::kFanIn);
    ps.create("a.b", 1, 5, Init::kEmbed);
    ps.find("a.b")->value.at(0, 0) = -0.0;  // sign preserved through the fp64 payload
    facediff::save_checkpoint(ps, path.string());

    ParamStore<double> fresh(99);  // different seed: values must come from the file
    fresh.create("a.w", 3, 5, Init::kFanIn);
    fresh.create("a.b", 1, 5, Init::kZeros);
    facediff::load_checkpoint(fresh, path.string());
    REQUIRE(fresh.find("a.w")->value == ps.find("a.w")->value);
    REQUIRE(fresh.find("a.b")->value == ps.find("a.b")->value);
    REQUIRE(std::signbit(fresh.find("a.b")->value.at(0, 0)));
    fs::remove(path);
}

TEST_CASE("checkpoint load is strict about the parameter set") {
    namespace fs = std::filesystem;
    fs::path path = fs::temp_directory_path() / "fdck_strict.ckpt";

    ParamStore<double> ps(5);
    ps.create("w", 2, 2, Init::kFanIn);
    facediff::save_checkpoint(ps, path.string());

    ParamStore<double> extra(5);
    extra.create("w", 2, 2, Init::kFanIn);
    extra.create("other", 1, 1, Init::kZeros);
    REQUIRE_THROWS_AS(facediff::load_checkpoint(extra, path.string()), std::runtime_error);

    ParamStore<double> shaped(5);
    shaped.create("w", 2, 3, Init::kFanIn);
    REQUIRE_THROWS_AS(facediff::load_checkpoint(shaped, path.string()), std::runtime_error);

    ParamStore<double> renamed(5);
    renamed.create("v", 2, 2, Init::kFanIn);
    REQUIRE_THROWS_AS(facediff::load_checkpoint(renamed, path.string()), std::runtime_error);
    fs::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected") {
    namespace fs = std::filesystem;
    fs::path path = fs::temp_directory_path() / "fdck_corrupt.ckpt";

    ParamStore<double> ps(6);
    ps.create("w", 4, 4, Init::kFanIn);
    facediff::save_checkpoint(ps, path.string());

    // Truncate mid-payload.
    auto full = fs::file_size(path);
    fs::resize_file(path, full - 13);
    ParamStore<double> t(6);
    t.create("w", 4, 4, Init::kFanIn);
    REQUIRE_THROWS_AS(facediff::load_checkpoint(t, path.string()), std::runtime_error);

    // Bad magic.
    {
        std::ofstream f(path, std::ios::binary);
        f.write("NOPE", 4);
    }
    REQUIRE_THROWS_AS(facediff::load_checkpoint(t, path.string()), std::runtime_error);

    REQUIRE_THROWS_AS(facediff::load_checkpoint(t, "/nonexistent/dir/x.ckpt"), std::runtime_error);
    fs::remove(path);
}

TEST_CASE("trainable accounting separates frozen parameters") {
    ParamStore<double> ps(7);
    ps.create("base.w", 4, 4, Init::kFanIn);
    auto& ad = *ps.create("adapter.w", 2, 2, Init::kZeros);
    ps.find("base.w")->trainable = false;
    REQUIRE(ps.total_scalars() == 20);
    REQUIRE(ps.trainable_scalars() == 4);
    REQUIRE(ad.trainable);
}
