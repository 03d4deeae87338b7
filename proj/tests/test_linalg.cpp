#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "msrnn/linalg.hpp"

using namespace msrnn;

namespace {

Mat identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("matvec basic cases", "[linalg]") {
  SECTION("identity") {
    const Vec v{1.0, 2.0, 3.0};
    REQUIRE(matvec(identity(3), v) == v);
  }
  SECTION("zero matrix") {
    const Mat z(2, 3);
    REQUIRE(matvec(z, {1.0, 2.0, 3.0}) == Vec{0.0, 0.0});
  }
  SECTION("hand arithmetic") {
    Mat m(2, 2);
    m.at(0, 0) = 1.0; m.at(0, 1) = 2.0;
    m.at(1, 0) = 3.0; m.at(1, 1) = 4.0;
    REQUIRE(matvec(m, {1.0, 1.0}) == Vec{3.0, 7.0});
  }
  SECTION("dimension mismatch") {
    REQUIRE_THROWS_AS(matvec(Mat(2, 3), Vec{1.0, 2.0}), ShapeError);
  }
}

TEST_CASE("bilinear basic cases", "[linalg]") {
  SECTION("zero vector short-circuits") {
    Tensor3 t(2, 3, 3);
    for (double& x : t.a) x = 1.5;
    REQUIRE(bilinear(t, Vec(3, 0.0), {1.0, 2.0, 3.0}) == Vec{0.0, 0.0});
  }
  SECTION("identity slice") {
    Tensor3 t(1, 2, 2);
    t.at(0, 0, 0) = 1.0;
    t.at(0, 1, 1) = 1.0;
    // u^T I v = 1*3 + 2*4
    REQUIRE(bilinear(t, {1.0, 2.0}, {3.0, 4.0}) == Vec{11.0});
  }
  SECTION("zero slice gives zero component") {
    Tensor3 t(2, 2, 2);
    t.at(0, 0, 0) = 2.0;
    const Vec out = bilinear(t, {1.0, 1.0}, {1.0, 1.0});
    REQUIRE(out[0] == 2.0);
    REQUIRE(out[1] == 0.0);
  }
  SECTION("dimension mismatch") {
    REQUIRE_THROWS_AS(bilinear(Tensor3(1, 2, 2), Vec{1.0}, Vec{1.0, 2.0}), ShapeError);
  }
}

TEST_CASE("activations", "[linalg]") {
  REQUIRE(sigmoid(Vec{0.0})[0] == 0.5);
  REQUIRE(relu(Vec{-3.0})[0] == 0.0);
  REQUIRE(relu(Vec{3.0})[0] == 3.0);
  REQUIRE(msrnn::tanh(Vec{0.0})[0] == 0.0);

  SECTION("no NaN for finite inputs") {
    Rng rng(11);
    for (int k = 0; k < 200; ++k) {
      const Vec v{rng.uniform(-700.0, 700.0)};
      REQUIRE(all_finite(sigmoid(v)));
      REQUIRE(all_finite(msrnn::tanh(v)));
      REQUIRE(all_finite(relu(v)));
    }
  }
}

TEST_CASE("softmax_by_row values", "[linalg]") {
  SECTION("all equal inputs give quarters") {
    const Vec z(3, 1.7);
    auto out = softmax_by_row(z, z, z, z);
    for (int p = 0; p < 4; ++p) {
      for (double x : out[p]) REQUIRE(x == Catch::Approx(0.25).margin(1e-15));
    }
  }
  SECTION("log inputs recover the stated proportions") {
    auto out = softmax_by_row(Vec{std::log(1.0)}, Vec{std::log(2.0)}, Vec{std::log(3.0)},
                              Vec{std::log(4.0)});
    REQUIRE(out[0][0] == Catch::Approx(0.1).margin(1e-14));
    REQUIRE(out[1][0] == Catch::Approx(0.2).margin(1e-14));
    REQUIRE(out[2][0] == Catch::Approx(0.3).margin(1e-14));
    REQUIRE(out[3][0] == Catch::Approx(0.4).margin(1e-14));
  }
  SECTION("saturation") {
    auto out = softmax_by_row(Vec{1000.0}, Vec{0.0}, Vec{0.0}, Vec{0.0});
    REQUIRE(out[0][0] == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(out[1][0] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(out[2][0] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(out[3][0] == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("length mismatch") {
    REQUIRE_THROWS_AS(softmax_by_row(Vec(2), Vec(2), Vec(3), Vec(2)), ShapeError);
  }
}

TEST_CASE("softmax_by_row properties", "[linalg]") {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 1 + rng.below(6);
    Vec zi(d), zl(d), zt(d), zd(d);
    for (std::size_t k = 0; k < d; ++k) {
      zi[k] = rng.uniform(-50.0, 50.0);
      zl[k] = rng.uniform(-50.0, 50.0);
      zt[k] = rng.uniform(-50.0, 50.0);
      zd[k] = rng.uniform(-50.0, 50.0);
    }
    auto out = softmax_by_row(zi, zl, zt, zd);

    // nonnegative, sums to 1 per dimension
    for (std::size_t k = 0; k < d; ++k) {
      double sum = 0.0;
      for (int p = 0; p < 4; ++p) {
        REQUIRE(out[p][k] >= 0.0);
        sum += out[p][k];
      }
      REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
    }

    // shift invariance: add a constant to all four inputs at one dimension
    const double shift = rng.uniform(-25.0, 25.0);
    Vec zi2 = zi, zl2 = zl, zt2 = zt, zd2 = zd;
    for (std::size_t k = 0; k < d; ++k) {
      zi2[k] += shift; zl2[k] += shift; zt2[k] += shift; zd2[k] += shift;
    }
    auto out2 = softmax_by_row(zi2, zl2, zt2, zd2);
    for (int p = 0; p < 4; ++p) {
      for (std::size_t k = 0; k < d; ++k) {
        REQUIRE(out2[p][k] == Catch::Approx(out[p][k]).margin(1e-12));
      }
    }
  }
}
