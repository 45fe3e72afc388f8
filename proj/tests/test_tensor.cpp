#include "doctest.h"

#include <stdexcept>

#include "rldc/rng.hpp"
#include "rldc/tensor.hpp"

using namespace rldc;

TEST_CASE("tensor shape and multi-index access") {
  Tensor t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.dim(2) == 4);
  t.at({1, 2, 3}) = 5.0;
  CHECK(t[23] == 5.0);
  CHECK_THROWS_AS(t.at({2, 0, 0}), std::out_of_range);
  CHECK_THROWS(t.at({0, 0}));
  CHECK(shape_string(t.shape()) == "[2,3,4]");
}

TEST_CASE("tensor gradient plane") {
  Tensor t({4}, 1.5);
  CHECK(t.grad().size() == 4);
  t.grad()[2] = 3.0;
  t.zero_grad();
  for (double g : t.grad()) CHECK(g == 0.0);
  for (double v : t.values()) CHECK(v == 1.5);
}

TEST_CASE("tensor reshape keeps element count") {
  Tensor t({2, 6}, 0.0);
  t[7] = 1.0;
  const Tensor r = t.reshaped({3, 4});
  CHECK(r.at({1, 3}) == 1.0);
  CHECK_THROWS(t.reshape({5, 2}));
  CHECK_THROWS(Tensor({2, 2}, std::vector<double>{1, 2, 3}));
}

TEST_CASE("splitmix64 matches the published reference sequence") {
  SplitMix64 rng(1234567);
  CHECK(rng.next() == 6457827717110365317ULL);
  CHECK(rng.next() == 3203168211198807973ULL);
  CHECK(rng.next() == 9817491932198370423ULL);
}

TEST_CASE("derived seeds are distinct per stream and index") {
  CHECK(derive_seed(7, 1, 0) != derive_seed(7, 1, 1));
  CHECK(derive_seed(7, 1, 0) != derive_seed(7, 2, 0));
  CHECK(derive_seed(7, 1, 0) != derive_seed(8, 1, 0));
  CHECK(derive_seed(7, 1, 5) == derive_seed(7, 1, 5));
  SplitMix64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(rng.uniform_index(9) < 9);
  }
}
