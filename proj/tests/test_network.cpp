#include "doctest.h"

#include <cmath>

#include "rldc/network.hpp"
#include "rldc/rng.hpp"

using namespace rldc;

namespace {

const InputShape kAtari{4, 84, 84};

bool same_weights(const Network& a, const Network& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto va = pa[i].tensor->values();
    const auto vb = pb[i].tensor->values();
    if (!std::equal(va.begin(), va.end(), vb.begin(), vb.end())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("parameter counts for the ablation cells") {
  CHECK(count_params(arch_spec("max-halved", kAtari, 9)) == 43'097);
  CHECK(count_params(arch_spec("max-same", kAtari, 9)) == 115'881);
  CHECK(count_params(arch_spec("expert", kAtari, 9)) == 1'688'745);
  CHECK(count_params(arch_spec("none-halved", kAtari, 9)) == 829'529);
  for (const char* arch : {"expert", "max-same", "max-halved", "none-halved"}) {
    const NetworkSpec spec = arch_spec(arch, {4, 44, 44}, 3);
    CHECK(Network::build(spec, 1).parameter_count() == count_params(spec));
  }
}

TEST_CASE("conv stack geometry") {
  const NetworkSpec expert = arch_spec("expert", kAtari, 9);
  CHECK(expert.final_conv_shape() == Shape{64, 7, 7});
  CHECK(expert.tail_extent() == 64 * 7 * 7);
  CHECK(arch_spec("max-halved", kAtari, 9).tail_extent() == 32);
  CHECK_THROWS(arch_spec("expert", {4, 20, 20}, 3).validate());
  CHECK_THROWS(Network::build(arch_spec("expert", {4, 20, 20}, 3), 1));
  CHECK_THROWS(arch_spec("bogus", kAtari, 9));
}

TEST_CASE("build is deterministic in the seed") {
  const NetworkSpec spec = arch_spec("max-halved", {4, 44, 44}, 3);
  CHECK(same_weights(Network::build(spec, 5), Network::build(spec, 5)));
  CHECK_FALSE(same_weights(Network::build(spec, 5), Network::build(spec, 6)));
}

TEST_CASE("zero observation with zero biases gives equal q-values") {
  NetworkSpec spec = arch_spec("expert", {4, 44, 44}, 3);
  Network net = Network::build(spec, 3);
  for (auto& p : net.parameters()) {
    if (p.name.find("bias") != std::string::npos) p.tensor->fill(0.0);
  }
  const auto rec = net.forward(Tensor({4, 44, 44}, 0.0));
  CHECK(rec.q_values[0] == rec.q_values[1]);
  CHECK(rec.q_values[1] == rec.q_values[2]);
  CHECK_THROWS(net.forward(Tensor({4, 40, 40})));
}

TEST_CASE("hand-computed forward trace") {
  // 2 input frames of 3x3, one 2x2 conv to 1 channel (2x2 map), max pool,
  // linear 1 -> 2.
  NetworkSpec spec;
  spec.input = {2, 3, 3};
  spec.conv_layers = {ConvSpec{2, 1, 2, 2, 1}};
  spec.tail = Tail::max_pool;
  spec.hidden = 0;
  spec.actions = 2;
  Network net = Network::build(spec, 1);
  auto params = net.parameters();
  REQUIRE(params.size() == 4);
  // conv weight: frame 0 kernel all 1, frame 1 kernel all -1
  for (std::size_t i = 0; i < 8; ++i) (*params[0].tensor)[i] = i < 4 ? 1.0 : -1.0;
  (*params[1].tensor)[0] = 0.5;
  (*params[2].tensor)[0] = 2.0;
  (*params[2].tensor)[1] = -1.0;
  (*params[3].tensor)[0] = 0.25;
  (*params[3].tensor)[1] = 0.0;

  Tensor obs({2, 3, 3}, 0.0);
  // frame 0 = 1..9, frame 1 = all 1
  for (std::size_t i = 0; i < 9; ++i) {
    obs[i] = static_cast<double>(i + 1);
    obs[9 + i] = 1.0;
  }
  // conv outputs: window sums of frame 0 minus 4, plus 0.5:
  // (1+2+4+5)=12, 16, 24, 28 -> 8.5, 12.5, 20.5, 24.5; max 24.5
  const auto rec = net.forward(obs, true);
  CHECK(rec.pre_pool_maps.shape() == Shape{1, 2, 2});
  CHECK(rec.pre_pool_maps[3] == 24.5);
  CHECK(rec.q_values[0] == 2.0 * 24.5 + 0.25);
  CHECK(rec.q_values[1] == -24.5);

  Tensor batch({1, 2, 3, 3}, std::vector<double>(obs.values().begin(), obs.values().end()));
  const Tensor& q = net.forward_batch(batch);
  CHECK(q[0] == rec.q_values[0]);
  CHECK(q[1] == rec.q_values[1]);
}

TEST_CASE("copy_weights_from makes a bit copy") {
  const NetworkSpec spec = arch_spec("max-same", {4, 44, 44}, 3);
  Network a = Network::build(spec, 1);
  Network b = Network::build(spec, 2);
  b.copy_weights_from(a);
  CHECK(same_weights(a, b));
  Network other = Network::build(arch_spec("max-halved", {4, 44, 44}, 3), 1);
  CHECK_THROWS(other.copy_weights_from(a));
}
