#include "doctest.h"

#include <filesystem>

#include "rldc/checkpoint.hpp"

using namespace rldc;

namespace {

Network small_net() { return Network::build(arch_spec("max-halved", {4, 44, 44}, 3), 9); }

}  // namespace

TEST_CASE("checkpoint round trip is exact at float32") {
  const Network net = small_net();
  const Checkpoint ck = make_checkpoint(net, {{"kind", "test"}});
  const auto bytes = encode_checkpoint(ck);
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.spec == net.spec());
  CHECK(back.metadata["kind"] == "test");
  CHECK(encode_checkpoint(back) == bytes);

  const Network a = network_from(ck);
  const Network b = network_from(back);
  Tensor obs({4, 44, 44});
  for (std::size_t i = 0; i < obs.size(); ++i) obs[i] = static_cast<double>(i % 3) / 3.0;
  const auto qa = a.forward(obs).q_values;
  const auto qb = b.forward(obs).q_values;
  for (std::size_t i = 0; i < 3; ++i) CHECK(qa[i] == qb[i]);

  // weights are float32-representable after one trip
  for (const auto& p : a.parameters()) {
    for (double v : p.tensor->values()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
  }
}

TEST_CASE("checkpoint file save and load") {
  const auto path = std::filesystem::temp_directory_path() / "rldc_ck_test.rldc";
  save(small_net(), path, {{"iter", 3}});
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.metadata["iter"] == 3);
  CHECK(load(path).parameter_count() == small_net().parameter_count());
  std::filesystem::remove(path);
  CHECK_THROWS(load_checkpoint(path));
}

TEST_CASE("corrupted checkpoints are rejected") {
  const auto bytes = encode_checkpoint(make_checkpoint(small_net()));

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH(decode_checkpoint(bad_magic), doctest::Contains("magic"));

  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_WITH(decode_checkpoint(bad_version), doctest::Contains("version"));

  auto truncated = bytes;
  truncated.resize(truncated.size() - 8);
  CHECK_THROWS(decode_checkpoint(truncated));

  Checkpoint wrong = make_checkpoint(small_net());
  wrong.blobs[0].shape[0] += 1;
  CHECK_THROWS(network_from(wrong));
}
