#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "colanet/checkpoint.hpp"
#include "colanet/config.hpp"
#include "test_util.hpp"

using namespace colanet;
using colanet::testing::random_tensor;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("colanet_test_" + name)).string();
}

ModelConfig tiny_model() {
  ModelConfig c = ModelConfig::basic();
  c.num_cab = 1;
  c.channels = 8;
  c.fem_depth = 2;
  c.patch_size = 4;
  c.patch_stride = 4;
  c.ca_reduction = 2;
  c.local_groups = 2;
  return c;
}

Checkpoint toy_checkpoint() {
  Checkpoint ck;
  ck.tensors.push_back({"a", random_tensor({3}, 1)});
  ck.tensors.push_back({"layer.w", random_tensor({2, 3, 3, 3}, 2)});
  ck.tensors.push_back({"bias", random_tensor({4, 5}, 3)});
  return ck;
}

}  // namespace

// ---------------------------------------------------------------- config

TEST(RunConfig, SerializeParseRoundTrip) {
  RunConfig c;
  c.model = ModelConfig::enhanced();
  c.model.num_cab = 2;
  c.train.base_lr = 3.5e-4;
  c.train.seed = 123456789012345ull;
  c.train.blind = true;
  c.degradation.kind = DegradationKind::jpeg;
  c.degradation.quality = 30;
  c.degradation.sigma_s = 0.1234567;
  c.inference.tile = 48;
  c.paths.train_dir = "data/train set";
  const RunConfig back = parse_run_config(serialize(c));
  EXPECT_EQ(back, c);
  EXPECT_EQ(serialize(back), serialize(c));
}

TEST(RunConfig, DefaultsSurviveEmptyDocument) {
  EXPECT_EQ(parse_run_config(""), RunConfig{});
  EXPECT_EQ(parse_run_config("# only a comment\n\n"), RunConfig{});
}

TEST(RunConfig, EveryKeyIsSerialized) {
  const std::string text = serialize(RunConfig{});
  for (const char* key : {"model.num_cab", "model.patch_size", "model.patch_stride", "model.local_groups",
                          "model.shared_local_gate", "model.scaled_similarity", "train.base_lr",
                          "train.halving_period_epochs", "train.steps_per_epoch", "train.grad_clip",
                          "degradation.clip", "degradation.quality", "inference.tile", "paths.checkpoint"}) {
    EXPECT_NE(text.find(std::string(key) + " = "), std::string::npos) << key;
  }
}

TEST(RunConfig, CommentsWhitespaceAndVariantDefaults) {
  const RunConfig c = parse_run_config("  model.num_cab=2   # two blocks\r\nmodel.variant = enhanced\n");
  EXPECT_EQ(c.model.num_cab, 2u);
  EXPECT_EQ(c.model.variant, FemVariant::enhanced);
  EXPECT_EQ(c.model.fem_depth, ModelConfig::enhanced().fem_depth);
  const RunConfig d = parse_run_config("model.fem_depth = 3\nmodel.variant = enhanced\n");
  EXPECT_EQ(d.model.fem_depth, 3u);
}

TEST(RunConfig, ShippedConfigsLoad) {
  const std::filesystem::path dir = std::filesystem::path(COLANET_SOURCE_DIR) / "configs";
  const RunConfig b = load_run_config((dir / "cola_b.cfg").string());
  EXPECT_EQ(b.model, ModelConfig::basic());
  const RunConfig e = load_run_config((dir / "cola_e.cfg").string());
  EXPECT_EQ(e.model, ModelConfig::enhanced());
  const RunConfig desk = load_run_config((dir / "desk.cfg").string());
  EXPECT_EQ(desk.model.num_cab, 1u);
  EXPECT_EQ(desk.model.channels, 16u);
  EXPECT_EQ(desk.train.total_steps(), 2000u);
  EXPECT_NO_THROW(desk.validate());
}

TEST(RunConfig, Errors) {
  EXPECT_THROW(parse_run_config("model.bogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("model.num_cab 4\n"), ConfigError);
  EXPECT_THROW(parse_run_config("model.num_cab = four\n"), ConfigError);
  EXPECT_THROW(parse_run_config("model.num_cab = 4x\n"), ConfigError);
  EXPECT_THROW(parse_run_config("model.num_cab = 4\nmodel.num_cab = 5\n"), ConfigError);
  EXPECT_THROW(parse_run_config("train.augment = maybe\n"), ConfigError);
  EXPECT_THROW(parse_run_config("model.variant = fancy\n"), ConfigError);
  EXPECT_THROW(parse_run_config("degradation.kind = blur\n"), ConfigError);
  EXPECT_THROW(load_run_config(temp_path("missing.cfg")), IoError);
}

// ---------------------------------------------------------------- checkpoint

TEST(Checkpoint, RoundTripIsBitExact) {
  Checkpoint ck = toy_checkpoint();
  ck.has_optimizer = true;
  ck.optimizer.step = 77;
  ck.optimizer.seed = 9;
  ck.optimizer.first_moments = {random_tensor({3}, 4), random_tensor({2, 3, 3, 3}, 5)};
  ck.optimizer.second_moments = {random_tensor({3}, 6), random_tensor({2, 3, 3, 3}, 7)};
  const std::string path = temp_path("roundtrip.ckpt");
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back, ck);
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
  std::remove(path.c_str());
}

TEST(Checkpoint, ByteAccountingMatchesLayout) {
  const Checkpoint ck = toy_checkpoint();
  const std::size_t config_bytes = serialize(ck.config).size();
  std::size_t expected = 8 + 2 + 4 + config_bytes + 4;
  for (const auto& t : ck.tensors) expected += t.name.size() + 2 + 1 + 4 * t.value.rank() + 4 * t.value.numel();
  expected += 1 + 4;
  EXPECT_EQ(encode_checkpoint(ck).size(), expected);

  Checkpoint with_opt = ck;
  with_opt.has_optimizer = true;
  with_opt.optimizer.first_moments = {ck.tensors[0].value};
  with_opt.optimizer.second_moments = {ck.tensors[0].value};
  EXPECT_EQ(encode_checkpoint(with_opt).size(), expected + 8 + 8 + 4 + 2 * 4 * 3);
}

TEST(Checkpoint, HeaderFieldsAreLittleEndian) {
  const auto bytes = encode_checkpoint(toy_checkpoint());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "COLANET1");
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[9], 0);
  const std::uint32_t crc = bytes[bytes.size() - 4] | (bytes[bytes.size() - 3] << 8) |
                            (bytes[bytes.size() - 2] << 16) | (static_cast<std::uint32_t>(bytes.back()) << 24);
  EXPECT_EQ(crc, detail::crc32_of(bytes.data(), bytes.size() - 4));
}

TEST(Checkpoint, BadMagicIsFormatError) {
  auto bytes = encode_checkpoint(toy_checkpoint());
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
  EXPECT_THROW(decode_checkpoint({}), FormatError);
}

TEST(Checkpoint, OtherVersionIsUnsupported) {
  auto bytes = encode_checkpoint(toy_checkpoint());
  bytes[8] = 2;
  EXPECT_THROW(decode_checkpoint(bytes), UnsupportedError);
}

TEST(Checkpoint, TruncationAndBitFlipsAreCorruption) {
  const auto bytes = encode_checkpoint(toy_checkpoint());
  for (std::size_t keep : {std::size_t{9}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
    EXPECT_THROW(decode_checkpoint(cut), CorruptionError) << keep;
  }
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(decode_checkpoint(flipped), CorruptionError);
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint(temp_path("does_not_exist.ckpt")), IoError);
}

TEST(Checkpoint, ModelRoundTripRestoresEverything) {
  RunConfig rc;
  rc.model = tiny_model();
  rc.train.seed = 17;
  ColaNet net(rc.model, 4);
  for (auto& p : net.weights().params()) {
    p.first_moment = random_tensor(p.value.shape(), 20);
    p.second_moment = random_tensor(p.value.shape(), 21, 0.0f, 1.0f);
  }
  TrainState st{41};
  const Checkpoint ck = make_checkpoint(net, rc, &st);
  EXPECT_EQ(ck.tensors.size(), net.weights().params().size() + net.weights().buffers().size());
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
  TrainState restored;
  ColaNet copy = restore_model(back, &restored);
  EXPECT_EQ(restored.step, 41u);
  EXPECT_EQ(back.optimizer.seed, 17u);
  EXPECT_EQ(copy.config(), net.config());
  EXPECT_EQ(encode_checkpoint(make_checkpoint(copy, rc, &restored)), encode_checkpoint(ck));
  const Tensor x = random_tensor({1, 1, 12, 12}, 22, 0.0f, 1.0f);
  EXPECT_EQ(copy.forward(Var(x)).output.value(), net.forward(Var(x)).output.value());
}

TEST(Checkpoint, MismatchedTensorsRejected) {
  RunConfig rc;
  rc.model = tiny_model();
  ColaNet net(rc.model, 4);
  Checkpoint ck = make_checkpoint(net, rc);
  ck.tensors.pop_back();
  EXPECT_THROW(restore_model(ck), FormatError);
  ck = make_checkpoint(net, rc);
  ck.tensors[0].value = Tensor(Shape{1, 2, 3});
  EXPECT_THROW(restore_model(ck), Error);
}
