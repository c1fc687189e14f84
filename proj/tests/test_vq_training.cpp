#include <gtest/gtest.h>

#include "dancemeld/hvqvae/train.hpp"

using namespace dancemeld;
using namespace dancemeld::hvqvae;

namespace {

const dataset::Corpus& corpus() {
  static const auto c = [] {
    dataset::SynthOptions o;
    o.seed = 21;
    o.clips = 10;
    o.frames = 560;
    o.music_dim = 16;
    return dataset::generate_synthetic_corpus(o);
  }();
  return c;
}

VQTrainConfig small_config() {
  VQTrainConfig cfg;
  cfg.model.hidden = 32;
  cfg.model.code_dim = 32;
  cfg.model.bottom_codes = 64;
  cfg.model.top_codes = 16;
  cfg.model.music_dim = 16;
  cfg.model.music_hidden = 16;
  cfg.window = 128;
  cfg.stride = 40;
  cfg.batch_size = 8;
  cfg.lr = 1e-3;
  cfg.epochs = 3;
  cfg.seed = 9;
  return cfg;
}

}  // namespace

TEST(VQTraining, SameSeedSameFirstEpoch) {
  VQTrainer a(small_config(), corpus()), b(small_config(), corpus());
  EXPECT_EQ(a.run_epoch().loss, b.run_epoch().loss);
}

TEST(VQTraining, ResumeIsBitExact) {
  auto cfg = small_config();
  VQTrainer straight(cfg, corpus());
  straight.train();

  VQTrainer first(cfg, corpus());
  first.run_epoch();
  first.run_epoch();
  const auto bytes = io::encode_checkpoint(first.checkpoint());
  VQTrainer second(cfg, corpus());
  second.resume(io::decode_checkpoint(bytes, "memory"));
  second.train();

  ASSERT_EQ(second.epoch(), straight.epoch());
  const auto& pa = straight.model().params().items();
  const auto& pb = second.model().params().items();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].second.value(), pb[i].second.value()) << pa[i].first;
  EXPECT_EQ(second.history().back().loss, straight.history().back().loss);
}

TEST(VQTraining, CheckpointReloadsForInference) {
  VQTrainer t(small_config(), corpus());
  t.run_epoch();
  const auto dir = io::fs::temp_directory_path() / "dancemeld_test_vq";
  io::save_checkpoint(dir / "vq.dmck", t.checkpoint());
  const auto model = load_hvqvae(dir / "vq.dmck");
  const auto& x = t.windows().front().motion;
  const auto codes = t.model().encode_codes(x);
  EXPECT_EQ(model->encode_codes(x), codes);
  EXPECT_EQ(model->decode(codes), t.model().decode(codes));
}

TEST(VQTraining, NonFiniteLossAbortsWithCheckpoint) {
  VQTrainer t(small_config(), corpus());
  ag::Var<float> w = t.model().params().at("dec_b.out.bias");
  w.mutable_value()[0] = std::numeric_limits<float>::quiet_NaN();
  bool saved = false;
  t.on_divergence = [&](const VQTrainer&) { saved = true; };
  try {
    t.run_epoch();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DivergenceDetected);
  }
  EXPECT_TRUE(saved);
}

TEST(VQTraining, LearnsTheSyntheticCorpus) {
  auto cfg = small_config();
  cfg.epochs = 50;
  VQTrainer t(cfg, corpus());
  t.train();
  std::vector<Tensor<float>> test;
  for (const auto* c : corpus().split(dataset::Split::test)) test.push_back(c->motion.frames.slice_rows(0, 128));
  const double mpjpe = reconstruction_mpjpe(t.model(), test, corpus().skeleton);
  EXPECT_LT(mpjpe, 0.1 * corpus().skeleton.height());
  EXPECT_GE(t.history().back().bottom_used, 8u);
  for (const auto& log : t.history()) {
    EXPECT_TRUE(std::isfinite(log.loss));
    EXPECT_GT(log.bottom_perplexity, 0.0);
  }
}
