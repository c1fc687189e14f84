#include <random>

#include <gtest/gtest.h>

#include "dancemeld/music/encoder.hpp"

using namespace dancemeld;
using namespace dancemeld::music;

namespace {

io::fs::path temp_path(const std::string& name) {
  auto dir = io::fs::temp_directory_path() / "dancemeld_test_music";
  io::fs::create_directories(dir);
  return dir / name;
}

MusicFeatureSequence impulses(std::size_t frames, std::size_t dim, const std::vector<std::size_t>& at) {
  MusicFeatureSequence m{Tensor<float>(frames, dim), 60.0};
  for (auto f : at)
    for (std::size_t c = 0; c < dim; ++c) m.features(f, c) = 1.0f;
  return m;
}

}  // namespace

TEST(FeatureFile, ZeroPayloadLoadsAsZeros) {
  const auto path = temp_path("zeros.dmft");
  save_features(path, {Tensor<float>(512, 4800), 60.0});
  const auto m = load_precomputed_features(path);
  EXPECT_EQ(m.length(), 512u);
  EXPECT_EQ(m.dim(), 4800u);
  for (float v : m.features.storage()) ASSERT_EQ(v, 0.0f);
}

TEST(FeatureFile, RoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n;
  Tensor<float> data(37, 19);
  for (auto& v : data.storage()) v = n(rng);
  const auto path = temp_path("random.dmft");
  save_features(path, {data, 60.0});
  EXPECT_EQ(load_precomputed_features(path).features, data);
}

TEST(FeatureFile, TruncatedPayloadIsFormatError) {
  const auto path = temp_path("short.dmft");
  auto bytes = io::encode_frame_array(io::kFeatureMagic, Tensor<float>(8, 4), 60);
  bytes.resize(bytes.size() - 3);
  io::write_file_atomic(path, bytes);
  try {
    load_precomputed_features(path);
    FAIL() << "expected FormatError";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::FormatError);
  }
}

TEST(FeatureFile, BadMagicAndMissingFile) {
  const auto path = temp_path("motion_not_music.dmft");
  io::write_file_atomic(path, io::encode_frame_array(io::kMotionMagic, Tensor<float>(2, 2), 60));
  EXPECT_THROW(load_precomputed_features(path), Error);
  try {
    load_precomputed_features(temp_path("does_not_exist.dmft"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IoError);
  }
}

TEST(ClickTrack, BeatTimesAt120Bpm) {
  const auto click = synth_click_features(120, 2.0, 64);
  EXPECT_EQ(click.beats.beats, (std::vector<double>{0.0, 0.5, 1.0, 1.5}));
  EXPECT_EQ(click.music.length(), 120u);
  EXPECT_EQ(click.music.dim(), 64u);
}

TEST(ClickTrack, ImpulseFramesAt60Bpm) {
  const auto click = synth_click_features(60, 1.0, 16);
  EXPECT_EQ(click.beats.beats, (std::vector<double>{0.0}));
  EXPECT_EQ(click.music.features(0, 0), 1.0f);
  for (std::size_t i = 1; i < click.music.length(); ++i) EXPECT_LT(click.music.features(i, 0), 1.0f);
}

TEST(ClickTrack, RejectsOutOfRangeTempo) {
  for (double bpm : {29.0, 301.0, -5.0}) {
    try {
      synth_click_features(bpm, 1.0, 8);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::InvalidTempo);
    }
  }
}

TEST(ExtractBeats, SilenceHasNoBeats) {
  EXPECT_TRUE(extract_beats({Tensor<float>(120, 8), 60.0}).beats.empty());
}

TEST(ExtractBeats, SingleImpulse) {
  const auto beats = extract_beats(impulses(90, 8, {30}));
  ASSERT_EQ(beats.beats.size(), 1u);
  EXPECT_DOUBLE_EQ(beats.beats[0], 0.5);
}

TEST(ExtractBeats, RecoversClickTracksWithinOneFrame) {
  for (double bpm : {60.0, 90.0, 120.0, 150.0, 175.0}) {
    for (std::size_t dim : {8u, 64u, 4800u}) {
      const auto click = synth_click_features(bpm, 8.0, dim, 7);
      const auto got = extract_beats(click.music);
      ASSERT_EQ(got.beats.size(), click.beats.beats.size()) << bpm << " bpm, dim " << dim;
      for (std::size_t k = 0; k < got.beats.size(); ++k)
        EXPECT_LE(std::abs(got.beats[k] - click.beats.beats[k]), 1.0 / 60.0 + 1e-12);
    }
  }
}

TEST(ExtractBeats, ShiftEquivariance) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> at;
    for (std::size_t f = 5 + rng() % 10; f < 250; f += 12 + rng() % 20) at.push_back(f);
    const std::size_t k = 1 + rng() % 30;
    std::vector<std::size_t> shifted;
    for (auto f : at) shifted.push_back(f + k);
    const auto a = extract_beats(impulses(300, 6, at));
    const auto b = extract_beats(impulses(300, 6, shifted));
    ASSERT_EQ(a.beats.size(), b.beats.size());
    for (std::size_t i = 0; i < a.beats.size(); ++i)
      EXPECT_EQ(std::llround(b.beats[i] * 60.0), std::llround(a.beats[i] * 60.0) + std::int64_t(k));
  }
}

TEST(MusicEncoder, OutputMatchesTopCodeRate) {
  std::mt19937_64 rng(4);
  nn::ParameterSet<float> params;
  MusicEncoder<float> enc(params, "music", 32, 16, 24, rng);
  const auto click = synth_click_features(120, 512.0 / 60.0, 32);
  const auto out = enc(click.music.features);
  EXPECT_EQ(out.rows(), 64u);
  EXPECT_EQ(out.cols(), 24u);
  EXPECT_EQ(enc(Tensor<float>(13, 32)).rows(), 2u);  // ceil(13 / 8)
}

TEST(MusicEncoder, ZeroMapGivesZeroOutput) {
  std::mt19937_64 rng(4);
  nn::ParameterSet<float> params;
  MusicEncoder<float> enc(params, "music", 16, 8, 12, rng);
  for (const auto& [name, v] : params.items()) {
    ag::Var<float> h = v;
    h.mutable_value().fill(0.0f);
  }
  const auto out = enc(Tensor<float>(64, 16));
  for (float v : out.value().storage()) EXPECT_EQ(v, 0.0f);
}

TEST(MusicEncoder, ConstantInputGivesConstantOutput) {
  std::mt19937_64 rng(8);
  nn::ParameterSet<double> params;
  MusicEncoder<double> enc(params, "music", 5, 7, 9, rng);
  Tensor<double> x(40, 5);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < 5; ++c) x(i, c) = 0.1 * double(c) - 0.2;
  const auto out = enc(x).value();
  for (std::size_t i = 1; i < out.rows(); ++i)
    for (std::size_t c = 0; c < out.cols(); ++c) EXPECT_NEAR(out(i, c), out(0, c), 1e-12);
}
