#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dancemeld/diffusion/prior.hpp"
#include "dancemeld/metrics/metrics.hpp"

namespace dancemeld::cli {

using nlohmann::json;

// Applies a JSON merge patch over the serialised defaults.
template <typename Config>
Config merge_config(const Config& defaults, const json& patch) {
  DM_THROW_IF(!patch.is_object(), FormatError, "config must be a JSON object");
  json j = defaults;
  j.merge_patch(patch);
  try {
    return j.get<Config>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("bad config value: ") + e.what());
  }
}

template <typename Config>
Config read_config(const io::fs::path& path, const Config& defaults = {}) {
  if (path.empty()) return defaults;
  try {
    return merge_config(defaults, json::parse(io::read_file(path)));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::FormatError, path.string() + ": " + e.what());
  }
}

struct Music {
  music::MusicFeatureSequence features;
  music::BeatTimes beats;
};

// "click:BPM" synthesises `frames` frames of click features; anything else is
// a feature file, cut to the largest multiple of `multiple` frames.
inline Music resolve_music(const std::string& spec, std::size_t frames, std::size_t multiple, std::size_t dim,
                           std::uint64_t seed) {
  if (spec.rfind("click:", 0) == 0) {
    double bpm = 0;
    try {
      bpm = std::stod(spec.substr(6));
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidArgument, "malformed click spec '" + spec + "'");
    }
    auto click = music::synth_click_features(bpm, double(frames) / motion::kFps, dim, seed);
    return {std::move(click.music), std::move(click.beats)};
  }
  auto m = music::load_precomputed_features(spec);
  const std::size_t usable = m.length() / multiple * multiple;
  DM_THROW_IF(usable == 0, BadLength,
              spec + " has " + std::to_string(m.length()) + " frames, need at least " + std::to_string(multiple));
  m.features = m.features.slice_rows(0, usable);
  auto beats = music::extract_beats(m);
  return {std::move(m), std::move(beats)};
}

inline std::size_t generation_window(const diffusion::DiffusionPrior& prior) {
  return hvqvae::kBottomRate * prior.config().seq_len;
}

// Beats that fall inside the first `frames` frames.
inline music::BeatTimes clip_beats(const music::BeatTimes& b, std::size_t frames) {
  music::BeatTimes out;
  const double end = double(frames) / motion::kFps;
  for (double t : b.beats)
    if (t < end) out.beats.push_back(t);
  return out;
}

struct EvalOptions {
  std::size_t generations = 40;
  std::size_t steps = 50;
  std::uint64_t seed = 0;
  std::size_t stride = 40;  // reference windows over the test split
};

// Generations are conditioned on test-split music (cycled, one seed each);
// the reference set is every test-split window of the same length.
inline metrics::MetricReport evaluate_models(const hvqvae::HVQVAE<float>& vq, const diffusion::DiffusionPrior& prior,
                                             const dataset::Corpus& corpus, const EvalOptions& opt) {
  const auto test = corpus.split(dataset::Split::test);
  DM_THROW_IF(test.empty(), TooFewSamples, "corpus has no test clips");
  DM_THROW_IF(opt.generations < 2, TooFewSamples, "need at least two generations");
  const std::size_t window = generation_window(prior);
  const dataset::WindowSpec spec{window, opt.stride};

  std::vector<metrics::ClipFeatures> reference;
  for (const auto& w : dataset::windows(test, spec)) {
    const auto d = dataset::window_data(w, spec);
    const auto pos = motion::joint_positions({d.motion, motion::kFps}, corpus.skeleton);
    reference.push_back(metrics::clip_features(pos, corpus.skeleton, nullptr));
  }

  std::vector<metrics::ClipFeatures> generated;
  for (std::size_t g = 0; g < opt.generations; ++g) {
    const auto* clip = test[g % test.size()];
    music::MusicFeatureSequence m = clip->music;
    m.features = m.features.slice_rows(0, window);
    const auto gen = diffusion::generate(m, vq, prior, opt.steps, opt.seed + g);
    const auto pos = motion::joint_positions(gen.motion, corpus.skeleton);
    const auto beats = clip_beats(clip->beats, window);
    generated.push_back(metrics::clip_features(pos, corpus.skeleton, &beats));
  }
  return metrics::evaluate(generated, reference);
}

// Viewer document: FK joint positions per frame plus the parent table.
inline json export_positions(const motion::MotionSequence& m, const motion::Skeleton& skel) {
  const auto pos = motion::joint_positions(m, skel);
  std::vector<std::vector<double>> frames(pos.length());
  for (std::size_t i = 0; i < pos.length(); ++i) {
    const auto row = pos.positions.row(i);
    frames[i].assign(row.begin(), row.end());
  }
  return {{"v", 1},
          {"fps", m.fps},
          {"parents", skel.parent_index},
          {"joint_positions", std::move(frames)}};
}

}  // namespace dancemeld::cli
