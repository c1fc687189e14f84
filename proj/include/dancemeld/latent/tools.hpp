#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dancemeld/hvqvae/model.hpp"
#include "dancemeld/io/binary.hpp"
#include "dancemeld/motion/kinematics.hpp"

namespace dancemeld::latent {

using hvqvae::CodeIndices;
using hvqvae::HVQVAE;
using hvqvae::LatentCodes;

enum class Level { top, bottom };

inline std::string to_string(Level l) { return l == Level::top ? "top" : "bottom"; }

inline Level level_from_string(const std::string& s) {
  if (s == "top") return Level::top;
  if (s == "bottom") return Level::bottom;
  throw Error(ErrorKind::InvalidArgument, "unknown code level '" + s + "'");
}

// Frames covered by one edit unit: one top step and its two bottom steps.
inline constexpr std::size_t kUnitFrames = hvqvae::kBottomRate * hvqvae::kTopRate;

inline void check_ratio(const LatentCodes& c) {
  DM_THROW_IF(c.bottom.size() != 2 * c.top.size(), RatioViolation,
              "bottom length " + std::to_string(c.bottom.size()) + " != 2 x top length " +
                  std::to_string(c.top.size()));
}

inline void check_codebook_range(const LatentCodes& c, std::size_t top_codes, std::size_t bottom_codes) {
  for (auto k : c.top)
    DM_THROW_IF(k < 0 || std::size_t(k) >= top_codes, IndexOutOfRange,
                "top code " + std::to_string(k) + " outside [0, " + std::to_string(top_codes) + ")");
  for (auto k : c.bottom)
    DM_THROW_IF(k < 0 || std::size_t(k) >= bottom_codes, IndexOutOfRange,
                "bottom code " + std::to_string(k) + " outside [0, " + std::to_string(bottom_codes) + ")");
}

inline void check_codebook_range(const LatentCodes& c, const hvqvae::HVQVAEConfig& cfg) {
  check_codebook_range(c, cfg.top_codes, cfg.bottom_codes);
}

// ---- edit operations -------------------------------------------------------

struct EditOp {
  enum class Kind { insert, delete_, replace, reorder, swap_top, swap_bottom };

  Kind kind = Kind::replace;
  Level level = Level::top;
  // Half-open index range at `level`. Insert uses begin as the position.
  // Swaps with no range act on the whole sequence.
  std::optional<std::pair<std::size_t, std::size_t>> range;
  CodeIndices indices;               // replace
  std::vector<std::size_t> order;    // reorder: new position i takes old begin + order[i]
  LatentCodes codes;                 // insert units, swap donor

  friend bool operator==(const EditOp&, const EditOp&) = default;
};

inline std::string to_string(EditOp::Kind k) {
  switch (k) {
    case EditOp::Kind::insert: return "insert";
    case EditOp::Kind::delete_: return "delete";
    case EditOp::Kind::replace: return "replace";
    case EditOp::Kind::reorder: return "reorder";
    case EditOp::Kind::swap_top: return "swap_top";
    case EditOp::Kind::swap_bottom: return "swap_bottom";
  }
  return "unknown";
}

inline EditOp::Kind edit_kind_from_string(const std::string& s) {
  for (auto k : {EditOp::Kind::insert, EditOp::Kind::delete_, EditOp::Kind::replace, EditOp::Kind::reorder,
                 EditOp::Kind::swap_top, EditOp::Kind::swap_bottom})
    if (to_string(k) == s) return k;
  throw Error(ErrorKind::InvalidArgument, "unknown edit kind '" + s + "'");
}

inline void to_json(nlohmann::json& j, const EditOp& op) {
  j = {{"kind", to_string(op.kind)}};
  nlohmann::json target = {{"level", to_string(op.level)}};
  if (op.range) target["range"] = {op.range->first, op.range->second};
  j["target"] = target;
  switch (op.kind) {
    case EditOp::Kind::replace: j["payload"] = op.indices; break;
    case EditOp::Kind::reorder: j["payload"] = op.order; break;
    case EditOp::Kind::insert:
    case EditOp::Kind::swap_top:
    case EditOp::Kind::swap_bottom: j["payload"] = op.codes; break;
    case EditOp::Kind::delete_: break;
  }
}

// Malformed documents surface as InvalidArgument naming the problem.
inline void from_json(const nlohmann::json& j, EditOp& op) {
  try {
    op = EditOp{};
    op.kind = edit_kind_from_string(j.at("kind").get<std::string>());
    const auto& target = j.contains("target") ? j.at("target") : nlohmann::json::object();
    const bool swap = op.kind == EditOp::Kind::swap_top || op.kind == EditOp::Kind::swap_bottom;
    if (swap)
      op.level = op.kind == EditOp::Kind::swap_top ? Level::top : Level::bottom;
    else
      op.level = level_from_string(target.at("level").get<std::string>());
    if (target.contains("range")) {
      const auto r = target.at("range").get<std::vector<long long>>();
      DM_THROW_IF(r.size() != 2, InvalidArgument, "range must be [begin, end]");
      DM_THROW_IF(r[0] < 0 || r[1] < 0, IndexOutOfRange, "range bounds must be non-negative");
      op.range = std::pair{std::size_t(r[0]), std::size_t(r[1])};
    } else {
      DM_THROW_IF(!swap, InvalidArgument, to_string(op.kind) + " needs target.range");
    }
    switch (op.kind) {
      case EditOp::Kind::replace: j.at("payload").get_to(op.indices); break;
      case EditOp::Kind::reorder: j.at("payload").get_to(op.order); break;
      case EditOp::Kind::insert:
      case EditOp::Kind::swap_top:
      case EditOp::Kind::swap_bottom: op.codes = j.at("payload").get<LatentCodes>(); break;
      case EditOp::Kind::delete_: break;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("malformed edit op: ") + e.what());
  }
}

namespace detail {

inline CodeIndices& track(LatentCodes& c, Level l) { return l == Level::top ? c.top : c.bottom; }
inline const CodeIndices& track(const LatentCodes& c, Level l) { return l == Level::top ? c.top : c.bottom; }

inline void check_range(std::size_t begin, std::size_t end, std::size_t size, const std::string& what) {
  DM_THROW_IF(begin > end || end > size, IndexOutOfRange,
              what + " range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside [0, " +
                  std::to_string(size) + ")");
}

// Converts a range at `level` to a unit range; bottom ranges must be unit aligned.
inline std::pair<std::size_t, std::size_t> unit_range(Level level, std::size_t begin, std::size_t end) {
  if (level == Level::top) return {begin, end};
  DM_THROW_IF(begin % 2 != 0 || end % 2 != 0, RatioViolation,
              "bottom range [" + std::to_string(begin) + ", " + std::to_string(end) +
                  ") does not align with edit units (even bounds required)");
  return {begin / 2, end / 2};
}

template <typename V>
void erase_range(V& v, std::size_t begin, std::size_t end) {
  v.erase(v.begin() + std::ptrdiff_t(begin), v.begin() + std::ptrdiff_t(end));
}

template <typename V>
void insert_at(V& v, std::size_t pos, const V& items) {
  v.insert(v.begin() + std::ptrdiff_t(pos), items.begin(), items.end());
}

inline void apply_one(LatentCodes& c, const EditOp& op) {
  const std::string kind = to_string(op.kind);
  switch (op.kind) {
    case EditOp::Kind::insert: {
      const auto pos = op.range->first;
      check_range(pos, pos, track(c, op.level).size(), kind);
      const auto [u, unused] = unit_range(op.level, pos, pos);
      check_ratio(op.codes);
      DM_THROW_IF(op.codes.top.empty(), InvalidArgument, "insert payload is empty");
      insert_at(c.top, u, op.codes.top);
      insert_at(c.bottom, 2 * u, op.codes.bottom);
      break;
    }
    case EditOp::Kind::delete_: {
      const auto [b, e] = *op.range;
      check_range(b, e, track(c, op.level).size(), kind);
      const auto [ub, ue] = unit_range(op.level, b, e);
      erase_range(c.top, ub, ue);
      erase_range(c.bottom, 2 * ub, 2 * ue);
      break;
    }
    case EditOp::Kind::replace: {
      const auto [b, e] = *op.range;
      auto& t = track(c, op.level);
      check_range(b, e, t.size(), kind);
      DM_THROW_IF(op.indices.size() != e - b, InvalidArgument,
                  "replace payload has " + std::to_string(op.indices.size()) + " codes for a range of " +
                      std::to_string(e - b));
      std::copy(op.indices.begin(), op.indices.end(), t.begin() + std::ptrdiff_t(b));
      break;
    }
    case EditOp::Kind::reorder: {
      const auto [b, e] = *op.range;
      check_range(b, e, track(c, op.level).size(), kind);
      auto sorted = op.order;
      std::sort(sorted.begin(), sorted.end());
      std::vector<std::size_t> identity(e - b);
      std::iota(identity.begin(), identity.end(), 0);
      DM_THROW_IF(sorted != identity, InvalidArgument, "reorder payload is not a permutation of the range");
      if (op.level == Level::bottom) {
        const auto old = c.bottom;
        for (std::size_t i = 0; i < op.order.size(); ++i) c.bottom[b + i] = old[b + op.order[i]];
      } else {
        // Units move whole: each top code carries its two bottom codes.
        const auto old = c;
        for (std::size_t i = 0; i < op.order.size(); ++i) {
          const std::size_t from = b + op.order[i];
          c.top[b + i] = old.top[from];
          c.bottom[2 * (b + i)] = old.bottom[2 * from];
          c.bottom[2 * (b + i) + 1] = old.bottom[2 * from + 1];
        }
      }
      break;
    }
    case EditOp::Kind::swap_top:
    case EditOp::Kind::swap_bottom: {
      auto& t = track(c, op.level);
      const auto& donor = track(op.codes, op.level);
      const auto [b, e] = op.range.value_or(std::pair{std::size_t(0), t.size()});
      check_range(b, e, t.size(), kind);
      if (!op.range)
        DM_THROW_IF(donor.size() != t.size(), LengthMismatch,
                    "donor " + to_string(op.level) + " length " + std::to_string(donor.size()) + " != " +
                        std::to_string(t.size()));
      check_range(b, e, donor.size(), "donor");
      std::copy(donor.begin() + std::ptrdiff_t(b), donor.begin() + std::ptrdiff_t(e), t.begin() + std::ptrdiff_t(b));
      break;
    }
  }
  check_ratio(c);
}

}  // namespace detail

// Applies the ops in order to a copy of `codes`.
inline LatentCodes apply_edit_ops(const LatentCodes& codes, const std::vector<EditOp>& ops) {
  check_ratio(codes);
  LatentCodes out = codes;
  for (const auto& op : ops) detail::apply_one(out, op);
  DM_THROW_IF(out.top.empty(), InvalidArgument, "edits leave no edit units");
  return out;
}

struct EditResult {
  LatentCodes codes;
  motion::MotionSequence motion;
};

inline EditResult apply_edits(const LatentCodes& codes, const std::vector<EditOp>& ops, const HVQVAE<float>& vq) {
  auto out = apply_edit_ops(codes, ops);
  check_codebook_range(out, vq.config());
  for (const auto& op : ops)
    if (op.kind == EditOp::Kind::insert || op.kind == EditOp::Kind::swap_top || op.kind == EditOp::Kind::swap_bottom)
      check_codebook_range(op.codes, vq.config());
  ag::NoGrad guard;
  auto frames = vq.decode(out);
  return {std::move(out), {std::move(frames), motion::kFps}};
}

// Frames [first, last) that replacing unit k can change.
inline std::pair<std::size_t, std::size_t> unit_influence(std::size_t k, std::size_t units, const HVQVAE<float>& vq) {
  const std::size_t reach = vq.decoder_reach();
  const std::size_t first = k * kUnitFrames > reach ? k * kUnitFrames - reach : 0;
  const std::size_t last = std::min(units * kUnitFrames, (k + 1) * kUnitFrames + reach);
  return {first, last};
}

// ---- transfer --------------------------------------------------------------

inline LatentCodes transfer_codes(const LatentCodes& source, const LatentCodes& donor, Level level) {
  check_ratio(source);
  const auto& from = detail::track(donor, level);
  DM_THROW_IF(from.size() != detail::track(source, level).size(), LengthMismatch,
              "donor " + to_string(level) + " length " + std::to_string(from.size()) + " != source length " +
                  std::to_string(detail::track(source, level).size()));
  LatentCodes out = source;
  detail::track(out, level) = from;
  return out;
}

// ---- interpretability ------------------------------------------------------

// Mean over frames and joints of the across-sample positional variance.
inline double dispersion(const std::vector<motion::JointPositions>& samples) {
  DM_THROW_IF(samples.size() < 2, TooFewSamples, "dispersion needs at least two samples");
  const auto& first = samples.front().positions;
  for (const auto& s : samples)
    DM_THROW_IF(!s.positions.same_shape(first), LengthMismatch, "samples differ in length");
  const std::size_t N = first.rows(), J = first.cols() / 3;
  const double S = double(samples.size());
  double total = 0;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < J; ++j) {
      // Offsets from the first sample keep identical samples at exactly zero.
      double m[3] = {0, 0, 0}, sq = 0;
      for (const auto& s : samples)
        for (std::size_t c = 0; c < 3; ++c) {
          const double d = s.positions(i, 3 * j + c) - first(i, 3 * j + c);
          m[c] += d;
          sq += d * d;
        }
      total += std::max(0.0, sq / S - (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]) / (S * S));
    }
  return total / double(N * J);
}

struct DecodedSet {
  std::vector<motion::MotionSequence> motions;
  double dispersion = 0;
};

inline DecodedSet decode_set(const std::vector<LatentCodes>& codes, const HVQVAE<float>& vq,
                             const motion::Skeleton& skel) {
  ag::NoGrad guard;
  DecodedSet out;
  std::vector<motion::JointPositions> pos;
  for (const auto& c : codes) {
    check_ratio(c);
    check_codebook_range(c, vq.config());
    out.motions.push_back({vq.decode(c), motion::kFps});
    pos.push_back(motion::joint_positions(out.motions.back(), skel));
  }
  out.dispersion = dispersion(pos);
  return out;
}

// Bottom held at one index everywhere while the top sequence varies.
inline DecodedSet fix_bottom_vary_top(std::int32_t bottom_index, const std::vector<CodeIndices>& top_samples,
                                      const HVQVAE<float>& vq, const motion::Skeleton& skel) {
  DM_THROW_IF(top_samples.size() < 2, TooFewSamples, "need at least two top samples");
  std::vector<LatentCodes> codes;
  for (const auto& t : top_samples) codes.push_back({t, CodeIndices(2 * t.size(), bottom_index)});
  return decode_set(codes, vq, skel);
}

struct BottomReplacement {
  LatentCodes original, modified;
  motion::MotionSequence reconstruction, replaced;
};

inline BottomReplacement fix_top_replace_bottom(const motion::MotionSequence& m, std::int32_t bottom_index,
                                                const HVQVAE<float>& vq) {
  ag::NoGrad guard;
  BottomReplacement out;
  out.original = vq.encode_codes(m.frames);
  out.modified = out.original;
  std::fill(out.modified.bottom.begin(), out.modified.bottom.end(), bottom_index);
  check_codebook_range(out.modified, vq.config());
  out.reconstruction = {vq.decode(out.original), motion::kFps};
  out.replaced = {vq.decode(out.modified), motion::kFps};
  return out;
}

// Mean joint speed in m/s.
inline double mean_joint_speed(const motion::JointPositions& p, double fps = motion::kFps) {
  const std::size_t N = p.length(), J = p.positions.cols() / 3;
  DM_THROW_IF(N < 2, SequenceTooShort, "speed needs at least two frames");
  double total = 0;
  for (std::size_t i = 1; i < N; ++i)
    for (std::size_t j = 0; j < J; ++j) {
      double sq = 0;
      for (std::size_t c = 0; c < 3; ++c) sq += std::pow(p.positions(i, 3 * j + c) - p.positions(i - 1, 3 * j + c), 2);
      total += std::sqrt(sq);
    }
  return total * fps / double((N - 1) * J);
}

// Mean over top-code windows of the cosine between the two clips' mean
// joint-velocity vectors (all joints stacked). Windows where either clip is
// still are skipped.
inline double trend_cosine(const motion::JointPositions& a, const motion::JointPositions& b) {
  DM_THROW_IF(!a.positions.same_shape(b.positions), LengthMismatch, "clips differ in length");
  const std::size_t N = a.length(), W = a.positions.cols();
  double total = 0;
  std::size_t windows = 0;
  for (std::size_t s = 0; s + kUnitFrames <= N; s += kUnitFrames) {
    const std::size_t e = std::min(N - 1, s + kUnitFrames);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t c = 0; c < W; ++c) {
      const double va = a.positions(e, c) - a.positions(s, c), vb = b.positions(e, c) - b.positions(s, c);
      dot += va * vb;
      na += va * va;
      nb += vb * vb;
    }
    if (na < 1e-18 || nb < 1e-18) continue;
    total += dot / std::sqrt(na * nb);
    ++windows;
  }
  return windows ? total / double(windows) : 0.0;
}

// ---- codes file --------------------------------------------------------------

inline constexpr int kCodesVersion = 1;

inline nlohmann::json codes_document(const LatentCodes& c, std::size_t window = 512) {
  return {{"version", kCodesVersion}, {"top", c.top}, {"bottom", c.bottom}, {"fps", motion::kFps}, {"window", window}};
}

inline LatentCodes codes_from_document(const nlohmann::json& j) {
  try {
    DM_THROW_IF(j.at("version").get<int>() != kCodesVersion, FormatError, "unsupported codes version");
    LatentCodes c{j.at("top").get<CodeIndices>(), j.at("bottom").get<CodeIndices>()};
    check_ratio(c);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("malformed codes document: ") + e.what());
  }
}

inline void save_codes(const io::fs::path& path, const LatentCodes& c, std::size_t window = 512) {
  io::write_file_atomic(path, codes_document(c, window).dump(2));
}

inline LatentCodes load_codes(const io::fs::path& path) {
  const auto text = io::read_file(path);
  try {
    return codes_from_document(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::FormatError, path.string() + ": " + e.what());
  }
}

inline std::vector<EditOp> load_edit_ops(const io::fs::path& path) {
  const auto text = io::read_file(path);
  try {
    const auto j = nlohmann::json::parse(text);
    const auto& ops = j.is_object() ? j.at("ops") : j;
    return ops.get<std::vector<EditOp>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, path.string() + ": " + e.what());
  }
}

}  // namespace dancemeld::latent
