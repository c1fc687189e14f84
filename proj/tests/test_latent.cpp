#include <random>

#include <gtest/gtest.h>

#include "dancemeld/latent/tools.hpp"

using namespace dancemeld;
using namespace dancemeld::latent;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::InvariantViolation;
}

const HVQVAE<float>& model() {
  static const HVQVAE<float> m = [] {
    hvqvae::HVQVAEConfig c;
    c.hidden = 16;
    c.code_dim = 8;
    c.bottom_codes = 32;
    c.top_codes = 16;
    c.music_dim = 4;
    c.music_hidden = 8;
    c.seed = 2;
    return HVQVAE<float>(c);
  }();
  return m;
}

LatentCodes random_codes(std::size_t units, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LatentCodes c;
  for (std::size_t i = 0; i < units; ++i) c.top.push_back(std::int32_t(rng() % 16));
  for (std::size_t i = 0; i < 2 * units; ++i) c.bottom.push_back(std::int32_t(rng() % 32));
  return c;
}

EditOp op(EditOp::Kind kind, Level level, std::size_t b, std::size_t e) {
  EditOp o;
  o.kind = kind;
  o.level = level;
  o.range = std::pair{b, e};
  return o;
}

}  // namespace

TEST(Transfer, IdentityAndComposition) {
  const auto src = random_codes(10, 1), donor = random_codes(10, 2);
  EXPECT_EQ(transfer_codes(src, src, Level::top), src);
  EXPECT_EQ(transfer_codes(transfer_codes(src, donor, Level::top), donor, Level::bottom), donor);
  const auto t = transfer_codes(src, donor, Level::top);
  EXPECT_EQ(t.top, donor.top);
  EXPECT_EQ(t.bottom, src.bottom);
  EXPECT_EQ(kind_of([&] { transfer_codes(src, random_codes(9, 3), Level::bottom); }), ErrorKind::LengthMismatch);
}

TEST(Edits, EmptyListIsIdentity) {
  const auto c = random_codes(12, 4);
  const auto r = apply_edits(c, {}, model());
  EXPECT_EQ(r.codes, c);
  EXPECT_EQ(r.motion.frames, model().decode(c));
  EXPECT_EQ(r.motion.frames.rows(), 12 * kUnitFrames);
}

TEST(Edits, DeleteThenReinsertRestores) {
  const auto c = random_codes(12, 5);
  for (std::size_t k : {0u, 5u, 11u}) {
    auto ins = op(EditOp::Kind::insert, Level::top, k, k);
    ins.codes = {{c.top[k]}, {c.bottom[2 * k], c.bottom[2 * k + 1]}};
    const auto deleted = apply_edit_ops(c, {op(EditOp::Kind::delete_, Level::top, k, k + 1)});
    EXPECT_EQ(deleted.top.size(), 11u);
    EXPECT_EQ(deleted.bottom.size(), 22u);
    EXPECT_EQ(apply_edit_ops(deleted, {ins}), c);
    // The same unit addressed at the bottom level.
    EXPECT_EQ(apply_edit_ops(c, {op(EditOp::Kind::delete_, Level::bottom, 2 * k, 2 * k + 2), ins}), c);
  }
}

TEST(Edits, ReplaceUnitIsLocal) {
  const auto c = random_codes(16, 6);
  const auto base = model().decode(c);
  const std::size_t k = 7;
  auto top = op(EditOp::Kind::replace, Level::top, k, k + 1);
  top.indices = {std::int32_t((c.top[k] + 3) % 16)};
  auto bottom = op(EditOp::Kind::replace, Level::bottom, 2 * k, 2 * k + 2);
  bottom.indices = {std::int32_t((c.bottom[2 * k] + 5) % 32), std::int32_t((c.bottom[2 * k + 1] + 9) % 32)};
  const auto r = apply_edits(c, {top, bottom}, model());
  const auto [first, last] = unit_influence(k, 16, model());
  double outside = 0, inside = 0;
  for (std::size_t i = 0; i < base.rows(); ++i)
    for (std::size_t j = 0; j < base.cols(); ++j) {
      const double d = std::abs(double(base(i, j)) - r.motion.frames(i, j));
      double& m = i >= first && i < last ? inside : outside;
      m = std::max(m, d);
    }
  EXPECT_LT(outside, 1e-6);
  EXPECT_GT(inside, 1e-4);
}

TEST(Edits, ReorderMovesWholeUnits) {
  const auto c = random_codes(6, 7);
  auto o = op(EditOp::Kind::reorder, Level::top, 1, 4);
  o.order = {2, 0, 1};
  const auto r = apply_edit_ops(c, {o});
  EXPECT_EQ(r.top[1], c.top[3]);
  EXPECT_EQ(r.bottom[2], c.bottom[6]);
  EXPECT_EQ(r.bottom[3], c.bottom[7]);
  EXPECT_EQ(r.top[2], c.top[1]);
  EXPECT_EQ(r.top[0], c.top[0]);
  auto b = op(EditOp::Kind::reorder, Level::bottom, 0, 2);
  b.order = {1, 0};
  const auto rb = apply_edit_ops(c, {b});
  EXPECT_EQ(rb.bottom[0], c.bottom[1]);
  EXPECT_EQ(rb.top, c.top);
  o.order = {0, 0, 1};
  EXPECT_EQ(kind_of([&] { apply_edit_ops(c, {o}); }), ErrorKind::InvalidArgument);
}

TEST(Edits, SwapLevels) {
  const auto c = random_codes(6, 8), donor = random_codes(6, 9);
  EditOp s;
  s.kind = EditOp::Kind::swap_top;
  s.level = Level::top;
  s.codes = donor;
  EXPECT_EQ(apply_edit_ops(c, {s}), transfer_codes(c, donor, Level::top));
  s.range = std::pair{std::size_t(2), std::size_t(4)};
  const auto partial = apply_edit_ops(c, {s});
  EXPECT_EQ(partial.top[2], donor.top[2]);
  EXPECT_EQ(partial.top[1], c.top[1]);
}

TEST(Edits, ErrorsAndRatio) {
  const auto c = random_codes(6, 10);
  EXPECT_EQ(kind_of([&] { apply_edit_ops(c, {op(EditOp::Kind::delete_, Level::top, 5, 7)}); }),
            ErrorKind::IndexOutOfRange);
  EXPECT_EQ(kind_of([&] { apply_edit_ops(c, {op(EditOp::Kind::delete_, Level::bottom, 1, 3)}); }),
            ErrorKind::RatioViolation);
  auto bad_insert = op(EditOp::Kind::insert, Level::top, 2, 2);
  bad_insert.codes = {{1}, {1}};
  EXPECT_EQ(kind_of([&] { apply_edit_ops(c, {bad_insert}); }), ErrorKind::RatioViolation);
  auto big = op(EditOp::Kind::replace, Level::top, 0, 1);
  big.indices = {16};
  EXPECT_EQ(kind_of([&] { apply_edits(c, {big}, model()); }), ErrorKind::IndexOutOfRange);
  EXPECT_EQ(kind_of([&] { apply_edit_ops({{1, 2}, {1, 2, 3}}, {}); }), ErrorKind::RatioViolation);
}

TEST(Edits, PureAndReproducible) {
  const auto c = random_codes(8, 11);
  const auto copy = c;
  auto o = op(EditOp::Kind::replace, Level::bottom, 3, 4);
  o.indices = {0};
  const auto a = apply_edits(c, {o}, model()), b = apply_edits(c, {o}, model());
  EXPECT_EQ(c, copy);
  EXPECT_EQ(a.codes, b.codes);
  EXPECT_EQ(a.motion.frames, b.motion.frames);
}

TEST(EditJson, SchemaRoundTrip) {
  const auto j = nlohmann::json::parse(R"({"kind":"replace","target":{"level":"top","range":[3,4]},"payload":[9]})");
  const auto o = j.get<EditOp>();
  EXPECT_EQ(o.kind, EditOp::Kind::replace);
  EXPECT_EQ(o.level, Level::top);
  EXPECT_EQ(o.range, (std::pair<std::size_t, std::size_t>{3, 4}));
  EXPECT_EQ(o.indices, CodeIndices{9});
  EXPECT_EQ(nlohmann::json(o), j);
  const auto ins = nlohmann::json::parse(
      R"({"kind":"insert","target":{"level":"top","range":[1,1]},"payload":{"top":[2],"bottom":[3,4]}})");
  EXPECT_EQ(nlohmann::json(ins.get<EditOp>()).get<EditOp>(), ins.get<EditOp>());
  EXPECT_EQ(kind_of([] { nlohmann::json::parse(R"({"kind":"warp"})").get<EditOp>(); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([] { nlohmann::json::parse(R"({"kind":"delete","target":{"level":"top"}})").get<EditOp>(); }),
            ErrorKind::InvalidArgument);
}

TEST(Interpretability, DispersionFixtures) {
  const auto skel = motion::builtin_skeleton();
  const auto same = fix_bottom_vary_top(3, {CodeIndices(4, 1), CodeIndices(4, 1), CodeIndices(4, 1)}, model(), skel);
  EXPECT_EQ(same.motions.size(), 3u);
  EXPECT_EQ(same.dispersion, 0.0);
  const auto varied = fix_bottom_vary_top(3, {CodeIndices(4, 1), CodeIndices(4, 7)}, model(), skel);
  EXPECT_GT(varied.dispersion, 0.0);
  EXPECT_EQ(kind_of([&] { fix_bottom_vary_top(3, {CodeIndices(4, 1)}, model(), skel); }), ErrorKind::TooFewSamples);

  // Two rigid copies 2 m apart: variance = (1 m)^2 per joint.
  auto a = motion::joint_positions(motion::rest_motion(5), skel), b = a;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < motion::kJointCount; ++j) b.positions(i, 3 * j) += 2.0;
  EXPECT_NEAR(dispersion({a, b}), 1.0, 1e-12);
}

TEST(Interpretability, ReplaceBottomKeepsTop) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 0.3);
  motion::MotionSequence m;
  m.frames = Tensor<float>(64, motion::kMotionWidth);
  for (std::size_t i = 0; i < 64; ++i) {
    std::array<motion::Mat3<double>, motion::kJointCount> r;
    for (auto& x : r) x = motion::axis_angle_to_matrix<double>(motion::Vec3<double>(n(rng), n(rng), n(rng)));
    motion::write_frame<float>(m.frames.row(i), motion::Vec3<double>::Zero(), r);
  }
  const auto r = fix_top_replace_bottom(m, 4, model());
  EXPECT_EQ(r.original.top, r.modified.top);
  EXPECT_EQ(r.modified.bottom, CodeIndices(16, 4));
  EXPECT_EQ(r.reconstruction.frames, model().decode(model().encode_codes(m.frames)));
}

TEST(Interpretability, SpeedAndTrendHelpers) {
  const auto skel = motion::builtin_skeleton();
  auto p = motion::joint_positions(motion::rest_motion(17), skel);
  for (std::size_t i = 0; i < 17; ++i)
    for (std::size_t j = 0; j < motion::kJointCount; ++j) p.positions(i, 3 * j) += 0.01 * double(i);
  EXPECT_NEAR(mean_joint_speed(p), 0.6, 1e-9);
  EXPECT_NEAR(trend_cosine(p, p), 1.0, 1e-12);
  auto q = p;
  for (std::size_t i = 0; i < 17; ++i)
    for (std::size_t j = 0; j < motion::kJointCount; ++j) q.positions(i, 3 * j) -= 0.02 * double(i);
  EXPECT_NEAR(trend_cosine(p, q), -1.0, 1e-12);
}

TEST(CodesFile, RoundTrip) {
  const auto c = random_codes(5, 13);
  const auto path = io::fs::temp_directory_path() / "dancemeld_test_codes.json";
  save_codes(path, c);
  EXPECT_EQ(load_codes(path), c);
  const auto doc = nlohmann::json::parse(io::read_file(path));
  EXPECT_EQ(doc.at("version"), 1);
  EXPECT_EQ(doc.at("fps"), 60.0);
  EXPECT_EQ(doc.at("window"), 512);
  EXPECT_EQ(kind_of([] { codes_from_document({{"version", 1}, {"top", {1}}, {"bottom", {1}}}); }),
            ErrorKind::RatioViolation);
}
