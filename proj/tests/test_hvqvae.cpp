#include <random>

#include <gtest/gtest.h>

#include "dancemeld/hvqvae/losses.hpp"

using namespace dancemeld;
using namespace dancemeld::hvqvae;
using ag::Var;

namespace {

template <typename T = double>
Tensor<T> randn(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor<T> t(r, c);
  for (auto& v : t.storage()) v = T(n(rng));
  return t;
}

HVQVAEConfig tiny_config() {
  HVQVAEConfig cfg;
  cfg.hidden = 8;
  cfg.code_dim = 6;
  cfg.bottom_codes = 16;
  cfg.top_codes = 8;
  cfg.music_dim = 5;
  cfg.music_hidden = 4;
  cfg.seed = 3;
  return cfg;
}

// Random motion near the rest pose so every 6-D block stays well conditioned.
template <typename T = double>
Tensor<T> random_motion(std::size_t frames, std::mt19937_64& rng) {
  auto x = motion::rest_motion(frames).frames.cast<T>();
  std::normal_distribution<double> n(0.0, 0.05);
  for (auto& v : x.storage()) v += T(n(rng));
  return x;
}

void zero_params(nn::ParameterSet<double>& params, const std::string& prefix) {
  for (const auto& [name, v] : params.items())
    if (name.rfind(prefix, 0) == 0) {
      Var<double> h = v;
      h.mutable_value().fill(0.0);
    }
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::InvariantViolation;
}

}  // namespace

TEST(Quantize, NearestNeighbourExample) {
  const Tensor<double> cb(2, 2, std::vector<double>{0, 0, 1, 1});
  const auto q = quantize(Tensor<double>(1, 2, std::vector<double>{0.9, 1.2}), cb);
  EXPECT_EQ(q.indices, CodeIndices{1});
  EXPECT_EQ(q.vectors, Tensor<double>(1, 2, std::vector<double>{1, 1}));
}

TEST(Quantize, MatchesBruteForceOnRandomInputs) {
  std::mt19937_64 rng(11);
  const auto cb = randn(32, 7, rng);
  const auto h = randn(1000, 7, rng, 1.5);
  const auto q = quantize(h, cb);
  for (std::size_t i = 0; i < h.rows(); ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < cb.rows(); ++k) {
      double d = 0;
      for (std::size_t c = 0; c < 7; ++c) d += (h(i, c) - cb(k, c)) * (h(i, c) - cb(k, c));
      if (d < best_d) best_d = d, best = k;
    }
    ASSERT_EQ(std::size_t(q.indices[i]), best);
    for (std::size_t c = 0; c < 7; ++c) ASSERT_EQ(q.vectors(i, c), cb(best, c));
  }
}

TEST(Quantize, IdempotentAndExactOnEntries) {
  std::mt19937_64 rng(12);
  const auto cb = randn(16, 5, rng);
  const auto q = quantize(randn(50, 5, rng), cb);
  const auto again = quantize(q.vectors, cb);
  EXPECT_EQ(again.indices, q.indices);
  EXPECT_EQ(again.vectors, q.vectors);
  const auto exact = quantize(cb.slice_rows(9, 10), cb);
  EXPECT_EQ(exact.indices, CodeIndices{9});
}

TEST(Quantize, TiesGoToLowestIndex) {
  const Tensor<double> cb(3, 2, std::vector<double>{1, 0, -1, 0, 5, 5});
  EXPECT_EQ(quantize(Tensor<double>(1, 2), cb).indices, CodeIndices{0});
  const Tensor<double> dup(3, 1, std::vector<double>{2, 1, 1});
  EXPECT_EQ(quantize(Tensor<double>(1, 1, 1.0), dup).indices, CodeIndices{1});
}

TEST(Quantize, DimensionMismatch) {
  EXPECT_EQ(kind_of([] { quantize(Tensor<double>(2, 3), Tensor<double>(4, 2)); }), ErrorKind::DimMismatch);
  EXPECT_EQ(kind_of([] { lookup(Tensor<double>(4, 2), CodeIndices{4}); }), ErrorKind::IndexOutOfRange);
}

TEST(HVQVAE, TemporalRates) {
  HVQVAE<float> model(tiny_config());
  std::mt19937_64 rng(1);
  const auto x = random_motion<float>(512, rng);
  const auto f = model.encode(x);
  EXPECT_EQ(f.h_b.rows(), 128u);
  EXPECT_EQ(f.h_t.rows(), 64u);
  EXPECT_EQ(f.h_b_prime.rows(), 128u);
  EXPECT_EQ(f.h_b_prime.cols(), 12u);
  const auto codes = model.encode_codes(x);
  EXPECT_EQ(codes.top.size(), 64u);
  EXPECT_EQ(codes.bottom.size(), 128u);
  const auto x_hat = model.decode(codes);
  EXPECT_EQ(x_hat.rows(), 512u);
  EXPECT_EQ(x_hat.cols(), 147u);

  const auto small = model.encode(random_motion<float>(8, rng));
  EXPECT_EQ(small.h_b.rows(), 2u);
  EXPECT_EQ(small.h_t.rows(), 1u);
  for (std::size_t n : {8u, 16u, 40u, 96u})
    EXPECT_EQ(model.decode(model.encode_codes(random_motion<float>(n, rng))).rows(), n);

  EXPECT_EQ(kind_of([&] { model.encode(random_motion<float>(511, rng)); }), ErrorKind::BadLength);
}

TEST(HVQVAE, DefaultWidthsGivePriorInputOf1536) {
  HVQVAEConfig cfg;
  cfg.music_dim = 4;
  cfg.music_hidden = 4;
  HVQVAE<float> model(cfg);
  std::mt19937_64 rng(2);
  const auto f = model.encode(random_motion<float>(16, rng));
  EXPECT_EQ(f.h_b_prime.cols() + f.h_t.cols(), 1536u);
  EXPECT_EQ(model.bottom_codebook().rows(), 512u);
  EXPECT_EQ(model.top_codebook().rows(), 128u);
}

TEST(HVQVAE, HbPrimeOrderWithZeroTopDecoder) {
  HVQVAE<double> model(tiny_config());
  zero_params(model.params(), "dec_t.");
  std::mt19937_64 rng(3);
  const auto h_b = randn(8, 6, rng);
  const auto out = model.form_hb_prime(ag::constant(h_b), ag::constant(Tensor<double>(4, 6))).value();
  ASSERT_EQ(out.cols(), 12u);
  EXPECT_EQ(out.slice_cols(0, 6), Tensor<double>(8, 6));
  EXPECT_EQ(out.slice_cols(6, 12), h_b);
  EXPECT_EQ(kind_of([&] { model.form_hb_prime(ag::constant(h_b), ag::constant(Tensor<double>(3, 6))); }),
            ErrorKind::LengthMismatch);
}

TEST(HVQVAE, QuantizeBottomThroughSelectingProjection) {
  HVQVAE<double> model(tiny_config());
  // P picks the last six channels, i.e. h_b.
  Var<double> w = model.params().at("bottom_proj.weight");
  Var<double> b = model.params().at("bottom_proj.bias");
  w.mutable_value().fill(0.0);
  b.mutable_value().fill(0.0);
  for (std::size_t c = 0; c < 6; ++c) w.mutable_value()(6 + c, c) = 1.0;

  std::mt19937_64 rng(4);
  const auto h_b = randn(16, 6, rng);
  Var<double> cb = model.bottom_codebook();
  for (std::size_t k = 0; k < 16; ++k)
    for (std::size_t c = 0; c < 6; ++c) cb.mutable_value()(k, c) = h_b(15 - k, c);
  Tensor<double> hbp(16, 12);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t c = 0; c < 6; ++c) hbp(i, 6 + c) = h_b(i, c), hbp(i, c) = 100.0 * double(c);
  const auto q = model.quantize_bottom(hbp);
  ASSERT_EQ(q.indices.size(), 16u);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(q.indices[i], std::int32_t(15 - i));

  for (std::size_t k = 0; k < 16; ++k)
    for (std::size_t c = 0; c < 6; ++c) cb.mutable_value()(k, c) = k == 7 ? 0.0 : 1.0 + double(k);
  const auto zeros = model.quantize_bottom(Tensor<double>(5, 12));
  EXPECT_EQ(zeros.indices, CodeIndices(5, 7));
  EXPECT_EQ(kind_of([&] { model.quantize_bottom(Tensor<double>(5, 10)); }), ErrorKind::DimMismatch);
}

TEST(HVQVAE, DecodeIsDeterministic) {
  HVQVAE<float> model(tiny_config());
  LatentCodes codes{{1, 2, 3, 0}, {0, 1, 2, 3, 4, 5, 6, 7}};
  EXPECT_EQ(model.decode(codes), model.decode(codes));
  EXPECT_EQ(kind_of([&] { model.decode(LatentCodes{{1, 2}, {0, 1, 2}}); }), ErrorKind::LengthMismatch);
}

// The decoder is convolutional, so a change in one code only reaches frames
// inside a fixed window. The window is measured here and asserted.
TEST(HVQVAE, DecodeLocality) {
  HVQVAE<double> model(tiny_config());
  std::mt19937_64 rng(5);
  const std::size_t N = 256;
  LatentCodes codes;
  for (std::size_t i = 0; i < N / 8; ++i) codes.top.push_back(std::int32_t(rng() % 8));
  for (std::size_t i = 0; i < N / 4; ++i) codes.bottom.push_back(std::int32_t(rng() % 16));
  const auto base = model.decode(codes);

  auto support = [&](const LatentCodes& edited) {
    const auto out = model.decode(edited);
    std::ptrdiff_t lo = -1, hi = -1;
    for (std::size_t i = 0; i < N; ++i) {
      double d = 0;
      for (std::size_t c = 0; c < out.cols(); ++c) d = std::max(d, std::abs(out(i, c) - base(i, c)));
      if (d >= 1e-6) {
        if (lo < 0) lo = std::ptrdiff_t(i);
        hi = std::ptrdiff_t(i);
      }
    }
    return std::pair{lo, hi};
  };

  const auto reach = std::ptrdiff_t(model.decoder_reach());
  EXPECT_EQ(reach, 28);
  const std::ptrdiff_t k = 16;
  auto top_edit = codes;
  top_edit.top[std::size_t(k)] = (top_edit.top[std::size_t(k)] + 1) % 8;
  const auto [tlo, thi] = support(top_edit);
  ASSERT_GE(tlo, 0);
  EXPECT_GE(tlo, 8 * k - reach);
  EXPECT_LE(thi, 8 * k + 7 + reach);

  const std::ptrdiff_t j = 30;
  auto bottom_edit = codes;
  bottom_edit.bottom[std::size_t(j)] = (bottom_edit.bottom[std::size_t(j)] + 1) % 16;
  const auto [blo, bhi] = support(bottom_edit);
  ASSERT_GE(blo, 0);
  EXPECT_GE(blo, 4 * j - reach);
  EXPECT_LE(bhi, 4 * j + 3 + reach);
}

TEST(VQLoss, ZeroForPerfectReconstruction) {
  std::mt19937_64 rng(6);
  const auto x = ag::constant(randn(8, 3, rng));
  const auto cb = randn(4, 2, rng);
  ForwardBundle<double> b;
  b.top = {{1, 2}, cb.slice_rows(1, 3)};
  b.bottom = {{0, 3}, concat_rows(cb.slice_rows(0, 1), cb.slice_rows(3, 4))};
  b.h_t = ag::constant(b.top.vectors);
  b.top_entries = ag::constant(b.top.vectors);
  b.bottom_projected = ag::constant(b.bottom.vectors);
  b.bottom_entries = ag::constant(b.bottom.vectors);
  b.reconstruction = x;
  EXPECT_EQ(vq_loss(x, b, LossWeights{}).item(), 0.0);

  // h_t = e_t + delta: only the two top terms move.
  Tensor<double> delta(2, 2, std::vector<double>{0.1, -0.2, 0.3, 0.05});
  auto h_t = b.top.vectors;
  h_t += delta;
  b.h_t = ag::constant(h_t);
  double expected = 0;
  for (double d : delta.storage()) expected += d * d;
  expected = (1.0 + 0.02) * expected / 4.0;
  EXPECT_NEAR(vq_loss(x, b, LossWeights{}).item(), expected, 1e-15);
}

TEST(VQLoss, CodebookTermsNeverReachTheEncoder) {
  HVQVAE<double> model(tiny_config());
  std::mt19937_64 rng(7);
  const auto x = ag::constant(random_motion(32, rng));

  for (int trial = 0; trial < 3; ++trial) {
    // Perturbing the codebooks must not make the codebook terms reach the encoder.
    if (trial > 0) {
      Var<double> cb_t = model.top_codebook(), cb_b = model.bottom_codebook();
      for (auto& v : cb_t.mutable_value().storage()) v += 0.01 * double(int(rng() % 5) - 2);
      for (auto& v : cb_b.mutable_value().storage()) v += 0.01 * double(int(rng() % 5) - 2);
    }
    model.params().zero_grad();
    const auto b = model.forward(x);
    const auto codebook_terms = ag::add(ag::mse(ag::detach(b.bottom_projected), b.bottom_entries),
                                        ag::mse(ag::detach(b.h_t), b.top_entries));
    ag::backward(codebook_terms);
    for (const auto& [name, v] : model.params().items()) {
      const bool codebook = name.rfind("codebook.", 0) == 0;
      double g = 0;
      for (double e : v.grad().storage()) g = std::max(g, std::abs(e));
      if (codebook)
        EXPECT_GT(g, 0.0) << name;
      else
        EXPECT_EQ(g, 0.0) << name;
    }
  }
}

TEST(VQLoss, GradientsMatchFiniteDifferences) {
  HVQVAE<double> model(tiny_config());
  std::mt19937_64 rng(8);
  const auto x = ag::constant(random_motion(16, rng));
  const LossWeights w;

  // (a) codebook terms w.r.t. the codebook entries, (b) commit terms w.r.t. an
  // encoder weight. Indices are held fixed by the small step.
  auto codebook_top = [&] {
    const auto b = model.forward(x);
    return ag::mse(ag::detach(b.h_t), b.top_entries);
  };
  auto codebook_bottom = [&] {
    const auto b = model.forward(x);
    return ag::mse(ag::detach(b.bottom_projected), b.bottom_entries);
  };
  // The bottom commit term also reaches E_t through the straight-through
  // path, which finite differences cannot see, so each commit term is checked
  // on parameters upstream of it alone.
  auto commit_top = [&] {
    const auto b = model.forward(x);
    return ag::scale(ag::mse(ag::constant(b.top.vectors), b.h_t), w.beta);
  };
  auto commit_bottom = [&] {
    const auto b = model.forward(x);
    return ag::scale(ag::mse(ag::constant(b.bottom.vectors), b.bottom_projected), w.alpha);
  };

  auto check = [&](const std::function<Var<double>()>& objective, const std::string& param, std::size_t count) {
    model.params().zero_grad();
    ag::backward(objective());
    Var<double> p = model.params().at(param);
    const Tensor<double> grad = p.grad().empty() ? Tensor<double>(p.rows(), p.cols()) : p.grad();
    const auto before = model.encode_codes(x.value());
    const double h = 1e-6;
    for (std::size_t i = 0; i < std::min(count, p.value().size()); ++i) {
      const double keep = p.value()[i];
      p.mutable_value()[i] = keep + h;
      const double up = objective().item();
      EXPECT_EQ(model.encode_codes(x.value()), before);
      p.mutable_value()[i] = keep - h;
      const double down = objective().item();
      p.mutable_value()[i] = keep;
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(grad[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << param << "[" << i << "]";
    }
  };
  check(codebook_top, "codebook.top", 48);
  check(codebook_bottom, "codebook.bottom", 96);
  check(commit_top, "enc_b.in.weight", 40);
  check(commit_top, "enc_t.out.weight", 40);
  check(commit_bottom, "bottom_proj.weight", 40);
  check(commit_bottom, "dec_t.out.weight", 40);
}

TEST(AuxLoss, ZeroForIdenticalMotion) {
  std::mt19937_64 rng(9);
  const auto x = ag::constant(random_motion(12, rng));
  const auto skel = motion::builtin_skeleton();
  const auto contacts = motion::detect_foot_contacts({motion::forward_kinematics(x.value(), skel)}, skel);
  EXPECT_EQ(aux_loss(x, x, contacts, skel, LossWeights{}).item(), 0.0);
}

TEST(AuxLoss, ConstantRootShift) {
  std::mt19937_64 rng(10);
  const auto skel = motion::builtin_skeleton();
  const auto x = random_motion(20, rng);
  auto shifted = x;
  const double c[3] = {0.3, -0.1, 0.2};
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t k = 0; k < 3; ++k) shifted(i, k) += c[k];
  const auto contacts = motion::detect_foot_contacts({motion::forward_kinematics(x, skel)}, skel);
  AuxTerms t;
  aux_loss(ag::constant(x), ag::constant(shifted), contacts, skel, LossWeights{}, &t);
  EXPECT_NEAR(t.vel, 0.0, 1e-24);
  EXPECT_NEAR(t.acc, 0.0, 1e-24);
  EXPECT_NEAR(t.contact, 0.0, 1e-24);
  // Every joint moves by c: sum = N * 24 * |c|^2, mean over N * 72 entries.
  const double c2 = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
  EXPECT_NEAR(t.pos, 20.0 * 24.0 * c2 / (20.0 * 72.0), 1e-12);
}

TEST(AuxLoss, SlidingFootDuringStance) {
  const auto skel = motion::builtin_skeleton();
  const std::size_t N = 10;
  const auto x = motion::rest_motion(N).frames.cast<double>();
  const auto contacts = motion::detect_foot_contacts({motion::forward_kinematics(x, skel)}, skel);
  for (auto l : contacts.labels) ASSERT_EQ(l, 1);

  // Slide the whole body 0.1 m/frame along x; every foot joint slides with it.
  auto x_hat = x;
  for (std::size_t i = 0; i < N; ++i) x_hat(i, 0) += 0.1 * double(i);
  AuxTerms t;
  aux_loss(ag::constant(x), ag::constant(x_hat), contacts, skel, LossWeights{}, &t);

  const auto pos = motion::forward_kinematics(x_hat, skel);
  double sum = 0;
  for (std::size_t i = 0; i + 1 < N; ++i)
    for (int j : skel.foot_joint_ids)
      for (std::size_t c = 0; c < 3; ++c) {
        const double d = pos(i + 1, 3 * std::size_t(j) + c) - pos(i, 3 * std::size_t(j) + c);
        sum += d * d;
      }
  const double oracle = sum / double((N - 1) * skel.foot_joint_ids.size() * 3);
  EXPECT_NEAR(t.contact, oracle, 1e-12);
  EXPECT_NEAR(t.contact, 0.01 / 3.0, 1e-12);
  EXPECT_NEAR(t.acc, 0.0, 1e-20);
  EXPECT_NEAR(t.vel, 9 * 0.01 / (9.0 * 147.0), 1e-12);
}

TEST(AuxLoss, NeedsThreeFrames) {
  const auto skel = motion::builtin_skeleton();
  const auto x = ag::constant(motion::rest_motion(2).frames.cast<double>());
  motion::FootContactLabels contacts{std::vector<std::uint8_t>(8, 0), 2, 4};
  EXPECT_EQ(kind_of([&] { aux_loss(x, x, contacts, skel, LossWeights{}); }), ErrorKind::SequenceTooShort);
}

TEST(ModalityAlignment, Examples) {
  std::mt19937_64 rng(11);
  const auto e = randn(4, 3, rng), m = randn(4, 3, rng);
  EXPECT_EQ(modality_alignment_loss(ag::constant(e), ag::constant(e)).item(), 0.0);
  double expected = 0;
  for (std::size_t i = 0; i < e.size(); ++i) expected += (e[i] - m[i]) * (e[i] - m[i]);
  EXPECT_NEAR(modality_alignment_loss(ag::constant(e), ag::constant(m)).item(), expected / 12.0, 1e-14);
  double norm = 0;
  for (double v : e.storage()) norm += v * v;
  EXPECT_NEAR(modality_alignment_loss(ag::constant(e), ag::constant(Tensor<double>(4, 3))).item(), norm / 12.0, 1e-14);
  EXPECT_EQ(kind_of([&] { modality_alignment_loss(ag::constant(e), ag::constant(randn(3, 3, rng))); }),
            ErrorKind::LengthMismatch);
}

TEST(TotalLoss, WeightedSumAndGradient) {
  auto s = [](double v) { return ag::constant(Tensor<double>::scalar(v)); };
  EXPECT_EQ(total_loss(s(0), s(0), s(0), LossWeights{}).item(), 0.0);
  EXPECT_DOUBLE_EQ(total_loss(s(2), s(3), s(10), LossWeights{}).item(), 6.0);

  Var<double> a(Tensor<double>::scalar(1.5), true), b(Tensor<double>::scalar(-0.5), true);
  LossWeights w;
  w.lambda_aux = 0.7;
  w.lambda_ma = 0.3;
  ag::backward(total_loss(ag::mul(a, a), ag::mul(a, b), ag::mul(b, b), w));
  EXPECT_NEAR(a.grad()[0], 2 * 1.5 + 0.7 * -0.5, 1e-14);
  EXPECT_NEAR(b.grad()[0], 0.7 * 1.5 + 0.3 * 2 * -0.5, 1e-14);
}

TEST(Losses, NonNegativeOnRandomWindows) {
  HVQVAE<double> model(tiny_config());
  const auto skel = motion::builtin_skeleton();
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = random_motion(16, rng);
    const auto music = randn(16, 5, rng);
    const auto contacts = motion::detect_foot_contacts({motion::forward_kinematics(x, skel)}, skel);
    LossBreakdown br;
    window_loss(model, x, music, contacts, skel, LossWeights{}, &br);
    EXPECT_GE(br.vq, 0.0);
    EXPECT_GE(br.aux_terms.pos, 0.0);
    EXPECT_GE(br.aux_terms.vel, 0.0);
    EXPECT_GE(br.aux_terms.acc, 0.0);
    EXPECT_GE(br.aux_terms.contact, 0.0);
    EXPECT_GE(br.ma, 0.0);
    EXPECT_TRUE(std::isfinite(br.total));
  }
}
