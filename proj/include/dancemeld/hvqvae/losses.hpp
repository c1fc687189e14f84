#pragma once

#include <nlohmann/json.hpp>

#include "dancemeld/hvqvae/model.hpp"

namespace dancemeld::hvqvae {

struct LossWeights {
  double alpha = 0.02;  // bottom commit
  double beta = 0.02;   // top commit
  double gamma = 1.0;   // velocity
  double phi = 1.0;     // acceleration
  double psi = 1.0;     // contact
  double lambda_aux = 1.0;
  double lambda_ma = 0.1;

  void validate() const {
    for (double w : {alpha, beta, gamma, phi, psi, lambda_aux, lambda_ma})
      DM_THROW_IF(!(w >= 0.0) || !std::isfinite(w), InvalidArgument, "loss weights must be finite and >= 0");
  }

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LossWeights, alpha, beta, gamma, phi, psi, lambda_aux, lambda_ma)

// All losses are mean-reduced over every axis.

// ||sg[P(h_b')] - e_b||^2 + a||sg[e_b] - P(h_b')||^2 + ||sg[h_t] - e_t||^2
//   + b||sg[e_t] - h_t||^2 + ||x - x_hat||^2
template <typename T>
Var<T> vq_loss(const Var<T>& x, const ForwardBundle<T>& b, const LossWeights& w) {
  const auto codebook_b = ag::mse(ag::detach(b.bottom_projected), b.bottom_entries);
  const auto commit_b = ag::mse(ag::constant(b.bottom.vectors), b.bottom_projected);
  const auto codebook_t = ag::mse(ag::detach(b.h_t), b.top_entries);
  const auto commit_t = ag::mse(ag::constant(b.top.vectors), b.h_t);
  const auto recon = ag::mse(x, b.reconstruction);
  return ag::add(ag::add(ag::add(codebook_b, ag::scale(commit_b, T(w.alpha))),
                         ag::add(codebook_t, ag::scale(commit_t, T(w.beta)))),
                 recon);
}

struct AuxTerms {
  double pos = 0, vel = 0, acc = 0, contact = 0;
};

// Sum of squares of a difference series divided by (N - 1) * width, with N
// the clip length. Used for both velocity and acceleration.
template <typename T>
Var<T> derivative_loss(const Var<T>& dx, const Var<T>& dx_hat, std::size_t clip_length) {
  return ag::scale(ag::sum_squares(ag::sub(dx, dx_hat)), T(1.0 / double((clip_length - 1) * dx.cols())));
}

// Masked foot displacement of the prediction on frames labeled in contact:
// (1 / (N - 1)) sum_i mean_{feet, xyz} ((FK(x_hat)^{i+1} - FK(x_hat)^i) * b^i)^2.
template <typename T>
Var<T> contact_loss(const Var<T>& predicted_positions, const motion::FootContactLabels& contacts,
                    const motion::Skeleton& skel) {
  const std::size_t N = predicted_positions.rows();
  DM_THROW_IF(contacts.frames != N, LengthMismatch, "contact labels do not cover the clip");
  const std::size_t F = skel.foot_joint_ids.size();
  Tensor<T> mask(N - 1, motion::kPositionWidth);
  for (std::size_t i = 0; i + 1 < N; ++i)
    for (std::size_t f = 0; f < F; ++f)
      if (contacts(i, f))
        for (std::size_t c = 0; c < 3; ++c) mask(i, 3 * std::size_t(skel.foot_joint_ids[f]) + c) = T(1);
  const auto masked = ag::mul(ag::diff_rows(predicted_positions), ag::constant(mask));
  return ag::scale(ag::sum_squares(masked), T(1.0 / double((N - 1) * F * 3)));
}

// L_pos + gamma L_vel + phi L_acc + psi L_contact. Contacts come from x.
template <typename T>
Var<T> aux_loss(const Var<T>& x, const Var<T>& x_hat, const motion::FootContactLabels& contacts,
                const motion::Skeleton& skel, const LossWeights& w, AuxTerms* terms = nullptr) {
  DM_THROW_IF(x.rows() != x_hat.rows() || x.cols() != x_hat.cols(), ShapeMismatch, "x and x_hat differ in shape");
  const std::size_t N = x.rows();
  DM_THROW_IF(N < 3, SequenceTooShort, "aux loss needs N >= 3");
  const auto pos = motion::forward_kinematics(ag::constant(x.value()), skel);
  const auto pos_hat = motion::forward_kinematics(x_hat, skel);
  const auto l_pos = ag::mse(pos, pos_hat);

  const auto vel = ag::diff_rows(x), vel_hat = ag::diff_rows(x_hat);
  const auto l_vel = derivative_loss(vel, vel_hat, N);
  const auto l_acc = derivative_loss(ag::diff_rows(vel), ag::diff_rows(vel_hat), N);
  const auto l_contact = contact_loss(pos_hat, contacts, skel);
  if (terms) *terms = {l_pos.item(), l_vel.item(), l_acc.item(), l_contact.item()};
  return ag::add(ag::add(l_pos, ag::scale(l_vel, T(w.gamma))),
                 ag::add(ag::scale(l_acc, T(w.phi)), ag::scale(l_contact, T(w.psi))));
}

template <typename T>
Var<T> modality_alignment_loss(const Var<T>& e_t, const Var<T>& encoded_music) {
  DM_THROW_IF(e_t.rows() != encoded_music.rows(), LengthMismatch,
              "top codes (" + std::to_string(e_t.rows()) + ") and music encoding (" +
                  std::to_string(encoded_music.rows()) + ") differ in length");
  return ag::mse(e_t, encoded_music);
}

template <typename T>
Var<T> total_loss(const Var<T>& l_vq, const Var<T>& l_aux, const Var<T>& l_ma, const LossWeights& w) {
  return ag::add(l_vq, ag::add(ag::scale(l_aux, T(w.lambda_aux)), ag::scale(l_ma, T(w.lambda_ma))));
}

struct LossBreakdown {
  double total = 0, vq = 0, aux = 0, ma = 0;
  AuxTerms aux_terms;
};

// One window's full objective. Music features are at frame rate; the music
// encoder brings them to the top-code rate.
template <typename T>
Var<T> window_loss(const HVQVAE<T>& model, const Tensor<T>& motion, const Tensor<T>& music,
                   const motion::FootContactLabels& contacts, const motion::Skeleton& skel, const LossWeights& w,
                   LossBreakdown* out = nullptr) {
  const auto x = ag::constant(motion);
  const auto bundle = model.forward(x);
  const auto l_vq = vq_loss(x, bundle, w);
  AuxTerms terms;
  const auto l_aux = aux_loss(x, bundle.reconstruction, contacts, skel, w, &terms);
  const auto l_ma = modality_alignment_loss(bundle.top_st, model.encode_music(music));
  auto total = total_loss(l_vq, l_aux, l_ma, w);
  if (out) *out = {total.item(), l_vq.item(), l_aux.item(), l_ma.item(), terms};
  return total;
}

}  // namespace dancemeld::hvqvae
