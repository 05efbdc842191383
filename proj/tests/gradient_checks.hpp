// SPDX-License-Identifier: Apache-2.0
// Finite-difference checks of the encoder's hand-written gradients, shared
// by the unit tests and the acceptance binary.
#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "attrda/encoder.hpp"
#include "test_support.hpp"

namespace attrda::testing {

struct GradCheck {
  std::map<std::string, double> max_rel_error;  // per tensor family
  std::map<std::string, std::size_t> coords;
};

// Strips the layer index so "layer0.wq" and "layer1.wq" form one family.
inline std::string family_of(const std::string& name) {
  if (name.rfind("layer", 0) != 0) return name;
  return "layer." + name.substr(name.find('.') + 1);
}

// Classification CE through every tensor except the MLM head, then MLM CE
// for the MLM head. `per_family` coordinates are sampled per tensor.
inline GradCheck check_parameter_gradients(std::uint64_t seed, std::size_t per_family = 5, double h = 1e-4,
                                           Activation act = Activation::Gelu) {
  std::mt19937_64 rng(seed);
  EncoderConfig cfg = tiny_config();
  cfg.activation = act;
  ModelParams p = ModelParams::init(cfg, seed);
  const auto ids = random_ids(7, cfg.vocab_size, rng);
  const std::vector<std::size_t> masked = {2, 5};
  const std::vector<TermId> targets = {ids[2], 9};

  auto cls_loss = [&](const ModelParams& q) { return cross_entropy(forward(q, ids).logits, 1); };
  auto mlm_loss = [&](const ModelParams& q) {
    const auto t = forward(q, ids, ForwardMode::Mlm, masked);
    double l = 0.0;
    for (std::size_t r = 0; r < masked.size(); ++r)
      l += cross_entropy(t.mlm_logits.row(static_cast<Eigen::Index>(r)).transpose(), targets[r]);
    return l;
  };

  ModelParams g_cls = ModelParams::zeros(cfg);
  {
    const auto t = forward(p, ids);
    Vec d;
    cross_entropy(t.logits, 1, &d);
    BackwardOptions o;
    o.grads = &g_cls;
    backward_classify(p, t, d, o);
  }
  ModelParams g_mlm = ModelParams::zeros(cfg);
  {
    const auto t = forward(p, ids, ForwardMode::Mlm, masked);
    Mat d(t.mlm_logits.rows(), t.mlm_logits.cols());
    for (std::size_t r = 0; r < masked.size(); ++r) {
      Vec dr;
      cross_entropy(t.mlm_logits.row(static_cast<Eigen::Index>(r)).transpose(), targets[r], &dr);
      d.row(static_cast<Eigen::Index>(r)) = dr.transpose();
    }
    BackwardOptions o;
    o.grads = &g_mlm;
    backward_mlm(p, t, d, o);
  }

  GradCheck out;
  auto views = p.tensors();
  auto gc = g_cls.tensors();
  auto gm = g_mlm.tensors();
  for (std::size_t k = 0; k < views.size(); ++k) {
    const std::string& name = views[k].name;
    const bool mlm_head = name.rfind("mlm_", 0) == 0;
    const std::size_t cols = views[k].cols;
    std::vector<std::size_t> rows_in_use;
    if (name == "token_emb") rows_in_use.assign(ids.begin(), ids.end());
    else if (name == "pos_emb")
      for (std::size_t i = 0; i < ids.size(); ++i) rows_in_use.push_back(i);
    else
      for (std::size_t r = 0; r < views[k].rows; ++r) rows_in_use.push_back(r);
    std::uniform_int_distribution<std::size_t> pick_row(0, rows_in_use.size() - 1), pick_col(0, cols - 1);
    for (std::size_t s = 0; s < per_family; ++s) {
      const std::size_t r = rows_in_use[pick_row(rng)], c = pick_col(rng);
      const std::size_t index = c * views[k].rows + r;  // Eigen storage is column-major
      const double analytic = mlm_head ? gm[k].data[index] : gc[k].data[index];
      const double numeric = mlm_head ? central_difference(p, k, index, h, mlm_loss)
                                      : central_difference(p, k, index, h, cls_loss);
      const auto fam = family_of(name);
      out.max_rel_error[fam] = std::max(out.max_rel_error[fam], rel_error(analytic, numeric));
      ++out.coords[fam];
    }
  }
  return out;
}

// d(logit_pred)/d(alpha) from the backward sweep against central differences
// of a forward pass where only the perturbed layer's maps are supplied; later
// layers still recompute theirs, as in the real graph.
inline double check_attention_gradients(std::uint64_t seed, std::size_t coords = 10, double h = 1e-4) {
  std::mt19937_64 rng(seed);
  const EncoderConfig cfg = tiny_config();
  const ModelParams p = ModelParams::init(cfg, seed);
  const auto ids = random_ids(6, cfg.vocab_size, rng);
  const ForwardTrace t = forward(p, ids);
  AttentionGrads dalpha;
  Vec onehot = Vec::Zero(2);
  onehot(t.predicted) = 1.0;
  BackwardOptions o;
  o.dalpha_out = &dalpha;
  backward_classify(p, t, onehot, o);

  AttentionGrads alpha(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) alpha[l] = t.layers[l].alpha;
  std::uniform_int_distribution<std::size_t> pl(0, cfg.n_layers - 1), ph(0, cfg.n_heads - 1), pj(0, ids.size() - 1);
  std::uniform_int_distribution<std::size_t> pi(0, ids.size() - 1);
  double worst = 0.0;
  for (std::size_t s = 0; s < coords; ++s) {
    const std::size_t l = pl(rng), hd = ph(rng), j = pj(rng);
    const std::size_t i = s % 2 == 0 ? 0 : pi(rng);  // CLS row and arbitrary rows
    const auto r = static_cast<Eigen::Index>(i), c = static_cast<Eigen::Index>(j);
    AttentionGrads up(cfg.n_layers), down(cfg.n_layers);
    up[l] = alpha[l];
    down[l] = alpha[l];
    up[l][hd](r, c) += h;
    down[l][hd](r, c) -= h;
    const double numeric = (forward_fixed_attention(p, ids, up).logits(t.predicted) -
                            forward_fixed_attention(p, ids, down).logits(t.predicted)) /
                           (2.0 * h);
    worst = std::max(worst, rel_error(dalpha[l][hd](r, c), numeric));
  }
  return worst;
}

}  // namespace attrda::testing
