// SPDX-License-Identifier: Apache-2.0
#include "attrda/encoder.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace attrda {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kRescaleEps = 1e-10;
constexpr char kCheckpointMagic[] = "attrda-checkpoint";
constexpr int kCheckpointVersion = 1;

double activate(Activation act, double u) {
  switch (act) {
    case Activation::Gelu: return 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0)));
    case Activation::Relu: return u > 0.0 ? u : 0.0;
    case Activation::Identity: return u;
  }
  return u;
}

double activate_grad(Activation act, double u) {
  switch (act) {
    case Activation::Gelu: {
      const double cdf = 0.5 * (1.0 + std::erf(u / std::sqrt(2.0)));
      const double pdf = std::exp(-0.5 * u * u) / std::sqrt(2.0 * M_PI);
      return cdf + u * pdf;
    }
    case Activation::Relu: return u > 0.0 ? 1.0 : 0.0;
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

void fill_normal(Mat& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
}

// Row-wise layer norm. With `frozen_rstd` the scale comes from another pass.
void layer_norm(const Mat& x, const RowVec& gain, const RowVec& bias, bool enabled, Mat& y, Vec& mean, Vec& rstd,
                const Vec* frozen_rstd = nullptr) {
  if (!enabled) {
    y = x;
    mean = Vec::Zero(x.rows());
    rstd = Vec::Ones(x.rows());
    return;
  }
  const double d = static_cast<double>(x.cols());
  mean = x.rowwise().sum() / d;
  Mat centered = x.colwise() - mean;
  if (frozen_rstd) {
    rstd = *frozen_rstd;
  } else {
    rstd.resize(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      rstd(i) = 1.0 / std::sqrt(centered.row(i).squaredNorm() / d + kLayerNormEps);
  }
  y = (rstd.asDiagonal() * centered).array().rowwise() * gain.array();
  y.rowwise() += bias;
}

// dL/dx for y = layer_norm(x). `frozen` treats the scale as a constant, which
// is the linear rule used for DeepLIFT multipliers.
Mat layer_norm_backward(const Mat& x, const Vec& mean, const Vec& rstd, const RowVec& gain, const Mat& dy,
                        bool enabled, bool frozen, RowVec* dgain, RowVec* dbias, double scale) {
  if (!enabled) return dy;
  const double d = static_cast<double>(x.cols());
  Mat xhat = rstd.asDiagonal() * (x.colwise() - mean);
  if (dgain) *dgain += scale * (dy.array() * xhat.array()).colwise().sum().matrix();
  if (dbias) *dbias += scale * dy.colwise().sum();
  Mat dxhat = dy.array().rowwise() * gain.array();
  Vec mean_dxhat = dxhat.rowwise().sum() / d;
  Mat dx = dxhat.colwise() - mean_dxhat;
  if (!frozen) {
    Vec mean_dxhat_xhat = (dxhat.array() * xhat.array()).rowwise().sum() / d;
    dx -= (xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
  }
  return rstd.asDiagonal() * dx;
}

void softmax_rows(Mat& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
}

Mat embed(const ModelParams& p, std::span<const TermId> ids, bool zero_tokens) {
  const auto n = static_cast<Eigen::Index>(ids.size());
  Mat x = p.pos_emb.topRows(n);
  if (!zero_tokens)
    for (Eigen::Index i = 0; i < n; ++i) x.row(i) += p.token_emb.row(ids[static_cast<std::size_t>(i)]);
  return x;
}

void add_head_outputs(const ModelParams& p, ForwardTrace& t) {
  if (t.mode == ForwardMode::Classify) {
    Vec logits = (t.z.row(0) * p.cls_w + p.cls_b).transpose();
    t.logits = logits;
    t.predicted = logits(1) > logits(0) ? 1 : 0;
  } else {
    t.mlm_logits.resize(static_cast<Eigen::Index>(t.mlm_positions.size()), p.mlm_w.cols());
    for (std::size_t r = 0; r < t.mlm_positions.size(); ++r)
      t.mlm_logits.row(static_cast<Eigen::Index>(r)) =
          t.z.row(static_cast<Eigen::Index>(t.mlm_positions[r])) * p.mlm_w + p.mlm_b;
  }
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Gelu: return "gelu";
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
  }
  return "gelu";
}

void EncoderConfig::validate() const {
  if (vocab_size < 5) throw ConfigError("encoder.vocab_size must cover the special tokens and at least one term");
  if (max_len < 1) throw ConfigError("encoder.max_len must be >= 1");
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || ffn_dim == 0)
    throw ConfigError("encoder dimensions must be positive");
  if (d_model % n_heads != 0) throw ConfigError("encoder.d_model must be divisible by encoder.n_heads");
  if (!(embedding_std > 0.0)) throw ConfigError("encoder.embedding_std must be positive");
}

KeyValues EncoderConfig::to_map() const {
  KeyValues kv;
  kv["vocab_size"] = std::to_string(vocab_size);
  kv["max_len"] = std::to_string(max_len);
  kv["d_model"] = std::to_string(d_model);
  kv["n_layers"] = std::to_string(n_layers);
  kv["n_heads"] = std::to_string(n_heads);
  kv["ffn_dim"] = std::to_string(ffn_dim);
  kv["activation"] = std::string(to_string(activation));
  kv["layer_norm"] = layer_norm ? "true" : "false";
  kv["uniform_attention"] = uniform_attention ? "true" : "false";
  kv["embedding_std"] = format_real(embedding_std);
  return kv;
}

EncoderConfig EncoderConfig::from_map(const KeyValues& kv, EncoderConfig c) {
  for (const auto& [k, v] : kv) {
    const std::string key = "encoder." + k;
    if (k == "vocab_size") c.vocab_size = parse_size(key, v);
    else if (k == "max_len") c.max_len = parse_size(key, v);
    else if (k == "d_model") c.d_model = parse_size(key, v);
    else if (k == "n_layers") c.n_layers = parse_size(key, v);
    else if (k == "n_heads") c.n_heads = parse_size(key, v);
    else if (k == "ffn_dim") c.ffn_dim = parse_size(key, v);
    else if (k == "layer_norm") c.layer_norm = parse_bool(key, v);
    else if (k == "uniform_attention") c.uniform_attention = parse_bool(key, v);
    else if (k == "embedding_std") c.embedding_std = parse_real(key, v);
    else if (k == "activation") {
      if (v == "gelu") c.activation = Activation::Gelu;
      else if (v == "relu") c.activation = Activation::Relu;
      else if (v == "identity") c.activation = Activation::Identity;
      else throw ConfigError("encoder.activation: expected gelu|relu|identity, got '" + v + "'");
    } else {
      throw ConfigError("unknown config key: " + key);
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

ModelParams ModelParams::zeros(const EncoderConfig& c) {
  c.validate();
  const auto V = static_cast<Eigen::Index>(c.vocab_size);
  const auto L = static_cast<Eigen::Index>(c.max_len);
  const auto d = static_cast<Eigen::Index>(c.d_model);
  const auto f = static_cast<Eigen::Index>(c.ffn_dim);
  ModelParams p;
  p.config = c;
  p.token_emb = Mat::Zero(V, d);
  p.pos_emb = Mat::Zero(L, d);
  p.layers.resize(c.n_layers);
  for (auto& l : p.layers) {
    l.wq = l.wk = l.wv = l.wo = Mat::Zero(d, d);
    l.bq = l.bk = l.bv = l.bo = RowVec::Zero(d);
    l.ln1_gain = l.ln1_bias = l.ln2_gain = l.ln2_bias = RowVec::Zero(d);
    l.w1 = Mat::Zero(d, f);
    l.b1 = RowVec::Zero(f);
    l.w2 = Mat::Zero(f, d);
    l.b2 = RowVec::Zero(d);
  }
  p.lnf_gain = p.lnf_bias = RowVec::Zero(d);
  p.cls_w = Mat::Zero(d, kNumClasses);
  p.cls_b = RowVec::Zero(kNumClasses);
  p.mlm_w = Mat::Zero(d, V);
  p.mlm_b = RowVec::Zero(V);
  return p;
}

ModelParams ModelParams::init(const EncoderConfig& c, std::uint64_t seed) {
  ModelParams p = zeros(c);
  std::mt19937_64 rng(seed);
  const double d = static_cast<double>(c.d_model);
  const double f = static_cast<double>(c.ffn_dim);
  fill_normal(p.token_emb, c.embedding_std, rng);
  fill_normal(p.pos_emb, c.embedding_std, rng);
  for (auto& l : p.layers) {
    for (Mat* w : {&l.wq, &l.wk, &l.wv, &l.wo}) fill_normal(*w, 1.0 / std::sqrt(d), rng);
    fill_normal(l.w1, 1.0 / std::sqrt(d), rng);
    fill_normal(l.w2, 1.0 / std::sqrt(f), rng);
    l.ln1_gain.setOnes();
    l.ln2_gain.setOnes();
  }
  p.lnf_gain.setOnes();
  fill_normal(p.cls_w, 1.0 / std::sqrt(d), rng);
  fill_normal(p.mlm_w, 1.0 / std::sqrt(d), rng);
  return p;
}

std::vector<TensorView> ModelParams::tensors() {
  std::vector<TensorView> out;
  auto add = [&out](std::string name, auto& m) {
    out.push_back({std::move(name), std::span<double>(m.data(), static_cast<std::size_t>(m.size())),
                   static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  };
  add("token_emb", token_emb);
  add("pos_emb", pos_emb);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    add(p + "wq", l.wq), add(p + "bq", l.bq);
    add(p + "wk", l.wk), add(p + "bk", l.bk);
    add(p + "wv", l.wv), add(p + "bv", l.bv);
    add(p + "wo", l.wo), add(p + "bo", l.bo);
    add(p + "ln1_gain", l.ln1_gain), add(p + "ln1_bias", l.ln1_bias);
    add(p + "ln2_gain", l.ln2_gain), add(p + "ln2_bias", l.ln2_bias);
    add(p + "w1", l.w1), add(p + "b1", l.b1);
    add(p + "w2", l.w2), add(p + "b2", l.b2);
  }
  add("lnf_gain", lnf_gain);
  add("lnf_bias", lnf_bias);
  add("cls_w", cls_w);
  add("cls_b", cls_b);
  add("mlm_w", mlm_w);
  add("mlm_b", mlm_b);
  return out;
}

std::size_t ModelParams::num_parameters() const {
  std::size_t n = 0;
  for (const auto& t : const_cast<ModelParams*>(this)->tensors()) n += t.data.size();
  return n;
}

void ModelParams::set_zero() {
  for (auto& t : tensors()) std::fill(t.data.begin(), t.data.end(), 0.0);
}

void ModelParams::add_scaled(const ModelParams& other, double scale) {
  auto mine = tensors();
  auto theirs = const_cast<ModelParams&>(other).tensors();
  for (std::size_t i = 0; i < mine.size(); ++i)
    for (std::size_t j = 0; j < mine[i].data.size(); ++j) mine[i].data[j] += scale * theirs[i].data[j];
}

std::string ModelParams::first_non_finite() const {
  for (const auto& t : const_cast<ModelParams*>(this)->tensors())
    for (double v : t.data)
      if (!std::isfinite(v)) return t.name;
  return {};
}

bool ModelParams::all_finite() const { return first_non_finite().empty(); }

// ---------------------------------------------------------------------------
// Forward

namespace {

ForwardTrace forward_impl(const ModelParams& p, std::span<const TermId> ids, ForwardMode mode,
                          std::span<const std::size_t> mlm_positions, const AttentionGrads* fixed_alpha) {
  const auto& c = p.config;
  if (ids.empty() || ids.size() > c.max_len)
    throw InputError("forward: sequence length " + std::to_string(ids.size()) + " outside [1, " +
                     std::to_string(c.max_len) + "]");
  for (TermId id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size)
      throw InputError("forward: token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(c.vocab_size));
  for (std::size_t pos : mlm_positions)
    if (pos >= ids.size()) throw InputError("forward: masked position outside the sequence");

  const auto n = static_cast<Eigen::Index>(ids.size());
  const auto dh = static_cast<Eigen::Index>(c.d_model / c.n_heads);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardTrace t;
  t.mode = mode;
  t.ids.assign(ids.begin(), ids.end());
  t.mlm_positions.assign(mlm_positions.begin(), mlm_positions.end());
  t.x0 = embed(p, ids, false);
  t.layers.resize(c.n_layers);
  Mat x = t.x0;
  for (std::size_t li = 0; li < c.n_layers; ++li) {
    const auto& lp = p.layers[li];
    auto& lt = t.layers[li];
    lt.x_in = x;
    layer_norm(x, lp.ln1_gain, lp.ln1_bias, c.layer_norm, lt.a, lt.a_mean, lt.a_rstd);
    lt.q = (lt.a * lp.wq).rowwise() + lp.bq;
    lt.k = (lt.a * lp.wk).rowwise() + lp.bk;
    lt.v = (lt.a * lp.wv).rowwise() + lp.bv;
    lt.ctx.resize(n, lt.v.cols());
    lt.alpha.resize(c.n_heads);
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const auto off = static_cast<Eigen::Index>(h) * dh;
      Mat& alpha = lt.alpha[h];
      if (fixed_alpha && li < fixed_alpha->size() && h < (*fixed_alpha)[li].size() && (*fixed_alpha)[li][h].size() > 0) {
        alpha = (*fixed_alpha)[li][h];
        if (alpha.rows() != n || alpha.cols() != n) throw InputError("forward: fixed attention map has wrong shape");
      } else if (c.uniform_attention) {
        alpha = Mat::Constant(n, n, 1.0 / static_cast<double>(n));
      } else {
        alpha = lt.q.middleCols(off, dh) * lt.k.middleCols(off, dh).transpose() * inv_sqrt_dh;
        softmax_rows(alpha);
      }
      lt.ctx.middleCols(off, dh) = alpha * lt.v.middleCols(off, dh);
    }
    lt.x_mid = x + ((lt.ctx * lp.wo).rowwise() + lp.bo);
    layer_norm(lt.x_mid, lp.ln2_gain, lp.ln2_bias, c.layer_norm, lt.b, lt.b_mean, lt.b_rstd);
    lt.u = (lt.b * lp.w1).rowwise() + lp.b1;
    lt.g = lt.u.unaryExpr([act = c.activation](double u) { return activate(act, u); });
    x = lt.x_mid + ((lt.g * lp.w2).rowwise() + lp.b2);
  }
  t.x_final = x;
  layer_norm(x, p.lnf_gain, p.lnf_bias, c.layer_norm, t.z, t.z_mean, t.z_rstd);
  add_head_outputs(p, t);
  return t;
}

}  // namespace

ForwardTrace forward(const ModelParams& p, std::span<const TermId> ids, ForwardMode mode,
                     std::span<const std::size_t> mlm_positions) {
  return forward_impl(p, ids, mode, mlm_positions, nullptr);
}

ForwardTrace forward_fixed_attention(const ModelParams& p, std::span<const TermId> ids, const AttentionGrads& alpha) {
  if (alpha.size() != p.config.n_layers) throw InputError("forward: fixed attention needs one entry per layer");
  return forward_impl(p, ids, ForwardMode::Classify, {}, &alpha);
}

ForwardTrace forward_reference(const ModelParams& p, const ForwardTrace& in) {
  const auto& c = p.config;
  const auto n = static_cast<Eigen::Index>(in.ids.size());
  const auto dh = static_cast<Eigen::Index>(c.d_model / c.n_heads);

  ForwardTrace t;
  t.mode = in.mode;
  t.ids = in.ids;
  t.mlm_positions = in.mlm_positions;
  t.is_reference = true;
  t.x0 = embed(p, in.ids, true);
  t.layers.resize(c.n_layers);
  Mat x = t.x0;
  for (std::size_t li = 0; li < c.n_layers; ++li) {
    const auto& lp = p.layers[li];
    const auto& src = in.layers[li];
    auto& lt = t.layers[li];
    lt.x_in = x;
    layer_norm(x, lp.ln1_gain, lp.ln1_bias, c.layer_norm, lt.a, lt.a_mean, lt.a_rstd, &src.a_rstd);
    lt.v = (lt.a * lp.wv).rowwise() + lp.bv;
    lt.alpha = src.alpha;
    lt.ctx.resize(n, lt.v.cols());
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const auto off = static_cast<Eigen::Index>(h) * dh;
      lt.ctx.middleCols(off, dh) = lt.alpha[h] * lt.v.middleCols(off, dh);
    }
    lt.x_mid = x + ((lt.ctx * lp.wo).rowwise() + lp.bo);
    layer_norm(lt.x_mid, lp.ln2_gain, lp.ln2_bias, c.layer_norm, lt.b, lt.b_mean, lt.b_rstd, &src.b_rstd);
    lt.u = (lt.b * lp.w1).rowwise() + lp.b1;
    lt.g = lt.u.unaryExpr([act = c.activation](double u) { return activate(act, u); });
    x = lt.x_mid + ((lt.g * lp.w2).rowwise() + lp.b2);
  }
  t.x_final = x;
  layer_norm(x, p.lnf_gain, p.lnf_bias, c.layer_norm, t.z, t.z_mean, t.z_rstd, &in.z_rstd);
  add_head_outputs(p, t);
  t.predicted = in.predicted;
  return t;
}

// ---------------------------------------------------------------------------
// Backward

Mat backward(const ModelParams& p, const ForwardTrace& t, const Mat& dz, const BackwardOptions& o) {
  const auto& c = p.config;
  const bool rescale = o.rule == BackwardRule::Rescale;
  if (rescale && !o.reference) throw ConfigError("rescale backward needs a reference trace");
  ModelParams* G = rescale ? nullptr : o.grads;
  const double s = o.grad_scale;
  const auto n = static_cast<Eigen::Index>(t.ids.size());
  const auto dh = static_cast<Eigen::Index>(c.d_model / c.n_heads);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  if (o.dalpha_out) {
    o.dalpha_out->assign(c.n_layers, std::vector<Mat>(c.n_heads));
  }

  Mat dx = layer_norm_backward(t.x_final, t.z_mean, t.z_rstd, p.lnf_gain, dz, c.layer_norm, rescale,
                               G ? &G->lnf_gain : nullptr, G ? &G->lnf_bias : nullptr, s);

  for (std::size_t li = c.n_layers; li-- > 0;) {
    const auto& lp = p.layers[li];
    const auto& lt = t.layers[li];
    LayerParams* lg = G ? &G->layers[li] : nullptr;

    // feed-forward block
    const Mat& df = dx;
    if (lg) {
      lg->w2 += s * lt.g.transpose() * df;
      lg->b2 += s * df.colwise().sum();
    }
    Mat dg = df * lp.w2.transpose();
    Mat du(dg.rows(), dg.cols());
    if (rescale) {
      const auto& rt = o.reference->layers[li];
      for (Eigen::Index i = 0; i < du.rows(); ++i)
        for (Eigen::Index j = 0; j < du.cols(); ++j) {
          const double delta_u = lt.u(i, j) - rt.u(i, j);
          const double mult = std::abs(delta_u) > kRescaleEps ? (lt.g(i, j) - rt.g(i, j)) / delta_u
                                                               : activate_grad(c.activation, lt.u(i, j));
          du(i, j) = dg(i, j) * mult;
        }
    } else {
      for (Eigen::Index i = 0; i < du.rows(); ++i)
        for (Eigen::Index j = 0; j < du.cols(); ++j) du(i, j) = dg(i, j) * activate_grad(c.activation, lt.u(i, j));
    }
    if (lg) {
      lg->w1 += s * lt.b.transpose() * du;
      lg->b1 += s * du.colwise().sum();
    }
    Mat db = du * lp.w1.transpose();
    Mat dx_mid = dx + layer_norm_backward(lt.x_mid, lt.b_mean, lt.b_rstd, lp.ln2_gain, db, c.layer_norm, rescale,
                                          lg ? &lg->ln2_gain : nullptr, lg ? &lg->ln2_bias : nullptr, s);

    // attention block
    if (lg) {
      lg->wo += s * lt.ctx.transpose() * dx_mid;
      lg->bo += s * dx_mid.colwise().sum();
    }
    Mat dctx = dx_mid * lp.wo.transpose();
    Mat dq = Mat::Zero(n, lt.q.cols() > 0 ? lt.q.cols() : dctx.cols());
    Mat dk = Mat::Zero(n, dq.cols());
    Mat dv = Mat::Zero(n, dctx.cols());
    const bool score_grads = !rescale && !c.uniform_attention;
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const auto off = static_cast<Eigen::Index>(h) * dh;
      const Mat& alpha = lt.alpha[h];
      Mat dalpha = dctx.middleCols(off, dh) * lt.v.middleCols(off, dh).transpose();
      if (o.extra_dalpha) dalpha += (*o.extra_dalpha)[li][h];
      if (o.dalpha_out) (*o.dalpha_out)[li][h] = dalpha;
      dv.middleCols(off, dh) = alpha.transpose() * dctx.middleCols(off, dh);
      if (score_grads) {
        Vec row_dot = (dalpha.array() * alpha.array()).rowwise().sum();
        Mat dscore = (alpha.array() * (dalpha.colwise() - row_dot).array()).matrix() * inv_sqrt_dh;
        dq.middleCols(off, dh) = dscore * lt.k.middleCols(off, dh);
        dk.middleCols(off, dh) = dscore.transpose() * lt.q.middleCols(off, dh);
      }
    }
    Mat da = dv * lp.wv.transpose();
    if (score_grads) da += dq * lp.wq.transpose() + dk * lp.wk.transpose();
    if (lg) {
      lg->wv += s * lt.a.transpose() * dv;
      lg->bv += s * dv.colwise().sum();
      if (score_grads) {
        lg->wq += s * lt.a.transpose() * dq;
        lg->bq += s * dq.colwise().sum();
        lg->wk += s * lt.a.transpose() * dk;
        lg->bk += s * dk.colwise().sum();
      }
    }
    dx = dx_mid + layer_norm_backward(lt.x_in, lt.a_mean, lt.a_rstd, lp.ln1_gain, da, c.layer_norm, rescale,
                                      lg ? &lg->ln1_gain : nullptr, lg ? &lg->ln1_bias : nullptr, s);
  }

  if (G) {
    for (Eigen::Index i = 0; i < n; ++i) {
      G->token_emb.row(t.ids[static_cast<std::size_t>(i)]) += s * dx.row(i);
      G->pos_emb.row(i) += s * dx.row(i);
    }
  }
  return dx;
}

Mat backward_classify(const ModelParams& p, const ForwardTrace& t, const Vec& dlogits, const BackwardOptions& o) {
  if (t.mode != ForwardMode::Classify) throw ConfigError("backward_classify needs a classify-mode trace");
  ModelParams* G = o.rule == BackwardRule::Gradient ? o.grads : nullptr;
  const RowVec dl = dlogits.transpose();
  if (G) {
    G->cls_w += o.grad_scale * t.z.row(0).transpose() * dl;
    G->cls_b += o.grad_scale * dl;
  }
  Mat dz = Mat::Zero(t.z.rows(), t.z.cols());
  dz.row(0) = dl * p.cls_w.transpose();
  return backward(p, t, dz, o);
}

Mat backward_mlm(const ModelParams& p, const ForwardTrace& t, const Mat& dlogits, const BackwardOptions& o) {
  if (t.mode != ForwardMode::Mlm) throw ConfigError("backward_mlm needs an mlm-mode trace");
  ModelParams* G = o.rule == BackwardRule::Gradient ? o.grads : nullptr;
  Mat dz = Mat::Zero(t.z.rows(), t.z.cols());
  for (std::size_t r = 0; r < t.mlm_positions.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    const auto pos = static_cast<Eigen::Index>(t.mlm_positions[r]);
    dz.row(pos) += dlogits.row(row) * p.mlm_w.transpose();
    if (G) {
      G->mlm_w += o.grad_scale * t.z.row(pos).transpose() * dlogits.row(row);
      G->mlm_b += o.grad_scale * dlogits.row(row);
    }
  }
  return backward(p, t, dz, o);
}

double cross_entropy(const Vec& logits, int target, Vec* dlogits) {
  const double mx = logits.maxCoeff();
  Vec e = (logits.array() - mx).exp();
  const double sum = e.sum();
  const double loss = -(logits(target) - mx - std::log(sum));
  if (dlogits) {
    *dlogits = e / sum;
    (*dlogits)(target) -= 1.0;
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Checkpoints: a text dump with a versioned header, the producing config and
// one shape-prefixed block per tensor. Values use 17 significant digits so a
// reload is bit-exact.

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint: " + path.string());
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  for (const auto& [k, v] : params.config.to_map()) out << "config " << k << ' ' << v << '\n';
  char buf[40];
  for (const auto& t : const_cast<ModelParams&>(params).tensors()) {
    out << "tensor " << t.name << ' ' << t.rows << ' ' << t.cols << '\n';
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", t.data[i]);
      out << buf << ((i + 1) % 8 == 0 || i + 1 == t.data.size() ? '\n' : ' ');
    }
  }
  if (!out) throw InputError("failed while writing checkpoint: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path, const EncoderConfig* expected) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open checkpoint: " + path.string());
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kCheckpointMagic || version != kCheckpointVersion)
    throw InputError(path.string() + ": not a version " + std::to_string(kCheckpointVersion) + " checkpoint");

  KeyValues kv;
  std::string word;
  while (in >> word && word == "config") {
    std::string k, v;
    in >> k >> v;
    kv[k] = v;
  }
  const EncoderConfig config = EncoderConfig::from_map(kv);
  if (expected && !(*expected == config))
    throw ConfigError(path.string() + ": checkpoint config does not match the requested encoder config");

  ModelParams p = ModelParams::zeros(config);
  for (auto& t : p.tensors()) {
    std::string name;
    std::size_t rows = 0, cols = 0;
    if (word != "tensor" || !(in >> name >> rows >> cols) || name != t.name || rows != t.rows || cols != t.cols)
      throw InputError(path.string() + ": tensor header mismatch at " + t.name);
    for (double& v : t.data)
      if (!(in >> v)) throw InputError(path.string() + ": truncated tensor " + t.name);
    word.clear();
    in >> word;
  }
  return p;
}

}  // namespace attrda
