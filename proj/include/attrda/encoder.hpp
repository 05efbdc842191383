// SPDX-License-Identifier: Apache-2.0
//
// A small pre-LN transformer encoder in double precision with hand-written
// reverse-mode gradients. The same backward sweep also runs in "rescale"
// mode, producing DeepLIFT multipliers against a zero-token-embedding
// reference, and can expose or receive gradients on the attention maps.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "attrda/common.hpp"
#include "attrda/config.hpp"

namespace attrda {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;
using Vec = Eigen::VectorXd;

enum class Activation { Gelu, Relu, Identity };
std::string_view to_string(Activation a);

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t max_len = 128;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 128;
  Activation activation = Activation::Gelu;
  bool layer_norm = true;
  bool uniform_attention = false;  // attention fixed to 1/n; used by linear test models
  double embedding_std = 0.1;

  void validate() const;
  KeyValues to_map() const;
  // Applies recognised keys on top of `base`; unknown keys are an error.
  static EncoderConfig from_map(const KeyValues& kv, EncoderConfig base);
  static EncoderConfig from_map(const KeyValues& kv) { return from_map(kv, EncoderConfig{}); }
  bool operator==(const EncoderConfig&) const = default;
};

struct LayerParams {
  Mat wq, wk, wv, wo;
  RowVec bq, bk, bv, bo;
  RowVec ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Mat w1, w2;
  RowVec b1, b2;
};

struct TensorView {
  std::string name;
  std::span<double> data;
  std::size_t rows = 0, cols = 0;
};

struct ModelParams {
  EncoderConfig config;
  Mat token_emb;  // vocab x d
  Mat pos_emb;    // max_len x d
  std::vector<LayerParams> layers;
  RowVec lnf_gain, lnf_bias;
  Mat cls_w;  // d x 2
  RowVec cls_b;
  Mat mlm_w;  // d x vocab
  RowVec mlm_b;

  static ModelParams init(const EncoderConfig& config, std::uint64_t seed);
  static ModelParams zeros(const EncoderConfig& config);

  // Every tensor in a fixed order; views alias this object's storage.
  std::vector<TensorView> tensors();
  std::size_t num_parameters() const;
  void set_zero();
  void add_scaled(const ModelParams& other, double scale);
  bool all_finite() const;
  // Name of the first tensor holding a non-finite value, or empty.
  std::string first_non_finite() const;
};

struct LayerTrace {
  Mat x_in;
  Mat a;  // after first layer norm
  Vec a_mean, a_rstd;
  Mat q, k, v;
  std::vector<Mat> alpha;  // per head, n x n, rows sum to 1
  Mat ctx;
  Mat x_mid;
  Mat b;  // after second layer norm
  Vec b_mean, b_rstd;
  Mat u, g;  // feed-forward pre/post activation
};

enum class ForwardMode { Classify, Mlm };

struct ForwardTrace {
  ForwardMode mode = ForwardMode::Classify;
  std::vector<TermId> ids;
  Mat x0;
  std::vector<LayerTrace> layers;
  Mat x_final;
  Mat z;  // final layer norm output
  Vec z_mean, z_rstd;
  Vec logits;         // classify: 2 class logits
  int predicted = 0;  // argmax, first index on ties
  Mat mlm_logits;     // mlm: one row per requested position
  std::vector<std::size_t> mlm_positions;
  bool is_reference = false;
};

using AttentionGrads = std::vector<std::vector<Mat>>;  // [layer][head], n x n

ForwardTrace forward(const ModelParams& params, std::span<const TermId> ids, ForwardMode mode = ForwardMode::Classify,
                     std::span<const std::size_t> mlm_positions = {});

// Classify-mode pass with the attention maps supplied instead of computed.
// Missing or empty maps are computed as usual.
ForwardTrace forward_fixed_attention(const ModelParams& params, std::span<const TermId> ids,
                                     const AttentionGrads& alpha);

// DeepLIFT reference pass: token embeddings replaced by zeros, attention maps
// and layer-norm scales frozen at their values on `input`.
ForwardTrace forward_reference(const ModelParams& params, const ForwardTrace& input);

enum class BackwardRule { Gradient, Rescale };

struct BackwardOptions {
  BackwardRule rule = BackwardRule::Gradient;
  const ForwardTrace* reference = nullptr;       // required for Rescale
  const AttentionGrads* extra_dalpha = nullptr;  // injected dL/d(alpha)
  AttentionGrads* dalpha_out = nullptr;          // receives dL/d(alpha)
  ModelParams* grads = nullptr;                  // accumulates parameter gradients
  double grad_scale = 1.0;
};

// Back-propagates dL/dz (final layer-norm output, n x d). Returns dL/dx0, the
// gradient (or multiplier) on the summed token+position embeddings.
Mat backward(const ModelParams& params, const ForwardTrace& trace, const Mat& dz, const BackwardOptions& options);

// Head-aware wrappers: classification logits and MLM position logits.
Mat backward_classify(const ModelParams& params, const ForwardTrace& trace, const Vec& dlogits,
                      const BackwardOptions& options);
Mat backward_mlm(const ModelParams& params, const ForwardTrace& trace, const Mat& dlogits,
                 const BackwardOptions& options);

// Softmax cross-entropy of a logit vector; gradient written to dlogits when given.
double cross_entropy(const Vec& logits, int target, Vec* dlogits = nullptr);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
// Throws ConfigError when `expected` is given and differs from the stored config.
ModelParams load_checkpoint(const std::filesystem::path& path, const EncoderConfig* expected = nullptr);

}  // namespace attrda
