// SPDX-License-Identifier: Apache-2.0
//
// Optimisation for the encoder: AdamW, masked-language-model pretraining on
// unlabeled text, and supervised fine-tuning with an optional attribution
// penalty on a set of terms.
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "attrda/attribution.hpp"
#include "attrda/corpus.hpp"
#include "attrda/encoder.hpp"
#include "attrda/text.hpp"

namespace attrda {

struct Example {
  std::vector<TermId> ids;
  int label = 0;
  DocId doc_id = 0;
  double weight = 1.0;
};

std::vector<Example> make_examples(const std::vector<Document>& docs, const Vocabulary& vocab, std::size_t max_len);

struct AdamWConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

class AdamW {
public:
  AdamW(const EncoderConfig& shape, AdamWConfig config);
  void step(ModelParams& params, const ModelParams& grads);
  std::size_t steps() const { return t_; }
  const AdamWConfig& config() const { return config_; }

private:
  AdamWConfig config_;
  ModelParams m_, v_;
  std::size_t t_ = 0;
};

// Terms flagged for penalisation, indexed by term id.
struct Penalty {
  std::vector<char> terms;
  double lambda = 0.0;
  AttributionMethod method = AttributionMethod::DeepLift;
  AttributionOptions options;

  bool active() const;
  static std::vector<char> mask_for(const std::vector<TermId>& ids, std::size_t vocab_size);
};

struct BatchLoss {
  double cross_entropy = 0.0;  // weighted mean over the batch
  double attribution = 0.0;    // weighted sum over penalised occurrences
  double total = 0.0;          // cross_entropy + lambda * attribution
  std::size_t penalized_occurrences = 0;
  std::size_t correct = 0;  // predictions made before the update
};

// Gradient of the composite loss over a batch, written to `grads` (zeroed first).
// Throws NumericError naming the first non-finite gradient tensor.
BatchLoss classification_gradient(const ModelParams& params, std::span<const Example> batch, const Penalty* penalty,
                                  ModelParams& grads);
BatchLoss classification_loss(const ModelParams& params, std::span<const Example> batch, const Penalty* penalty);

struct MaskedInstance {
  std::vector<TermId> input;
  std::vector<std::size_t> positions;
  std::vector<TermId> targets;
};

// Masks max(1, round(p * (n-1))) non-[CLS] positions: 80% [MASK], 10% a
// random corpus term, 10% unchanged.
MaskedInstance mask_instance(std::span<const TermId> ids, std::size_t vocab_size, double mask_prob,
                             std::mt19937_64& rng);

double mlm_gradient(const ModelParams& params, std::span<const MaskedInstance> batch, ModelParams& grads);
double mlm_loss(const ModelParams& params, std::span<const MaskedInstance> batch);

struct MlmConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 6;
  std::size_t batch_size = 8;
  double mask_prob = 0.15;
  double weight_decay = 1e-4;
};

struct MlmStats {
  std::vector<double> epoch_loss;
};

ModelParams mlm_pretrain(ModelParams params, const std::vector<std::vector<TermId>>& sequences,
                         const MlmConfig& config, std::uint64_t seed, MlmStats* stats = nullptr);

struct EpochStats {
  double mean_cross_entropy = 0.0;
  double mean_attribution = 0.0;  // per batch
  double train_accuracy = 0.0;    // pre-update predictions, accumulated over the pass
  std::size_t penalized_occurrences = 0;
};

// One shuffled pass over `data`.
EpochStats fine_tune_epoch(ModelParams& params, AdamW& optimizer, const std::vector<Example>& data,
                           const Penalty* penalty, std::size_t batch_size, std::mt19937_64& rng);

std::vector<int> predict(const ModelParams& params, std::span<const Example> data);
int predict_one(const ModelParams& params, std::span<const TermId> ids);

}  // namespace attrda
