// SPDX-License-Identifier: Apache-2.0
#include "attrda/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace attrda {

std::vector<Example> make_examples(const std::vector<Document>& docs, const Vocabulary& vocab, std::size_t max_len) {
  std::vector<Example> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    Example e;
    e.ids = encode(d, vocab, max_len);
    e.label = d.label ? class_index(*d.label) : -1;
    e.doc_id = d.id;
    out.push_back(std::move(e));
  }
  return out;
}

AdamW::AdamW(const EncoderConfig& shape, AdamWConfig config)
    : config_(config), m_(ModelParams::zeros(shape)), v_(ModelParams::zeros(shape)) {}

void AdamW::step(ModelParams& params, const ModelParams& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  auto p = params.tensors();
  auto g = const_cast<ModelParams&>(grads).tensors();
  auto m = m_.tensors();
  auto v = v_.tensors();
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto& pd = p[k].data;
    const auto& gd = g[k].data;
    auto& md = m[k].data;
    auto& vd = v[k].data;
    for (std::size_t i = 0; i < pd.size(); ++i) {
      md[i] = config_.beta1 * md[i] + (1.0 - config_.beta1) * gd[i];
      vd[i] = config_.beta2 * vd[i] + (1.0 - config_.beta2) * gd[i] * gd[i];
      const double mhat = md[i] / bc1;
      const double vhat = vd[i] / bc2;
      pd[i] -= config_.learning_rate * (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * pd[i]);
    }
  }
}

bool Penalty::active() const {
  return lambda != 0.0 && std::any_of(terms.begin(), terms.end(), [](char c) { return c != 0; });
}

std::vector<char> Penalty::mask_for(const std::vector<TermId>& ids, std::size_t vocab_size) {
  std::vector<char> mask(vocab_size, 0);
  for (TermId id : ids)
    if (id >= 0 && static_cast<std::size_t>(id) < vocab_size) mask[static_cast<std::size_t>(id)] = 1;
  return mask;
}

namespace {

BatchLoss run_classification(const ModelParams& params, std::span<const Example> batch, const Penalty* penalty,
                             ModelParams* grads) {
  BatchLoss out;
  if (batch.empty()) return out;
  if (grads) grads->set_zero();
  double wsum = 0.0;
  for (const auto& e : batch) wsum += e.weight;
  const bool penalize = penalty && penalty->active();
  for (const auto& e : batch) {
    if (e.label < 0) throw InputError("fine-tuning example " + std::to_string(e.doc_id) + " has no label");
    const ForwardTrace trace = forward(params, e.ids);
    Vec dlogits;
    const double ce = cross_entropy(trace.logits, e.label, &dlogits);
    if (trace.predicted == e.label) ++out.correct;
    out.cross_entropy += e.weight * ce / wsum;
    if (grads) {
      BackwardOptions o;
      o.grads = grads;
      o.grad_scale = e.weight / wsum;
      backward_classify(params, trace, dlogits, o);
    }
    if (penalize) {
      const auto r = attribution_loss(params, trace, penalty->terms, penalty->method, penalty->options, grads,
                                      penalty->lambda * e.weight);
      out.attribution += e.weight * r.value;
      out.penalized_occurrences += r.occurrences;
    }
  }
  out.total = out.cross_entropy + (penalize ? penalty->lambda * out.attribution : 0.0);
  if (grads) {
    const auto bad = grads->first_non_finite();
    if (!bad.empty()) throw NumericError("non-finite gradient in tensor " + bad);
  }
  return out;
}

double run_mlm(const ModelParams& params, std::span<const MaskedInstance> batch, ModelParams* grads) {
  if (batch.empty()) return 0.0;
  if (grads) grads->set_zero();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& inst : batch) {
    const ForwardTrace trace = forward(params, inst.input, ForwardMode::Mlm, inst.positions);
    const double inv_m = 1.0 / static_cast<double>(inst.positions.size());
    Mat dlogits(trace.mlm_logits.rows(), trace.mlm_logits.cols());
    for (std::size_t r = 0; r < inst.positions.size(); ++r) {
      Vec d;
      const auto row = static_cast<Eigen::Index>(r);
      loss += inv_b * inv_m * cross_entropy(trace.mlm_logits.row(row).transpose(), inst.targets[r], &d);
      dlogits.row(row) = d.transpose() * inv_m;
    }
    if (grads) {
      BackwardOptions o;
      o.grads = grads;
      o.grad_scale = inv_b;
      backward_mlm(params, trace, dlogits, o);
    }
  }
  if (grads) {
    const auto bad = grads->first_non_finite();
    if (!bad.empty()) throw NumericError("non-finite gradient in tensor " + bad);
  }
  return loss;
}

}  // namespace

BatchLoss classification_gradient(const ModelParams& params, std::span<const Example> batch, const Penalty* penalty,
                                  ModelParams& grads) {
  return run_classification(params, batch, penalty, &grads);
}

BatchLoss classification_loss(const ModelParams& params, std::span<const Example> batch, const Penalty* penalty) {
  return run_classification(params, batch, penalty, nullptr);
}

MaskedInstance mask_instance(std::span<const TermId> ids, std::size_t vocab_size, double mask_prob,
                             std::mt19937_64& rng) {
  MaskedInstance m;
  m.input.assign(ids.begin(), ids.end());
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] >= Vocabulary::kFirstTerm || ids[i] == Vocabulary::kUnk) candidates.push_back(i);
  if (candidates.empty()) return m;
  const auto want = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(mask_prob * static_cast<double>(candidates.size()))));
  std::shuffle(candidates.begin(), candidates.end(), rng);
  candidates.resize(std::min(want, candidates.size()));
  std::sort(candidates.begin(), candidates.end());

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<TermId> any_term(Vocabulary::kFirstTerm, static_cast<TermId>(vocab_size) - 1);
  for (std::size_t pos : candidates) {
    m.positions.push_back(pos);
    m.targets.push_back(ids[pos]);
    const double r = unit(rng);
    if (r < 0.8) m.input[pos] = Vocabulary::kMask;
    else if (r < 0.9) m.input[pos] = any_term(rng);
  }
  return m;
}

double mlm_gradient(const ModelParams& params, std::span<const MaskedInstance> batch, ModelParams& grads) {
  return run_mlm(params, batch, &grads);
}

double mlm_loss(const ModelParams& params, std::span<const MaskedInstance> batch) {
  return run_mlm(params, batch, nullptr);
}

ModelParams mlm_pretrain(ModelParams params, const std::vector<std::vector<TermId>>& sequences,
                         const MlmConfig& config, std::uint64_t seed, MlmStats* stats) {
  if (config.batch_size == 0) throw ConfigError("mlm.batch_size must be positive");
  std::mt19937_64 rng(seed);
  AdamW opt(params.config, {config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
  ModelParams grads = ModelParams::zeros(params.config);
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    std::vector<MaskedInstance> batch;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + config.batch_size); ++k) {
        auto m = mask_instance(sequences[order[k]], params.config.vocab_size, config.mask_prob, rng);
        if (!m.positions.empty()) batch.push_back(std::move(m));
      }
      if (batch.empty()) continue;
      const double loss = mlm_gradient(params, batch, grads);
      if (!std::isfinite(loss))
        throw NumericError("non-finite MLM loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batches));
      opt.step(params, grads);
      total += loss;
      ++batches;
    }
    if (stats) stats->epoch_loss.push_back(batches ? total / static_cast<double>(batches) : 0.0);
  }
  return params;
}

EpochStats fine_tune_epoch(ModelParams& params, AdamW& optimizer, const std::vector<Example>& data,
                           const Penalty* penalty, std::size_t batch_size, std::mt19937_64& rng) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  ModelParams grads = ModelParams::zeros(params.config);
  EpochStats stats;
  std::size_t batches = 0, correct = 0;
  std::vector<Example> batch;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    batch.clear();
    for (std::size_t k = start; k < std::min(order.size(), start + batch_size); ++k) batch.push_back(data[order[k]]);
    const BatchLoss loss = classification_gradient(params, batch, penalty, grads);
    if (!std::isfinite(loss.total))
      throw NumericError("non-finite training loss at batch " + std::to_string(batches));
    optimizer.step(params, grads);
    stats.mean_cross_entropy += loss.cross_entropy;
    stats.mean_attribution += loss.attribution;
    stats.penalized_occurrences += loss.penalized_occurrences;
    correct += loss.correct;
    ++batches;
  }
  if (batches) {
    stats.mean_cross_entropy /= static_cast<double>(batches);
    stats.mean_attribution /= static_cast<double>(batches);
  }
  stats.train_accuracy = data.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(data.size());
  return stats;
}

int predict_one(const ModelParams& params, std::span<const TermId> ids) { return forward(params, ids).predicted; }

std::vector<int> predict(const ModelParams& params, std::span<const Example> data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& e : data) out.push_back(predict_one(params, e.ids));
  return out;
}

}  // namespace attrda
