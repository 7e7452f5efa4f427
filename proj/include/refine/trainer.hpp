#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "refine/corpus.hpp"
#include "refine/encoder.hpp"
#include "refine/errors.hpp"
#include "refine/parallel.hpp"
#include "refine/rng.hpp"
#include "refine/vectorstore.hpp"

namespace refine {

enum class TrainMode { vanilla, finetune, refine, cocktail };

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "vanilla") return TrainMode::vanilla;
  if (s == "finetune") return TrainMode::finetune;
  if (s == "refine") return TrainMode::refine;
  if (s == "cocktail") return TrainMode::cocktail;
  throw ValidationError("unknown train mode '" + s +
                        "' (expected vanilla, finetune, refine, cocktail)");
}

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::vanilla: return "vanilla";
    case TrainMode::finetune: return "finetune";
    case TrainMode::refine: return "refine";
    case TrainMode::cocktail: return "cocktail";
  }
  throw ValidationError("unknown train mode value");
}

struct TrainConfig {
  double learning_rate = 1e-3;
  double temperature = 0.05;
  double lambda = 0.35;        // fusion weight used when mode == refine
  int grad_accum_steps = 4;    // micro-batches folded into one update
  int epochs = 30;
  int batch_size = 8;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::refine;
  double cocktail_merge_weight = 0.65;
  unsigned threads = 1;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("train: learning_rate must be > 0");
    if (!(temperature > 0.0)) throw ValidationError("train: temperature must be > 0");
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
      throw ValidationError("train: lambda must be in [0, 1]");
    }
    if (grad_accum_steps < 1) throw ValidationError("train: grad_accum_steps must be >= 1");
    if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
    if (!(cocktail_merge_weight >= 0.0 && cocktail_merge_weight <= 1.0)) {
      throw ValidationError("train: cocktail_merge_weight must be in [0, 1]");
    }
  }
};

struct HeadGradients {
  std::size_t dimension = 0;
  std::vector<double> weight;  // row-major, same layout as TrainableHead
  std::vector<double> bias;

  explicit HeadGradients(std::size_t d = 0)
      : dimension(d), weight(d * d, 0.0), bias(d, 0.0) {}

  void add(const HeadGradients& other) {
    for (std::size_t i = 0; i < weight.size(); ++i) weight[i] += other.weight[i];
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] += other.bias[i];
  }

  void scale(double s) {
    for (double& v : weight) v *= s;
    for (double& v : bias) v *= s;
  }

  double l2_norm() const {
    double acc = 0.0;
    for (double v : weight) acc += v * v;
    for (double v : bias) acc += v * v;
    return std::sqrt(acc);
  }
};

// With cosine similarities bounded by [-1, 1], the per-triple loss can never
// exceed log(1 + m * e^(2 / tau)); anything above that means the arithmetic
// broke down.
inline double loss_upper_bound(std::size_t num_negatives, double temperature) {
  if (num_negatives == 0) return 0.0;
  const double z = 2.0 / temperature;
  if (z > 600.0) return z + std::log(static_cast<double>(num_negatives));
  return std::log1p(static_cast<double>(num_negatives) * std::exp(z));
}

namespace detail {

// d(cos)/d(numerator-side vector a) for c = dot(a, b) / (|a| |b|):
// b / (|a| |b|) - c * a / |a|^2, accumulated into out with weight g.
inline void add_cosine_grad(double g, double c, const EmbeddingVector& a, double norm_a,
                            const EmbeddingVector& b, double norm_b, EmbeddingVector& out) {
  const double inv_ab = 1.0 / (norm_a * norm_b);
  const double inv_aa = c / (norm_a * norm_a);
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] += g * (b[i] * inv_ab - a[i] * inv_aa);
  }
}

}  // namespace detail

// Contrastive loss of one (query, positive, negatives...) triple over frozen
// vectors, with analytic gradients of the linear head parameters. The fused
// embedding is lambda * (W x + b) + (1 - lambda) * x; similarities are
// cosines scaled by 1 / temperature; the loss is softmax cross-entropy with
// the positive as the target, computed with max-subtraction so large logits
// cannot overflow. With no negatives the softmax is a certainty, so the loss
// and every gradient are exactly zero.
inline double triple_loss_frozen(const EmbeddingVector& query, const EmbeddingVector& positive,
                                 const std::vector<EmbeddingVector>& negatives,
                                 const TrainableHead& head, double lambda, double temperature,
                                 HeadGradients* grads = nullptr) {
  head.validate();
  if (head.tanh_output) {
    throw ValidationError("triple_loss_frozen: tanh-output heads are not trainable");
  }
  if (!(temperature > 0.0)) throw ValidationError("triple_loss_frozen: temperature must be > 0");
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ValidationError("triple_loss_frozen: lambda must be in [0, 1]");
  }
  const std::size_t d = head.dimension;
  if (query.size() != d || positive.size() != d) {
    throw ValidationError("triple_loss_frozen: dimension mismatch");
  }
  for (const auto& n : negatives) {
    if (n.size() != d) throw ValidationError("triple_loss_frozen: dimension mismatch");
  }

  auto fused = [&](const EmbeddingVector& x) {
    EmbeddingVector t = apply_head(head, x);
    for (std::size_t i = 0; i < d; ++i) t[i] = lambda * t[i] + (1.0 - lambda) * x[i];
    return t;
  };

  const EmbeddingVector u = fused(query);
  const double norm_u = norm(u);
  if (!(norm_u > 0.0) || !std::isfinite(norm_u)) {
    throw NumericError("triple_loss_frozen: degenerate fused query vector");
  }

  // Candidate 0 is the positive; the rest are negatives in input order.
  const std::size_t n_cand = 1 + negatives.size();
  std::vector<EmbeddingVector> v(n_cand);
  std::vector<double> norm_v(n_cand), cosines(n_cand), logits(n_cand);
  for (std::size_t j = 0; j < n_cand; ++j) {
    const EmbeddingVector& x = (j == 0) ? positive : negatives[j - 1];
    v[j] = fused(x);
    norm_v[j] = norm(v[j]);
    if (!(norm_v[j] > 0.0) || !std::isfinite(norm_v[j])) {
      throw NumericError("triple_loss_frozen: degenerate fused candidate vector");
    }
    cosines[j] = dot(u, v[j]) / (norm_u * norm_v[j]);
    logits[j] = cosines[j] / temperature;
  }

  const double max_logit = *std::max_element(logits.begin(), logits.end());
  double sum_exp = 0.0;
  std::vector<double> softmax(n_cand);
  for (std::size_t j = 0; j < n_cand; ++j) {
    softmax[j] = std::exp(logits[j] - max_logit);
    sum_exp += softmax[j];
  }
  for (double& p : softmax) p /= sum_exp;
  const double loss = (max_logit - logits[0]) + std::log(sum_exp);
  if (!std::isfinite(loss)) throw NumericError("triple_loss_frozen: non-finite loss");

  if (grads) {
    if (grads->dimension != d) *grads = HeadGradients(d);
    // d(loss)/d(cosine_j) = (softmax_j - [j == 0]) / temperature. The chain
    // through the fusion contributes lambda times the raw input on the W
    // side and lambda itself on the bias side; the frozen term carries no
    // parameters.
    EmbeddingVector dloss_du(d, 0.0);
    for (std::size_t j = 0; j < n_cand; ++j) {
      const double g = (softmax[j] - (j == 0 ? 1.0 : 0.0)) / temperature;
      detail::add_cosine_grad(g, cosines[j], u, norm_u, v[j], norm_v[j], dloss_du);

      EmbeddingVector dloss_dv(d, 0.0);
      detail::add_cosine_grad(g, cosines[j], v[j], norm_v[j], u, norm_u, dloss_dv);
      const EmbeddingVector& x = (j == 0) ? positive : negatives[j - 1];
      for (std::size_t r = 0; r < d; ++r) {
        const double gr = lambda * dloss_dv[r];
        double* row = grads->weight.data() + r * d;
        for (std::size_t c = 0; c < d; ++c) row[c] += gr * x[c];
        grads->bias[r] += gr;
      }
    }
    for (std::size_t r = 0; r < d; ++r) {
      const double gr = lambda * dloss_du[r];
      double* row = grads->weight.data() + r * d;
      for (std::size_t c = 0; c < d; ++c) row[c] += gr * query[c];
      grads->bias[r] += gr;
    }
    for (double g : grads->weight) {
      if (!std::isfinite(g)) throw NumericError("triple_loss_frozen: non-finite gradient");
    }
    for (double g : grads->bias) {
      if (!std::isfinite(g)) throw NumericError("triple_loss_frozen: non-finite gradient");
    }
  }
  return loss;
}

// Text-level convenience wrapper: featurize, then score the frozen vectors.
inline double triple_loss(const std::string& query_text, const std::string& positive_text,
                          const std::vector<std::string>& negative_texts,
                          const FrozenFeaturizer& featurizer, const TrainableHead& head,
                          double lambda, double temperature, HeadGradients* grads = nullptr) {
  EmbeddingVector q = featurize(query_text, featurizer);
  EmbeddingVector p = featurize(positive_text, featurizer);
  std::vector<EmbeddingVector> negs;
  negs.reserve(negative_texts.size());
  for (const auto& t : negative_texts) negs.push_back(featurize(t, featurizer));
  return triple_loss_frozen(q, p, negs, head, lambda, temperature, grads);
}

// Frozen vectors for one triple, resolved from document ids once up front so
// the epoch loop never re-featurizes text.
struct TripleVectors {
  EmbeddingVector query;
  EmbeddingVector positive;
  std::vector<EmbeddingVector> negatives;
};

inline std::vector<TripleVectors> freeze_triples(const std::vector<TrainingTriple>& triples,
                                                 const std::vector<Document>& docs,
                                                 const FrozenFeaturizer& featurizer,
                                                 unsigned threads = 1) {
  std::vector<EmbeddingVector> doc_vecs(docs.size());
  parallel_for(docs.size(), threads,
               [&](std::size_t i) { doc_vecs[i] = featurize(docs[i].text, featurizer); });
  std::unordered_map<std::string, std::size_t> doc_index;
  for (std::size_t i = 0; i < docs.size(); ++i) doc_index.emplace(docs[i].id, i);

  auto lookup = [&](const std::string& id) -> const EmbeddingVector& {
    auto it = doc_index.find(id);
    if (it == doc_index.end()) {
      throw ValidationError("freeze_triples: document '" + id + "' not in corpus");
    }
    return doc_vecs[it->second];
  };

  std::vector<TripleVectors> out(triples.size());
  parallel_for(triples.size(), threads, [&](std::size_t i) {
    const TrainingTriple& t = triples[i];
    out[i].query = featurize(t.query.text, featurizer);
    out[i].positive = lookup(t.positive_doc_id);
    out[i].negatives.reserve(t.negative_doc_ids.size());
    for (const auto& id : t.negative_doc_ids) out[i].negatives.push_back(lookup(id));
  });
  return out;
}

struct DatasetLoss {
  double mean = 0.0;
  std::vector<double> per_triple;  // indexed like the input triples
};

inline DatasetLoss dataset_loss(const std::vector<TripleVectors>& frozen,
                                const TrainableHead& head, double lambda, double temperature,
                                unsigned threads = 1) {
  if (frozen.empty()) throw ValidationError("dataset_loss: no triples");
  DatasetLoss out;
  out.per_triple.resize(frozen.size());
  parallel_for(frozen.size(), threads, [&](std::size_t i) {
    out.per_triple[i] = triple_loss_frozen(frozen[i].query, frozen[i].positive,
                                           frozen[i].negatives, head, lambda, temperature);
  });
  out.mean = std::accumulate(out.per_triple.begin(), out.per_triple.end(), 0.0) /
             static_cast<double>(frozen.size());
  return out;
}

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double update_norm = 0.0;  // mean L2 norm of the applied parameter updates
  std::size_t updates = 0;
};

struct TrainResult {
  TrainableHead head;
  TrainMode mode = TrainMode::refine;
  double lambda_inference = 0.0;  // fusion weight the checkpoint should embed with
  std::vector<EpochStats> history;
};

inline json history_to_json(const TrainResult& result) {
  json epochs = json::array();
  for (const auto& e : result.history) {
    epochs.push_back(json{{"epoch", e.epoch},
                          {"mean_loss", e.mean_loss},
                          {"update_norm", e.update_norm},
                          {"updates", e.updates}});
  }
  return json{{"mode", to_string(result.mode)},
              {"lambda_inference", result.lambda_inference},
              {"epochs", epochs}};
}

// SGD over the head parameters with gradient accumulation. Per-triple
// gradients inside a micro-batch are computed in parallel into per-slot
// buffers and reduced in slot order, so results do not depend on thread
// scheduling. Triple order is reshuffled every epoch from (seed, epoch)
// alone; the mode never feeds the RNG, so two modes with the same effective
// fusion weight walk bit-identical trajectories.
inline TrainResult train(const std::vector<TrainingTriple>& triples,
                         const std::vector<Document>& docs, const FrozenFeaturizer& featurizer,
                         const TrainConfig& cfg) {
  cfg.validate();
  featurizer.validate();

  TrainResult result;
  result.mode = cfg.mode;
  result.head = TrainableHead::identity(featurizer.dimension);
  if (cfg.mode == TrainMode::vanilla) {
    result.lambda_inference = 0.0;
    return result;
  }
  if (triples.empty()) throw ValidationError("train: no training triples");

  // finetune and cocktail train the head as the whole representation; refine
  // trains it under the configured fusion weight.
  const double lambda = (cfg.mode == TrainMode::refine) ? cfg.lambda : 1.0;
  const std::vector<TripleVectors> frozen = freeze_triples(triples, docs, featurizer, cfg.threads);

  std::size_t max_negatives = 0;
  for (const auto& t : frozen) max_negatives = std::max(max_negatives, t.negatives.size());
  const double bound = loss_upper_bound(max_negatives, cfg.temperature) + 1e-6;

  const std::size_t d = featurizer.dimension;
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order(frozen.size());
  std::iota(order.begin(), order.end(), 0);

  std::size_t micro_step = 0;
  HeadGradients pending(d);
  std::size_t pending_count = 0;
  int pending_batches = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(hash_combine(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    double epoch_loss = 0.0;
    double epoch_update_norm = 0.0;
    std::size_t epoch_updates = 0;

    auto apply_update = [&]() {
      pending.scale(cfg.learning_rate / static_cast<double>(pending_count));
      for (std::size_t i = 0; i < d * d; ++i) result.head.weight[i] -= pending.weight[i];
      for (std::size_t i = 0; i < d; ++i) result.head.bias[i] -= pending.bias[i];
      epoch_update_norm += pending.l2_norm();
      ++epoch_updates;
      pending = HeadGradients(d);
      pending_count = 0;
      pending_batches = 0;
      for (double w : result.head.weight) {
        if (!std::isfinite(w)) {
          throw DivergenceError("train: non-finite head weight after update at micro-step " +
                                    std::to_string(micro_step),
                                micro_step);
        }
      }
    };

    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t count = std::min(batch, order.size() - start);
      std::vector<double> losses(count);
      std::vector<HeadGradients> slot_grads(count, HeadGradients(d));
      try {
        parallel_for(count, cfg.threads, [&](std::size_t s) {
          const TripleVectors& t = frozen[order[start + s]];
          losses[s] = triple_loss_frozen(t.query, t.positive, t.negatives, result.head, lambda,
                                         cfg.temperature, &slot_grads[s]);
        });
      } catch (const NumericError& e) {
        throw DivergenceError(std::string("train: ") + e.what() + " at micro-step " +
                                  std::to_string(micro_step),
                              micro_step);
      }
      for (std::size_t s = 0; s < count; ++s) {
        if (losses[s] > bound) {
          throw DivergenceError("train: loss " + std::to_string(losses[s]) +
                                    " exceeds the cosine-similarity bound at micro-step " +
                                    std::to_string(micro_step),
                                micro_step);
        }
        epoch_loss += losses[s];
        pending.add(slot_grads[s]);
      }
      pending_count += count;
      ++pending_batches;
      ++micro_step;
      if (pending_batches == cfg.grad_accum_steps) apply_update();
    }
    if (pending_count > 0) apply_update();

    result.history.push_back({epoch, epoch_loss / static_cast<double>(order.size()),
                              epoch_updates ? epoch_update_norm / epoch_updates : 0.0,
                              epoch_updates});
  }

  if (cfg.mode == TrainMode::cocktail) {
    result.head = merge_weights(TrainableHead::identity(d), result.head,
                                cfg.cocktail_merge_weight);
    result.lambda_inference = 1.0;
  } else if (cfg.mode == TrainMode::finetune) {
    result.lambda_inference = 1.0;
  } else {
    result.lambda_inference = cfg.lambda;
  }
  return result;
}

}  // namespace refine
