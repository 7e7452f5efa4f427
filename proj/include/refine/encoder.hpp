#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "refine/errors.hpp"
#include "refine/rng.hpp"
#include "refine/vectorstore.hpp"

namespace refine {

// Deterministic stand-in for a pretrained text encoder: hashed character
// n-gram counts bucketed into `dimension` slots, L2-normalized. Captures
// lexical similarity without any learned weights.
struct FrozenFeaturizer {
  std::size_t dimension = 64;
  std::uint64_t hash_seed = 0;
  int ngram_lo = 3;
  int ngram_hi = 5;

  void validate() const {
    if (dimension == 0) throw ValidationError("featurizer: dimension must be positive");
    if (ngram_lo < 1 || ngram_hi < ngram_lo) {
      throw ValidationError("featurizer: invalid n-gram range");
    }
  }
};

// Texts shorter than the smallest n-gram are padded with spaces, so every
// non-empty text maps to a vector with positive norm.
inline EmbeddingVector featurize(std::string_view text, const FrozenFeaturizer& f) {
  f.validate();
  if (text.empty()) throw ValidationError("featurize: empty text");

  std::string padded;
  if (text.size() < static_cast<std::size_t>(f.ngram_lo)) {
    padded.assign(text);
    padded.resize(static_cast<std::size_t>(f.ngram_lo), ' ');
    text = padded;
  }

  EmbeddingVector counts(f.dimension, 0.0);
  for (int n = f.ngram_lo; n <= f.ngram_hi; ++n) {
    if (text.size() < static_cast<std::size_t>(n)) break;
    for (std::size_t i = 0; i + n <= text.size(); ++i) {
      std::uint64_t h = hash_bytes(text.data() + i, static_cast<std::size_t>(n), f.hash_seed);
      counts[h % f.dimension] += 1.0;
    }
  }
  double s = norm(counts);
  for (double& v : counts) v /= s;
  return counts;
}

// Trainable linear map over the frozen feature space: W x + b, with W a
// row-major d x d matrix. Initialized to the identity so the trainable and
// frozen paths start out equal. The optional tanh output activation makes
// the head nonlinear; it exists to show that post-hoc weight merging and
// embedding fusion only coincide for linear heads, and is not trainable.
struct TrainableHead {
  std::size_t dimension = 0;
  std::vector<double> weight;  // row-major, dimension * dimension
  std::vector<double> bias;
  bool tanh_output = false;

  static TrainableHead identity(std::size_t d) {
    TrainableHead h;
    h.dimension = d;
    h.weight.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) h.weight[i * d + i] = 1.0;
    h.bias.assign(d, 0.0);
    return h;
  }

  bool is_identity() const {
    if (tanh_output) return false;
    for (std::size_t i = 0; i < dimension; ++i) {
      for (std::size_t j = 0; j < dimension; ++j) {
        if (weight[i * dimension + j] != (i == j ? 1.0 : 0.0)) return false;
      }
      if (bias[i] != 0.0) return false;
    }
    return true;
  }

  void validate() const {
    if (dimension == 0 || weight.size() != dimension * dimension ||
        bias.size() != dimension) {
      throw ValidationError("head: inconsistent shapes");
    }
    for (double v : weight) {
      if (!std::isfinite(v)) throw NumericError("head: non-finite weight");
    }
    for (double v : bias) {
      if (!std::isfinite(v)) throw NumericError("head: non-finite bias");
    }
  }
};

inline EmbeddingVector apply_head(const TrainableHead& head, const EmbeddingVector& x) {
  if (x.size() != head.dimension) {
    throw ValidationError("apply_head: dimension mismatch");
  }
  const std::size_t d = head.dimension;
  EmbeddingVector out(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double* row = head.weight.data() + i * d;
    double acc = head.bias[i];
    for (std::size_t j = 0; j < d; ++j) acc += row[j] * x[j];
    out[i] = head.tanh_output ? std::tanh(acc) : acc;
  }
  return out;
}

inline EmbeddingVector encode_trainable(std::string_view text, const FrozenFeaturizer& f,
                                        const TrainableHead& head) {
  return apply_head(head, featurize(text, f));
}

struct FusionConfig {
  double lambda = 0.35;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
      throw ValidationError("fusion: lambda must be in [0, 1]");
    }
  }
};

// Elementwise interpolation of the trainable and frozen representations:
// lambda * e_train + (1 - lambda) * e_frozen. Not re-normalized; cosine
// downstream absorbs per-vector scale.
inline EmbeddingVector fuse(const EmbeddingVector& e_train, const EmbeddingVector& e_frozen,
                            const FusionConfig& cfg) {
  cfg.validate();
  if (e_train.size() != e_frozen.size()) {
    throw ValidationError("fuse: dimension mismatch");
  }
  EmbeddingVector out(e_train.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = cfg.lambda * e_train[i] + (1.0 - cfg.lambda) * e_frozen[i];
  }
  return out;
}

// Parameter-wise interpolation (1 - w) * a + w * b. Merging a tuned head
// against the identity reproduces post-hoc model merging.
inline TrainableHead merge_weights(const TrainableHead& a, const TrainableHead& b, double w) {
  if (!(w >= 0.0 && w <= 1.0)) throw ValidationError("merge_weights: w must be in [0, 1]");
  if (a.dimension != b.dimension || a.tanh_output != b.tanh_output) {
    throw ValidationError("merge_weights: shape or activation mismatch");
  }
  a.validate();
  b.validate();
  TrainableHead out;
  out.dimension = a.dimension;
  out.tanh_output = a.tanh_output;
  out.weight.resize(a.weight.size());
  out.bias.resize(a.bias.size());
  for (std::size_t i = 0; i < out.weight.size(); ++i) {
    out.weight[i] = (1.0 - w) * a.weight[i] + w * b.weight[i];
  }
  for (std::size_t i = 0; i < out.bias.size(); ++i) {
    out.bias[i] = (1.0 - w) * a.bias[i] + w * b.bias[i];
  }
  return out;
}

// A complete embedding model: frozen featurizer, trainable head, and the
// fusion weight used at inference time.
struct Encoder {
  FrozenFeaturizer featurizer;
  TrainableHead head;
  double lambda = 0.0;

  EmbeddingVector embed(const std::string& text) const {
    EmbeddingVector frozen = featurize(text, featurizer);
    if (lambda == 0.0) return frozen;
    EmbeddingVector trained = apply_head(head, frozen);
    return fuse(trained, frozen, FusionConfig{lambda});
  }

  EmbedFn embed_fn() const {
    return [enc = *this](const std::string& text) { return enc.embed(text); };
  }

  static Encoder vanilla(const FrozenFeaturizer& f) {
    return Encoder{f, TrainableHead::identity(f.dimension), 0.0};
  }
};

// Checkpoint: head parameters plus everything needed to rebuild the exact
// embedding space (featurizer settings, inference lambda, mode label).
struct Checkpoint {
  Encoder encoder;
  std::string mode;
  std::string config_hash;
};

inline json checkpoint_to_json(const Checkpoint& ckpt) {
  return json{{"dimension", ckpt.encoder.head.dimension},
              {"weight", ckpt.encoder.head.weight},
              {"bias", ckpt.encoder.head.bias},
              {"tanh_output", ckpt.encoder.head.tanh_output},
              {"lambda", ckpt.encoder.lambda},
              {"mode", ckpt.mode},
              {"config_hash", ckpt.config_hash},
              {"featurizer",
               {{"dimension", ckpt.encoder.featurizer.dimension},
                {"hash_seed", ckpt.encoder.featurizer.hash_seed},
                {"ngram_lo", ckpt.encoder.featurizer.ngram_lo},
                {"ngram_hi", ckpt.encoder.featurizer.ngram_hi}}}};
}

inline Checkpoint checkpoint_from_json(const json& j) {
  Checkpoint ckpt;
  try {
    ckpt.encoder.head.dimension = j.at("dimension").get<std::size_t>();
    ckpt.encoder.head.weight = j.at("weight").get<std::vector<double>>();
    ckpt.encoder.head.bias = j.at("bias").get<std::vector<double>>();
    ckpt.encoder.head.tanh_output = j.value("tanh_output", false);
    ckpt.encoder.lambda = j.at("lambda").get<double>();
    ckpt.mode = j.at("mode").get<std::string>();
    ckpt.config_hash = j.value("config_hash", "");
    const auto& f = j.at("featurizer");
    ckpt.encoder.featurizer.dimension = f.at("dimension").get<std::size_t>();
    ckpt.encoder.featurizer.hash_seed = f.at("hash_seed").get<std::uint64_t>();
    ckpt.encoder.featurizer.ngram_lo = f.at("ngram_lo").get<int>();
    ckpt.encoder.featurizer.ngram_hi = f.at("ngram_hi").get<int>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  ckpt.encoder.head.validate();
  if (ckpt.encoder.featurizer.dimension != ckpt.encoder.head.dimension) {
    throw ValidationError("checkpoint: featurizer/head dimension mismatch");
  }
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << checkpoint_to_json(ckpt).dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace refine
