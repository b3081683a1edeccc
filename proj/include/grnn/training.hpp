// Mini-batch training with the curriculum length schedule, early stopping on
// validation loss, and checkpoint persistence.
//
// Checkpoint file layout: one line of JSON (version, model config, label
// order, tensor directory with name/shape/offset), then raw little-endian
// 32-bit float payloads in directory order.

#ifndef GRNN_TRAINING_HPP_
#define GRNN_TRAINING_HPP_

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "grnn/data.hpp"
#include "grnn/models.hpp"

namespace grnn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class OptimizerKind { kAdam, kSgd };

inline const char* to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "sgd";
}

inline OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw std::invalid_argument("unknown optimizer: " + name);
}

struct TrainConfig {
  std::size_t initial_len = 50;
  double growth = 1.35;
  std::size_t max_len_cap = 4000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::size_t patience = 5;
  std::size_t max_epochs = 30;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

inline void validate(const TrainConfig& cfg) {
  check_arg(cfg.growth > 1.0, "train config: growth must exceed 1");
  check_arg(cfg.initial_len >= 1, "train config: initial_len must be >= 1");
  check_arg(cfg.patience >= 1, "train config: patience must be >= 1");
  check_arg(cfg.max_epochs >= 1, "train config: max_epochs must be >= 1");
  check_arg(cfg.batch_size >= 1, "train config: batch_size must be >= 1");
  check_arg(cfg.max_len_cap >= 1, "train config: max_len_cap must be >= 1");
}

/// Truncation length for a training epoch:
/// min(cap, floor(initial_len * growth^epoch)). Nondecreasing in epoch.
inline std::size_t curriculum_length(std::size_t epoch,
                                     const TrainConfig& cfg) {
  const double raw = static_cast<double>(cfg.initial_len) *
                     std::pow(cfg.growth, static_cast<double>(epoch));
  if (!(raw < static_cast<double>(cfg.max_len_cap))) return cfg.max_len_cap;
  return static_cast<std::size_t>(std::floor(raw));
}

// ---------------------------------------------------------------------------
// Optimizers.
// ---------------------------------------------------------------------------

struct OptimizerState {
  std::vector<Vec> m, v;  // adam moments, parallel to collect_tensors
  std::size_t step = 0;
};

inline void optimizer_step(OptimizerKind kind, OptimizerState& state,
                           ModelParameters& params,
                           ModelParameters& grads, double lr) {
  const auto tensors = collect_tensors(params);
  const auto grad_tensors = collect_tensors(grads);
  check_shape(tensors.size() == grad_tensors.size(),
              "optimizer_step: gradient structure disagrees with parameters");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    check_shape(tensors[i].values->size() == grad_tensors[i].values->size(),
                "optimizer_step: gradient shape disagrees for " +
                    tensors[i].name);
  }
  ++state.step;
  if (kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      axpy(-lr, *grad_tensors[i].values, *tensors[i].values);
    }
    return;
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  if (state.m.empty()) {
    for (const auto& t : tensors) {
      state.m.emplace_back(t.values->size(), 0.0);
      state.v.emplace_back(t.values->size(), 0.0);
    }
  }
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Vec& p = *tensors[i].values;
    const Vec& g = *grad_tensors[i].values;
    Vec& m = state.m[i];
    Vec& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g[j];
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + kEps);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints.
// ---------------------------------------------------------------------------

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<std::string> label_names;
  std::vector<std::size_t> label_frequencies;
  std::uint64_t vocab_hash = 0;
  std::size_t epoch = 0;
  double best_valid_loss = std::numeric_limits<double>::infinity();
  ModelParameters params;  // carries the model config and vocab size
};

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t curriculum_len = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t batch)
      : std::runtime_error(str_cat("training diverged (loss is not finite) at"
                                   " epoch ", epoch, ", batch ", batch)) {}
};

namespace detail {

inline nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(cfg.kind);
  j["num_labels"] = cfg.num_labels;
  j["embed_dim"] = cfg.embed_dim;
  j["hidden_or_control_dim"] = cfg.hidden_or_control_dim;
  j["reverse_hidden_dim"] = cfg.reverse_hidden_dim;
  j["attention_window"] = cfg.attention_window;
  j["grounded_eps"] = cfg.grounded_eps;
  j["seed"] = cfg.seed;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.kind = model_kind_from_string(j.at("kind").get<std::string>());
  cfg.num_labels = j.at("num_labels").get<std::size_t>();
  cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
  cfg.hidden_or_control_dim = j.at("hidden_or_control_dim").get<std::size_t>();
  cfg.reverse_hidden_dim = j.at("reverse_hidden_dim").get<std::size_t>();
  cfg.attention_window = j.at("attention_window").get<std::size_t>();
  cfg.grounded_eps = j.at("grounded_eps").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

inline std::uint64_t parse_hex64(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

inline void write_f32_le(std::ostream& out, double value) {
  const float f = static_cast<float>(value);
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  const unsigned char bytes[4] = {
      static_cast<unsigned char>(bits & 0xff),
      static_cast<unsigned char>((bits >> 8) & 0xff),
      static_cast<unsigned char>((bits >> 16) & 0xff),
      static_cast<unsigned char>((bits >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

inline bool read_f32_le(std::istream& in, double& value) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) return false;
  const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) |
                             (static_cast<std::uint32_t>(bytes[1]) << 8) |
                             (static_cast<std::uint32_t>(bytes[2]) << 16) |
                             (static_cast<std::uint32_t>(bytes[3]) << 24);
  float f;
  std::memcpy(&f, &bits, sizeof f);
  value = static_cast<double>(f);
  return true;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto tensors = collect_tensors(ckpt.params);

  nlohmann::ordered_json header;
  header["format"] = "grnn-checkpoint";
  header["version"] = ckpt.version;
  header["model"] = detail::model_config_to_json(ckpt.params.config);
  header["vocab_size"] = ckpt.params.vocab_size;
  header["vocab_hash"] = detail::hex64(ckpt.vocab_hash);
  header["epoch"] = ckpt.epoch;
  header["best_valid_loss"] = ckpt.best_valid_loss;
  header["label_names"] = ckpt.label_names;
  header["label_frequencies"] = ckpt.label_frequencies;
  nlohmann::ordered_json directory = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const ConstTensorRef& t : tensors) {
    nlohmann::ordered_json entry;
    entry["name"] = t.name;
    entry["shape"] = tensor_shape(ckpt.params, t.name);
    entry["offset"] = offset;
    entry["count"] = t.values->size();
    directory.push_back(entry);
    offset += t.values->size() * 4;
  }
  header["tensors"] = directory;

  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << header.dump() << '\n';
  for (const ConstTensorRef& t : tensors) {
    for (double v : *t.values) detail::write_f32_le(out, v);
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint not found: " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw std::runtime_error(path + ": checkpoint header: missing");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(
        str_cat(path, ": checkpoint header: malformed JSON: ", e.what()));
  }
  if (header.value("format", "") != "grnn-checkpoint") {
    throw std::runtime_error(path + ": checkpoint header: not a checkpoint");
  }
  const auto version = header.at("version").get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error(
        str_cat(path, ": checkpoint version mismatch: file has ", version,
                ", this build reads ", kCheckpointVersion));
  }

  Checkpoint ckpt;
  ckpt.version = version;
  const ModelConfig cfg = detail::model_config_from_json(header.at("model"));
  const auto vocab_size = header.at("vocab_size").get<std::size_t>();
  ckpt.params = ModelParameters::build(cfg, vocab_size);
  ckpt.vocab_hash =
      detail::parse_hex64(header.at("vocab_hash").get<std::string>());
  ckpt.epoch = header.at("epoch").get<std::size_t>();
  ckpt.best_valid_loss = header.at("best_valid_loss").get<double>();
  ckpt.label_names =
      header.at("label_names").get<std::vector<std::string>>();
  ckpt.label_frequencies =
      header.at("label_frequencies").get<std::vector<std::size_t>>();
  if (ckpt.label_names.size() != cfg.num_labels) {
    throw std::runtime_error(path +
                             ": checkpoint header: label list length "
                             "disagrees with model config");
  }

  const auto tensors = collect_tensors(ckpt.params);
  const auto& directory = header.at("tensors");
  if (directory.size() != tensors.size()) {
    throw std::runtime_error(path +
                             ": checkpoint directory: tensor count disagrees "
                             "with model kind");
  }
  std::size_t offset = 0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& entry = directory.at(i);
    const auto name = entry.at("name").get<std::string>();
    if (name != tensors[i].name) {
      throw std::runtime_error(str_cat(path, ": checkpoint directory: tensor ",
                                       i, " is \"", name, "\", expected \"",
                                       tensors[i].name, "\""));
    }
    if (entry.at("count").get<std::size_t>() != tensors[i].values->size() ||
        entry.at("offset").get<std::size_t>() != offset) {
      throw std::runtime_error(
          str_cat(path, ": checkpoint directory: bad layout for tensor \"",
                  name, "\""));
    }
    offset += tensors[i].values->size() * 4;
  }
  for (const TensorRef& t : tensors) {
    for (double& v : *t.values) {
      if (!detail::read_f32_le(in, v)) {
        throw std::runtime_error(
            str_cat(path, ": checkpoint truncated in tensor \"", t.name,
                    "\""));
      }
    }
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

namespace detail {

inline void zero_tensors(ModelParameters& m) {
  for (const TensorRef& t : collect_tensors(m)) {
    std::fill(t.values->begin(), t.values->end(), 0.0);
  }
}

inline std::vector<int> truncated_tokens(const Document& doc,
                                         std::size_t max_len) {
  if (doc.tokens.size() <= max_len) return doc.tokens;
  return std::vector<int>(doc.tokens.begin(),
                          doc.tokens.begin() + static_cast<long>(max_len));
}

inline double mean_valid_loss(const ModelParameters& params,
                              const EncodedCorpus& valid,
                              const std::vector<std::vector<std::uint8_t>>& gold,
                              std::size_t max_len, std::size_t workers) {
  if (valid.docs.empty()) return 0.0;
  Vec losses(valid.docs.size(), 0.0);
  parallel_for(valid.docs.size(), workers, [&](std::size_t d) {
    losses[d] = sequence_loss(params, truncated_tokens(valid.docs[d], max_len),
                              gold[d]);
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(valid.docs.size());
}

}  // namespace detail

/// Trains any recurrent or attention model kind (logistic regression has its
/// own trainer). Each epoch truncates training documents to the curriculum
/// length, shuffles deterministically, applies mean-gradient optimizer steps
/// per batch, then scores the full validation split at the dataset cap.
/// Stops when validation loss fails to improve for `patience` epochs and
/// returns the parameters of the best epoch.
inline TrainResult train(const ModelConfig& model_cfg,
                         const EncodedCorpus& train_split,
                         const EncodedCorpus& valid_split,
                         const LabelSpace& labels, const Vocabulary& vocab,
                         const TrainConfig& cfg) {
  validate(cfg);
  validate(model_cfg);
  check_arg(model_cfg.kind != ModelKind::kLogistic,
            "train: logistic regression uses logistic_train");
  check_arg(!train_split.docs.empty(), "train: empty training split");
  check_arg(labels.size() == model_cfg.num_labels,
            "train: label space size disagrees with model config");

  ModelParameters params = init_model(model_cfg, vocab.size());
  std::vector<std::vector<std::uint8_t>> train_gold, valid_gold;
  for (const Document& d : train_split.docs) {
    train_gold.push_back(gold_vector(d, labels.size()));
  }
  for (const Document& d : valid_split.docs) {
    valid_gold.push_back(gold_vector(d, labels.size()));
  }

  Rng rng(cfg.seed);
  OptimizerState opt_state;
  const std::size_t n_docs = train_split.docs.size();
  std::vector<std::size_t> order(n_docs);
  std::iota(order.begin(), order.end(), std::size_t{0});

  // Per-slot gradient buffers; reduction always runs in slot order so the
  // result is independent of the worker count.
  const std::size_t slots = std::min(cfg.batch_size, n_docs);
  std::vector<ModelParameters> slot_grads;
  Vec slot_loss(slots, 0.0);
  for (std::size_t s = 0; s < slots; ++s) {
    slot_grads.push_back(zeros_like(params));
  }
  ModelParameters batch_grads = zeros_like(params);

  TrainResult result;
  ModelParameters best_params = params;
  double best_valid = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const std::size_t cur_len = curriculum_length(epoch, cfg);
    rng.shuffle(order);

    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n_docs;
         start += cfg.batch_size, ++batch_index) {
      const std::size_t count = std::min(cfg.batch_size, n_docs - start);
      parallel_for(count, cfg.workers, [&](std::size_t i) {
        const Document& doc = train_split.docs[order[start + i]];
        detail::zero_tensors(slot_grads[i]);
        const ForwardResult fwd =
            forward_sequence(params, detail::truncated_tokens(doc, cur_len));
        slot_loss[i] = backward_sequence(params, fwd,
                                         train_gold[order[start + i]],
                                         slot_grads[i]);
      });
      detail::zero_tensors(batch_grads);
      const auto accum = collect_tensors(batch_grads);
      double batch_loss = 0.0;
      const double scale = 1.0 / static_cast<double>(count);
      for (std::size_t i = 0; i < count; ++i) {
        batch_loss += slot_loss[i];
        const auto contrib = collect_tensors(slot_grads[i]);
        for (std::size_t t = 0; t < accum.size(); ++t) {
          axpy(scale, *contrib[t].values, *accum[t].values);
        }
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingDiverged(epoch, batch_index);
      }
      epoch_loss += batch_loss;
      optimizer_step(cfg.optimizer, opt_state, params, batch_grads,
                     cfg.learning_rate);
    }

    const double valid_loss = detail::mean_valid_loss(
        params, valid_split, valid_gold, cfg.max_len_cap, cfg.workers);
    result.log.push_back({epoch, cur_len,
                          epoch_loss / static_cast<double>(n_docs),
                          valid_loss});

    if (valid_loss < best_valid) {
      best_valid = valid_loss;
      best_params = params;
      best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  result.checkpoint.label_names = labels.names;
  result.checkpoint.label_frequencies = labels.frequencies;
  result.checkpoint.vocab_hash = vocab.hash();
  result.checkpoint.epoch = best_epoch;
  result.checkpoint.best_valid_loss = best_valid;
  result.checkpoint.params = std::move(best_params);
  return result;
}

}  // namespace grnn

#endif  // GRNN_TRAINING_HPP_
