// The model zoo: GRU, bidirectional GRUs, GRNN, bidirectional GRNN, soft
// attention over bag-of-words, and L1 logistic regression over bag-of-words.
// One forward/backward pair per kind, plus parameter accounting used to build
// capacity-matched GRU baselines.

#ifndef GRNN_MODELS_HPP_
#define GRNN_MODELS_HPP_

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "grnn/cells.hpp"
#include "grnn/data.hpp"
#include "grnn/linalg.hpp"

namespace grnn {

enum class ModelKind {
  kLogistic,
  kAttnBow,
  kGru,
  kBiGru,
  kBiGruL,
  kGrnn,
  kBiGrnn,
};

inline const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kLogistic: return "logistic";
    case ModelKind::kAttnBow: return "attn_bow";
    case ModelKind::kGru: return "gru";
    case ModelKind::kBiGru: return "bigru";
    case ModelKind::kBiGruL: return "bigru_l";
    case ModelKind::kGrnn: return "grnn";
    case ModelKind::kBiGrnn: return "bigrnn";
  }
  return "?";
}

inline ModelKind model_kind_from_string(const std::string& name) {
  for (ModelKind kind :
       {ModelKind::kLogistic, ModelKind::kAttnBow, ModelKind::kGru,
        ModelKind::kBiGru, ModelKind::kBiGruL, ModelKind::kGrnn,
        ModelKind::kBiGrnn}) {
    if (name == to_string(kind)) return kind;
  }
  throw std::invalid_argument("unknown model kind: " + name);
}

inline bool is_grounded(ModelKind kind) {
  return kind == ModelKind::kGrnn || kind == ModelKind::kBiGrnn;
}

inline bool is_bidirectional(ModelKind kind) {
  return kind == ModelKind::kBiGru || kind == ModelKind::kBiGruL ||
         kind == ModelKind::kBiGrnn;
}

inline bool is_recurrent(ModelKind kind) {
  return kind != ModelKind::kLogistic && kind != ModelKind::kAttnBow;
}

struct ModelConfig {
  ModelKind kind = ModelKind::kGrnn;
  std::size_t num_labels = 0;
  std::size_t embed_dim = 192;
  // Dh for the GRU family, Dc for the grounded family.
  std::size_t hidden_or_control_dim = 128;
  std::size_t reverse_hidden_dim = 64;  // bidirectional kinds
  std::size_t attention_window = 5;     // attn_bow, odd
  double grounded_eps = 1e-6;
  std::uint64_t seed = 0;
};

inline void validate(const ModelConfig& cfg) {
  check_arg(cfg.num_labels > 0, "model config: num_labels must be positive");
  if (cfg.kind != ModelKind::kLogistic) {
    check_arg(cfg.embed_dim > 0, "model config: embed_dim must be positive");
  }
  if (is_recurrent(cfg.kind)) {
    check_arg(cfg.hidden_or_control_dim > 0,
              "model config: hidden_or_control_dim must be positive");
  }
  if (is_bidirectional(cfg.kind)) {
    check_arg(cfg.reverse_hidden_dim > 0,
              "model config: reverse_hidden_dim must be positive");
  }
  if (cfg.kind == ModelKind::kAttnBow) {
    check_arg(cfg.attention_window >= 1 && cfg.attention_window % 2 == 1,
              "model config: attention_window must be odd and positive");
  }
  check_arg(cfg.grounded_eps > 0.0 && cfg.grounded_eps < 0.5,
            "model config: grounded_eps out of (0, 0.5)");
}

/// Per-step input width of the forward recurrence (embeddings plus, for the
/// concatenating bidirectional kinds, the reverse-GRU output).
inline std::size_t forward_input_width(const ModelConfig& cfg) {
  if (cfg.kind == ModelKind::kBiGrnn || cfg.kind == ModelKind::kBiGruL) {
    return cfg.embed_dim + cfg.reverse_hidden_dim;
  }
  return cfg.embed_dim;
}

struct ModelParameters {
  ModelConfig config;
  std::size_t vocab_size = 0;

  DenseMatrix embedding;      // vocab x De (unused for logistic)
  GruParameters gru;          // forward GRU (gru/bigru/bigru_l)
  GruParameters reverse_gru;  // reverse GRU (bigru/bigru_l/bigrnn)
  GrnnParameters grnn;        // grnn/bigrnn
  PredictionHead head;        // affine head (gru family, attn_bow, logistic)
  DenseMatrix attn_w;         // window x De, row k scores offset k-(w-1)/2
  Vec attn_b;                 // length 1

  /// Allocates all tensors for the kind at their configured shapes, zeroed.
  static ModelParameters build(const ModelConfig& cfg, std::size_t vocab_size) {
    validate(cfg);
    check_arg(vocab_size > 0, "model: vocabulary must be nonempty");
    ModelParameters m;
    m.config = cfg;
    m.vocab_size = vocab_size;
    const std::size_t L = cfg.num_labels;
    const std::size_t de = cfg.embed_dim;
    const std::size_t dh = cfg.hidden_or_control_dim;
    const std::size_t dr = cfg.reverse_hidden_dim;
    switch (cfg.kind) {
      case ModelKind::kLogistic:
        m.head = PredictionHead(L, vocab_size);
        return m;
      case ModelKind::kAttnBow:
        m.embedding = DenseMatrix(vocab_size, de);
        m.attn_w = DenseMatrix(cfg.attention_window, de);
        m.attn_b.assign(1, 0.0);
        m.head = PredictionHead(L, de);
        return m;
      case ModelKind::kGru:
        m.embedding = DenseMatrix(vocab_size, de);
        m.gru = GruParameters(dh, de);
        m.head = PredictionHead(L, dh);
        return m;
      case ModelKind::kBiGru:
        m.embedding = DenseMatrix(vocab_size, de);
        m.gru = GruParameters(dh, de);
        m.reverse_gru = GruParameters(dr, de);
        m.head = PredictionHead(L, dh + dr);
        return m;
      case ModelKind::kBiGruL:
        m.embedding = DenseMatrix(vocab_size, de);
        m.reverse_gru = GruParameters(dr, de);
        m.gru = GruParameters(dh, de + dr);
        m.head = PredictionHead(L, dh);
        return m;
      case ModelKind::kGrnn:
        m.embedding = DenseMatrix(vocab_size, de);
        m.grnn = GrnnParameters(L, dh, de);
        return m;
      case ModelKind::kBiGrnn:
        m.embedding = DenseMatrix(vocab_size, de);
        m.reverse_gru = GruParameters(dr, de);
        m.grnn = GrnnParameters(L, dh, de + dr);
        return m;
    }
    throw std::logic_error("unreachable");
  }
};

/// Mutable named view over every tensor of the model, in the canonical order
/// used by initialization, the optimizer, and the checkpoint directory.
inline std::vector<TensorRef> collect_tensors(ModelParameters& m) {
  std::vector<TensorRef> out;
  auto add = [&](const std::string& name, Vec& values) {
    out.push_back({name, &values});
  };
  auto add_gru = [&](const std::string& prefix, GruParameters& p) {
    add(prefix + ".Z", p.Z.values());
    add(prefix + ".R", p.R.values());
    add(prefix + ".W", p.W.values());
    add(prefix + ".b_z", p.b_z);
    add(prefix + ".b_r", p.b_r);
    add(prefix + ".b_w", p.b_w);
  };
  auto add_semidiag = [&](const std::string& prefix, SemiDiagonalMatrix& s) {
    add(prefix + ".diag", s.diag);
    add(prefix + ".grounded", s.grounded_dense.values());
    add(prefix + ".control", s.control_dense.values());
  };
  switch (m.config.kind) {
    case ModelKind::kLogistic:
      add("head.P", m.head.P.values());
      add("head.b_p", m.head.b_p);
      return out;
    case ModelKind::kAttnBow:
      add("embedding", m.embedding.values());
      add("attn.w", m.attn_w.values());
      add("attn.b", m.attn_b);
      add("head.P", m.head.P.values());
      add("head.b_p", m.head.b_p);
      return out;
    case ModelKind::kGru:
      add("embedding", m.embedding.values());
      add_gru("gru", m.gru);
      add("head.P", m.head.P.values());
      add("head.b_p", m.head.b_p);
      return out;
    case ModelKind::kBiGru:
      add("embedding", m.embedding.values());
      add_gru("gru", m.gru);
      add_gru("rev", m.reverse_gru);
      add("head.P", m.head.P.values());
      add("head.b_p", m.head.b_p);
      return out;
    case ModelKind::kBiGruL:
      add("embedding", m.embedding.values());
      add_gru("rev", m.reverse_gru);
      add_gru("gru", m.gru);
      add("head.P", m.head.P.values());
      add("head.b_p", m.head.b_p);
      return out;
    case ModelKind::kGrnn:
      add("embedding", m.embedding.values());
      add_semidiag("grnn.Z", m.grnn.Z);
      add_semidiag("grnn.R", m.grnn.R);
      add_semidiag("grnn.W", m.grnn.W);
      add("grnn.b_z", m.grnn.b_z);
      add("grnn.b_r", m.grnn.b_r);
      add("grnn.b_w", m.grnn.b_w);
      add("grnn.b_p", m.grnn.b_p);
      return out;
    case ModelKind::kBiGrnn:
      add("embedding", m.embedding.values());
      add_gru("rev", m.reverse_gru);
      add_semidiag("grnn.Z", m.grnn.Z);
      add_semidiag("grnn.R", m.grnn.R);
      add_semidiag("grnn.W", m.grnn.W);
      add("grnn.b_z", m.grnn.b_z);
      add("grnn.b_r", m.grnn.b_r);
      add("grnn.b_w", m.grnn.b_w);
      add("grnn.b_p", m.grnn.b_p);
      return out;
  }
  throw std::logic_error("unreachable");
}

/// Read-only view of the same canonical tensor list.
struct ConstTensorRef {
  std::string name;
  const Vec* values = nullptr;
};

inline std::vector<ConstTensorRef> collect_tensors(const ModelParameters& m) {
  std::vector<ConstTensorRef> out;
  for (const TensorRef& ref :
       collect_tensors(const_cast<ModelParameters&>(m))) {
    out.push_back({ref.name, ref.values});
  }
  return out;
}

/// Shape of each named tensor, parallel to collect_tensors.
inline std::vector<std::size_t> tensor_shape(const ModelParameters& m,
                                             const std::string& name) {
  auto dm = [](const DenseMatrix& d) {
    return std::vector<std::size_t>{d.rows(), d.cols()};
  };
  if (name == "embedding") return dm(m.embedding);
  if (name == "head.P") return dm(m.head.P);
  if (name == "head.b_p") return {m.head.b_p.size()};
  if (name == "attn.w") return dm(m.attn_w);
  if (name == "attn.b") return {m.attn_b.size()};
  if (name.rfind("gru.", 0) == 0 || name.rfind("rev.", 0) == 0) {
    const GruParameters& p =
        name.rfind("rev.", 0) == 0 ? m.reverse_gru : m.gru;
    const std::string field = name.substr(4);
    if (field == "Z" || field == "R" || field == "W") return dm(p.Z);
    return {p.b_z.size()};
  }
  if (name.rfind("grnn.", 0) == 0) {
    const std::string field = name.substr(5);
    if (field == "b_z" || field == "b_r" || field == "b_w") {
      return {m.grnn.b_z.size()};
    }
    if (field == "b_p") return {m.grnn.b_p.size()};
    const SemiDiagonalMatrix& s = m.grnn.Z;
    if (field.size() > 2 && field.substr(2) == "diag") return {s.diag.size()};
    if (field.size() > 2 && field.substr(2) == "grounded") {
      return dm(s.grounded_dense);
    }
    return dm(s.control_dense);
  }
  throw std::invalid_argument("unknown tensor: " + name);
}

/// Same shapes as `m`, all values zero. Used for gradient accumulators.
inline ModelParameters zeros_like(const ModelParameters& m) {
  return ModelParameters::build(m.config, m.vocab_size);
}

/// Deterministic initialization: 2-D tensors get fan-scaled uniform draws in
/// canonical order from one generator seeded by config.seed; 1-D tensors
/// (biases, the semi-diagonal band) start at zero.
inline ModelParameters init_model(const ModelConfig& cfg,
                                  std::size_t vocab_size) {
  ModelParameters m = ModelParameters::build(cfg, vocab_size);
  Rng rng(cfg.seed);
  for (const TensorRef& ref : collect_tensors(m)) {
    const auto shape = tensor_shape(m, ref.name);
    if (shape.size() < 2) continue;
    Vec drawn;
    init_tensor_inplace(drawn, shape, InitScheme::kUniformScaled, rng);
    *ref.values = std::move(drawn);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Parameter accounting. Counts exclude the embedding table, which every
// neural kind shares at identical cost; it is reported separately.
// ---------------------------------------------------------------------------

inline std::size_t gru_parameter_count(std::size_t hidden, std::size_t input) {
  return 3 * hidden * (hidden + input) + 3 * hidden;
}

inline std::size_t count_parameters(const ModelConfig& cfg,
                                    std::size_t vocab_size = 0) {
  const std::size_t L = cfg.num_labels;
  const std::size_t de = cfg.embed_dim;
  const std::size_t dh = cfg.hidden_or_control_dim;
  const std::size_t dr = cfg.reverse_hidden_dim;
  auto semidiag = [&](std::size_t input) {
    return SemiDiagonalMatrix(L, dh, input).parameter_count();
  };
  switch (cfg.kind) {
    case ModelKind::kLogistic:
      check_arg(vocab_size > 0,
                "count_parameters: logistic needs the vocabulary size");
      return L * vocab_size + L;
    case ModelKind::kAttnBow:
      return cfg.attention_window * de + 1 + L * de + L;
    case ModelKind::kGru:
      return gru_parameter_count(dh, de) + L * dh + L;
    case ModelKind::kBiGru:
      return gru_parameter_count(dh, de) + gru_parameter_count(dr, de) +
             L * (dh + dr) + L;
    case ModelKind::kBiGruL:
      return gru_parameter_count(dr, de) + gru_parameter_count(dh, de + dr) +
             L * dh + L;
    case ModelKind::kGrnn:
      return 3 * semidiag(de) + 3 * (L + dh) + L;
    case ModelKind::kBiGrnn:
      return gru_parameter_count(dr, de) + 3 * semidiag(de + dr) +
             3 * (L + dh) + L;
  }
  throw std::logic_error("unreachable");
}

inline std::size_t embedding_parameter_count(const ModelConfig& cfg,
                                             std::size_t vocab_size) {
  return cfg.kind == ModelKind::kLogistic ? 0 : vocab_size * cfg.embed_dim;
}

/// Largest GRU hidden size whose non-embedding parameter count (cell plus
/// affine head) does not exceed that of a GRNN with the given dims.
inline std::size_t matched_gru_hidden(std::size_t num_labels,
                                      std::size_t control_dim,
                                      std::size_t embed_dim) {
  ModelConfig grnn_cfg;
  grnn_cfg.kind = ModelKind::kGrnn;
  grnn_cfg.num_labels = num_labels;
  grnn_cfg.hidden_or_control_dim = control_dim;
  grnn_cfg.embed_dim = embed_dim;
  const std::size_t target = count_parameters(grnn_cfg);

  auto gru_total = [&](std::size_t dh) {
    return gru_parameter_count(dh, embed_dim) + num_labels * dh + num_labels;
  };
  // gru_total(Dh) = 3 Dh^2 + (3 De + 3 + L) Dh + L; solve then adjust.
  const double b = 3.0 * static_cast<double>(embed_dim) + 3.0 +
                   static_cast<double>(num_labels);
  const double c = static_cast<double>(num_labels) -
                   static_cast<double>(target);
  double dh = (-b + std::sqrt(b * b - 12.0 * c)) / 6.0;
  std::size_t best = dh < 1.0 ? 1 : static_cast<std::size_t>(dh);
  while (gru_total(best + 1) <= target) ++best;
  while (best > 1 && gru_total(best) > target) --best;
  return best;
}

// ---------------------------------------------------------------------------
// Forward pass.
// ---------------------------------------------------------------------------

struct ForwardResult {
  Vec y_hat;
  // Recurrent kinds: per-position forward state (h, or [g, c] concatenated).
  std::vector<Vec> states;
  // Bidirectional kinds: reverse-GRU state at each position (having read the
  // suffix starting there).
  std::vector<Vec> rev_states;
  Vec attn_weights;  // attn_bow: softmax over positions
  Vec pooled;        // attn_bow: attention-weighted embedding sum
  std::vector<int> tokens;
  GradientTape tape;
};

namespace detail {

inline Vec embed_token(const ModelParameters& m, int token) {
  const double* row = m.embedding.row(static_cast<std::size_t>(token));
  return Vec(row, row + m.embedding.cols());
}

inline void check_tokens(const ModelParameters& m,
                         const std::vector<int>& tokens) {
  check_arg(!tokens.empty(), "forward: empty token sequence");
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= m.vocab_size) {
      throw std::invalid_argument(
          str_cat("forward: token id ", t, " outside vocabulary of size ",
                  m.vocab_size));
    }
  }
}

/// Runs the reverse GRU right to left; rev_states[t] is its state after
/// reading tokens t..T-1. Appends kGruTapeSlots per processed step, in
/// processing order (position T-1 first).
inline void run_reverse_gru(const ModelParameters& m, ForwardResult& fwd) {
  const std::size_t T = fwd.tokens.size();
  fwd.rev_states.assign(T, Vec());
  Vec state(m.config.reverse_hidden_dim, 0.0);
  for (std::size_t k = 0; k < T; ++k) {
    const std::size_t pos = T - 1 - k;
    state = gru_step(m.reverse_gru, state,
                     embed_token(m, fwd.tokens[pos]), fwd.tape);
    fwd.rev_states[pos] = state;
  }
}

inline Vec bow_counts(const ModelParameters& m, const std::vector<int>& tokens) {
  Vec counts(m.vocab_size, 0.0);
  for (int t : tokens) counts[static_cast<std::size_t>(t)] += 1.0;
  return counts;
}

inline Vec attention_scores(const ModelParameters& m,
                            const std::vector<int>& tokens) {
  const std::size_t T = tokens.size();
  const std::size_t window = m.config.attention_window;
  const std::size_t half = (window - 1) / 2;
  Vec scores(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double s = m.attn_b[0];
    for (std::size_t k = 0; k < window; ++k) {
      const long pos = static_cast<long>(t) + static_cast<long>(k) -
                       static_cast<long>(half);
      if (pos < 0 || pos >= static_cast<long>(T)) continue;  // zero padding
      const double* w = m.attn_w.row(k);
      const double* e = m.embedding.row(
          static_cast<std::size_t>(tokens[static_cast<std::size_t>(pos)]));
      for (std::size_t d = 0; d < m.config.embed_dim; ++d) s += w[d] * e[d];
    }
    scores[t] = s;
  }
  return scores;
}

inline Vec softmax(const Vec& scores) {
  const double m = *std::max_element(scores.begin(), scores.end());
  Vec out(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

}  // namespace detail

inline ForwardResult forward_sequence(const ModelParameters& m,
                                      const std::vector<int>& tokens) {
  detail::check_tokens(m, tokens);
  const ModelConfig& cfg = m.config;
  ForwardResult fwd;
  fwd.tokens = tokens;
  const std::size_t T = tokens.size();

  switch (cfg.kind) {
    case ModelKind::kLogistic: {
      fwd.pooled = detail::bow_counts(m, tokens);
      fwd.y_hat = predict_affine(m.head, fwd.pooled);
      return fwd;
    }
    case ModelKind::kAttnBow: {
      const Vec scores = detail::attention_scores(m, tokens);
      fwd.attn_weights = detail::softmax(scores);
      fwd.pooled.assign(cfg.embed_dim, 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        axpy(fwd.attn_weights[t], detail::embed_token(m, tokens[t]),
             fwd.pooled);
      }
      fwd.y_hat = predict_affine(m.head, fwd.pooled);
      return fwd;
    }
    case ModelKind::kGru: {
      Vec h(cfg.hidden_or_control_dim, 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        h = gru_step(m.gru, h, detail::embed_token(m, tokens[t]), fwd.tape);
        fwd.states.push_back(h);
      }
      fwd.y_hat = predict_affine(m.head, h);
      return fwd;
    }
    case ModelKind::kBiGru: {
      Vec h(cfg.hidden_or_control_dim, 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        h = gru_step(m.gru, h, detail::embed_token(m, tokens[t]), fwd.tape);
        fwd.states.push_back(h);
      }
      detail::run_reverse_gru(m, fwd);
      fwd.y_hat = predict_affine(m.head, concat(h, fwd.rev_states[0]));
      return fwd;
    }
    case ModelKind::kBiGruL: {
      detail::run_reverse_gru(m, fwd);
      Vec h(cfg.hidden_or_control_dim, 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        const Vec x =
            concat(detail::embed_token(m, tokens[t]), fwd.rev_states[t]);
        h = gru_step(m.gru, h, x, fwd.tape);
        fwd.states.push_back(h);
      }
      fwd.y_hat = predict_affine(m.head, h);
      return fwd;
    }
    case ModelKind::kGrnn: {
      Vec g(cfg.num_labels, 0.0), c(cfg.hidden_or_control_dim, 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        const auto s =
            grnn_step(m.grnn, g, c, detail::embed_token(m, tokens[t]), fwd.tape);
        g = s.g;
        c = s.c;
        fwd.states.push_back(concat(g, c));
      }
      fwd.y_hat = predict_grounded(g, m.grnn.b_p, cfg.grounded_eps);
      return fwd;
    }
    case ModelKind::kBiGrnn: {
      detail::run_reverse_gru(m, fwd);
      Vec g(cfg.num_labels, 0.0), c(cfg.hidden_or_control_dim, 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        const Vec x =
            concat(detail::embed_token(m, tokens[t]), fwd.rev_states[t]);
        const auto s = grnn_step(m.grnn, g, c, x, fwd.tape);
        g = s.g;
        c = s.c;
        fwd.states.push_back(concat(g, c));
      }
      fwd.y_hat = predict_grounded(g, m.grnn.b_p, cfg.grounded_eps);
      return fwd;
    }
  }
  throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------
// Backward pass: accumulates into `grads` (shaped by zeros_like) and returns
// the BCE loss of fwd.y_hat against y.
// ---------------------------------------------------------------------------

namespace detail {

/// Adds the leading embedding-width slice of a step-input gradient into the
/// row of the token (concatenating kinds carry extra reverse-state columns).
inline void add_embedding_grad(ModelParameters& grads, int token,
                               const Vec& d_emb) {
  double* row = grads.embedding.row(static_cast<std::size_t>(token));
  const std::size_t n = std::min(d_emb.size(), grads.embedding.cols());
  for (std::size_t d = 0; d < n; ++d) row[d] += d_emb[d];
}

/// Backward through the forward GRU chain whose steps live at tape bases
/// base0 + kGruTapeSlots*t. d_final is the gradient at the last state;
/// per_step_dx(t, dx) receives the input gradient of step t.
template <typename PerStepDx>
void backward_gru_chain(const GruParameters& p, const GradientTape& tape,
                        std::size_t base0, std::size_t steps, Vec d_final,
                        GruParameters& grads, PerStepDx&& per_step_dx) {
  Vec dh = std::move(d_final);
  const std::size_t input = p.input_dim();
  for (std::size_t t = steps; t-- > 0;) {
    Vec dh_prev(p.hidden_dim(), 0.0), dx(input, 0.0);
    gru_step_backward(p, tape, base0 + kGruTapeSlots * t, dh, grads, dh_prev,
                      dx);
    per_step_dx(t, dx);
    dh = std::move(dh_prev);
  }
}

/// Backward through the reverse GRU written by run_reverse_gru (tape bases
/// base0 + kGruTapeSlots*k, k-th processed position is T-1-k).
/// d_state_at(pos) must return the direct gradient flowing into the reverse
/// state at that position; input gradients land on the embeddings.
template <typename DStateAt>
void backward_reverse_gru(const ModelParameters& m, const GradientTape& tape,
                          std::size_t base0, const std::vector<int>& tokens,
                          DStateAt&& d_state_at, ModelParameters& grads) {
  const std::size_t T = tokens.size();
  Vec d_state(m.config.reverse_hidden_dim, 0.0);
  for (std::size_t k = T; k-- > 0;) {
    const std::size_t pos = T - 1 - k;
    axpy(1.0, d_state_at(pos), d_state);
    Vec d_prev(m.config.reverse_hidden_dim, 0.0), dx(m.config.embed_dim, 0.0);
    gru_step_backward(m.reverse_gru, tape, base0 + kGruTapeSlots * k, d_state,
                      grads.reverse_gru, d_prev, dx);
    add_embedding_grad(grads, tokens[pos], dx);
    d_state = std::move(d_prev);
  }
}

}  // namespace detail

inline double backward_sequence(const ModelParameters& m,
                                const ForwardResult& fwd,
                                const std::vector<std::uint8_t>& y,
                                ModelParameters& grads) {
  const ModelConfig& cfg = m.config;
  check_shape(y.size() == cfg.num_labels,
              "backward: gold vector length disagrees with label count");
  const std::vector<int>& tokens = fwd.tokens;
  const std::size_t T = tokens.size();

  switch (cfg.kind) {
    case ModelKind::kLogistic: {
      Vec d_pooled(m.vocab_size, 0.0);
      return affine_bce_backward(m.head, fwd.pooled, fwd.y_hat, y, grads.head,
                                 d_pooled);
    }
    case ModelKind::kAttnBow: {
      Vec d_pooled(cfg.embed_dim, 0.0);
      const double loss = affine_bce_backward(m.head, fwd.pooled, fwd.y_hat, y,
                                              grads.head, d_pooled);
      const Vec& a = fwd.attn_weights;
      Vec da(T, 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        const Vec emb = detail::embed_token(m, tokens[t]);
        da[t] = dot(d_pooled, emb);
        Vec d_emb(cfg.embed_dim, 0.0);
        axpy(a[t], d_pooled, d_emb);
        detail::add_embedding_grad(grads, tokens[t], d_emb);
      }
      double mean = 0.0;
      for (std::size_t t = 0; t < T; ++t) mean += a[t] * da[t];
      Vec ds(T);
      for (std::size_t t = 0; t < T; ++t) ds[t] = a[t] * (da[t] - mean);

      const std::size_t window = cfg.attention_window;
      const std::size_t half = (window - 1) / 2;
      for (std::size_t t = 0; t < T; ++t) {
        grads.attn_b[0] += ds[t];
        for (std::size_t k = 0; k < window; ++k) {
          const long pos = static_cast<long>(t) + static_cast<long>(k) -
                           static_cast<long>(half);
          if (pos < 0 || pos >= static_cast<long>(T)) continue;
          const int token = tokens[static_cast<std::size_t>(pos)];
          const double* e = m.embedding.row(static_cast<std::size_t>(token));
          double* dw = grads.attn_w.row(k);
          const double* w = m.attn_w.row(k);
          double* de_row = grads.embedding.row(static_cast<std::size_t>(token));
          for (std::size_t d = 0; d < cfg.embed_dim; ++d) {
            dw[d] += ds[t] * e[d];
            de_row[d] += ds[t] * w[d];
          }
        }
      }
      return loss;
    }
    case ModelKind::kGru: {
      Vec dh(cfg.hidden_or_control_dim, 0.0);
      const double loss = affine_bce_backward(m.head, fwd.states.back(),
                                              fwd.y_hat, y, grads.head, dh);
      detail::backward_gru_chain(m.gru, fwd.tape, 0, T, std::move(dh),
                                 grads.gru, [&](std::size_t t, const Vec& dx) {
                                   detail::add_embedding_grad(grads, tokens[t],
                                                              dx);
                                 });
      return loss;
    }
    case ModelKind::kBiGru: {
      const Vec h_concat = concat(fwd.states.back(), fwd.rev_states[0]);
      Vec dh_concat(h_concat.size(), 0.0);
      const double loss = affine_bce_backward(m.head, h_concat, fwd.y_hat, y,
                                              grads.head, dh_concat);
      const std::size_t dh_dim = cfg.hidden_or_control_dim;
      Vec dh(dh_concat.begin(), dh_concat.begin() + dh_dim);
      const Vec d_rev_final(dh_concat.begin() + dh_dim, dh_concat.end());
      detail::backward_gru_chain(m.gru, fwd.tape, 0, T, std::move(dh),
                                 grads.gru, [&](std::size_t t, const Vec& dx) {
                                   detail::add_embedding_grad(grads, tokens[t],
                                                              dx);
                                 });
      const Vec zero(cfg.reverse_hidden_dim, 0.0);
      detail::backward_reverse_gru(
          m, fwd.tape, kGruTapeSlots * T, tokens,
          [&](std::size_t pos) -> const Vec& {
            return pos == 0 ? d_rev_final : zero;
          },
          grads);
      return loss;
    }
    case ModelKind::kBiGruL: {
      Vec dh(cfg.hidden_or_control_dim, 0.0);
      const double loss = affine_bce_backward(m.head, fwd.states.back(),
                                              fwd.y_hat, y, grads.head, dh);
      std::vector<Vec> d_rev(T, Vec(cfg.reverse_hidden_dim, 0.0));
      detail::backward_gru_chain(
          m.gru, fwd.tape, kGruTapeSlots * T, T, std::move(dh), grads.gru,
          [&](std::size_t t, const Vec& dx) {
            detail::add_embedding_grad(grads, tokens[t], dx);
            for (std::size_t d = 0; d < cfg.reverse_hidden_dim; ++d) {
              d_rev[t][d] += dx[cfg.embed_dim + d];
            }
          });
      detail::backward_reverse_gru(
          m, fwd.tape, 0, tokens,
          [&](std::size_t pos) -> const Vec& { return d_rev[pos]; }, grads);
      return loss;
    }
    case ModelKind::kGrnn:
    case ModelKind::kBiGrnn: {
      const std::size_t L = cfg.num_labels;
      const std::size_t dc = cfg.hidden_or_control_dim;
      const Vec& final_state = fwd.states.back();
      const Vec g_final(final_state.begin(), final_state.begin() + L);
      Vec dg(L, 0.0), dcv(dc, 0.0);
      const double loss =
          grounded_bce_backward(g_final, cfg.grounded_eps, fwd.y_hat, y,
                                grads.grnn.b_p, dg);
      const bool bidirectional = cfg.kind == ModelKind::kBiGrnn;
      const std::size_t base0 = bidirectional ? kGruTapeSlots * T : 0;
      std::vector<Vec> d_rev;
      if (bidirectional) {
        d_rev.assign(T, Vec(cfg.reverse_hidden_dim, 0.0));
      }
      for (std::size_t t = T; t-- > 0;) {
        Vec dg_prev(L, 0.0), dc_prev(dc, 0.0);
        Vec dx(m.grnn.input_dim(), 0.0);
        grnn_step_backward(m.grnn, fwd.tape, base0 + kGrnnTapeSlots * t, dg,
                           dcv, grads.grnn, dg_prev, dc_prev, dx);
        detail::add_embedding_grad(grads, tokens[t], dx);
        if (bidirectional) {
          for (std::size_t d = 0; d < cfg.reverse_hidden_dim; ++d) {
            d_rev[t][d] += dx[cfg.embed_dim + d];
          }
        }
        dg = std::move(dg_prev);
        dcv = std::move(dc_prev);
      }
      if (bidirectional) {
        detail::backward_reverse_gru(
            m, fwd.tape, 0, tokens,
            [&](std::size_t pos) -> const Vec& { return d_rev[pos]; }, grads);
      }
      return loss;
    }
  }
  throw std::logic_error("unreachable");
}

/// Forward + loss in one call; used by trainers and finite-difference checks.
inline double sequence_loss(const ModelParameters& m,
                            const std::vector<int>& tokens,
                            const std::vector<std::uint8_t>& y) {
  return bce_loss_clamped(forward_sequence(m, tokens).y_hat, y);
}

// ---------------------------------------------------------------------------
// L1-regularized logistic regression over bag-of-words counts, one binary
// classifier per label, proximal (soft-threshold) full-batch updates. The l1
// strength is picked per label from a grid by validation loss.
// ---------------------------------------------------------------------------

struct LogisticTrainConfig {
  std::vector<double> l1_grid = {1e-4, 1e-3, 1e-2};
  std::size_t patience = 3;
  double learning_rate = 0.5;
  std::size_t max_iters = 200;
  std::size_t workers = 1;
};

struct SparseCounts {
  std::vector<std::pair<int, double>> entries;  // (token id, count)
};

inline std::vector<SparseCounts> bow_features(const EncodedCorpus& corpus) {
  std::vector<SparseCounts> out(corpus.docs.size());
  for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
    std::map<int, double> counts;
    for (int t : corpus.docs[d].tokens) counts[t] += 1.0;
    out[d].entries.assign(counts.begin(), counts.end());
  }
  return out;
}

struct LogisticFit {
  Vec w;
  double b = 0.0;
  double valid_loss = 0.0;
  std::size_t nonzeros = 0;
};

namespace detail {

inline double logistic_margin(const SparseCounts& x, const Vec& w, double b) {
  double s = b;
  for (const auto& [tok, count] : x.entries) {
    s += w[static_cast<std::size_t>(tok)] * count;
  }
  return s;
}

inline double logistic_bce(const std::vector<SparseCounts>& xs,
                           const std::vector<std::uint8_t>& ys, const Vec& w,
                           double b) {
  double loss = 0.0;
  for (std::size_t d = 0; d < xs.size(); ++d) {
    const double p = sigmoid(logistic_margin(xs[d], w, b));
    loss -= ys[d] != 0 ? std::log(std::max(p, 1e-12))
                       : std::log(std::max(1.0 - p, 1e-12));
  }
  return xs.empty() ? 0.0 : loss / static_cast<double>(xs.size());
}

}  // namespace detail

/// Fits one binary classifier at a fixed l1 strength with early stopping on
/// validation loss.
inline LogisticFit logistic_fit_label(const std::vector<SparseCounts>& train_x,
                                      const std::vector<std::uint8_t>& train_y,
                                      const std::vector<SparseCounts>& valid_x,
                                      const std::vector<std::uint8_t>& valid_y,
                                      std::size_t vocab_size, double l1,
                                      const LogisticTrainConfig& cfg) {
  const double n = static_cast<double>(train_x.size());
  double rate = 0.0;
  for (std::uint8_t y : train_y) rate += y;
  rate = std::clamp(rate / std::max(n, 1.0), 0.5 / std::max(n, 1.0),
                    1.0 - 0.5 / std::max(n, 1.0));

  LogisticFit fit;
  fit.w.assign(vocab_size, 0.0);
  fit.b = logit(rate);

  // Bias-only model when the label never occurs in training.
  const bool has_positive =
      std::find(train_y.begin(), train_y.end(), std::uint8_t{1}) !=
      train_y.end();
  if (!has_positive) {
    fit.valid_loss = detail::logistic_bce(valid_x, valid_y, fit.w, fit.b);
    return fit;
  }

  Vec best_w = fit.w;
  double best_b = fit.b;
  double best_valid = detail::logistic_bce(valid_x, valid_y, fit.w, fit.b);
  std::size_t since_best = 0;
  const double lr = cfg.learning_rate;

  for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
    Vec grad_w(vocab_size, 0.0);
    double grad_b = 0.0;
    for (std::size_t d = 0; d < train_x.size(); ++d) {
      const double err =
          sigmoid(detail::logistic_margin(train_x[d], fit.w, fit.b)) -
          static_cast<double>(train_y[d]);
      grad_b += err;
      for (const auto& [tok, count] : train_x[d].entries) {
        grad_w[static_cast<std::size_t>(tok)] += err * count;
      }
    }
    const double thresh = lr * l1;
    for (std::size_t j = 0; j < vocab_size; ++j) {
      const double next = fit.w[j] - lr * grad_w[j] / n;
      fit.w[j] = next > thresh ? next - thresh
                               : (next < -thresh ? next + thresh : 0.0);
    }
    fit.b -= lr * grad_b / n;

    const double valid = detail::logistic_bce(valid_x, valid_y, fit.w, fit.b);
    if (valid < best_valid) {
      best_valid = valid;
      best_w = fit.w;
      best_b = fit.b;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  fit.w = std::move(best_w);
  fit.b = best_b;
  fit.valid_loss = best_valid;
  for (double v : fit.w) {
    if (v != 0.0) ++fit.nonzeros;
  }
  return fit;
}

/// Trains the full per-label model zoo member: independent classifiers with
/// per-label l1 strength chosen on the validation split.
inline ModelParameters logistic_train(const EncodedCorpus& train,
                                      const EncodedCorpus& valid,
                                      std::size_t vocab_size,
                                      const LogisticTrainConfig& cfg) {
  check_arg(!cfg.l1_grid.empty(), "logistic_train: empty l1 grid");
  const std::size_t L = train.num_labels;
  ModelConfig mc;
  mc.kind = ModelKind::kLogistic;
  mc.num_labels = L;
  ModelParameters model = ModelParameters::build(mc, vocab_size);

  const auto train_x = bow_features(train);
  const auto valid_x = bow_features(valid);
  std::vector<std::vector<std::uint8_t>> train_y(L), valid_y(L);
  for (std::size_t l = 0; l < L; ++l) {
    train_y[l].resize(train.docs.size());
    valid_y[l].resize(valid.docs.size());
  }
  for (std::size_t d = 0; d < train.docs.size(); ++d) {
    for (int l : train.docs[d].labels) train_y[static_cast<std::size_t>(l)][d] = 1;
  }
  for (std::size_t d = 0; d < valid.docs.size(); ++d) {
    for (int l : valid.docs[d].labels) valid_y[static_cast<std::size_t>(l)][d] = 1;
  }

  parallel_for(L, cfg.workers, [&](std::size_t l) {
    LogisticFit best;
    bool first = true;
    for (double l1 : cfg.l1_grid) {
      LogisticFit fit = logistic_fit_label(train_x, train_y[l], valid_x,
                                           valid_y[l], vocab_size, l1, cfg);
      if (first || fit.valid_loss < best.valid_loss) {
        best = std::move(fit);
        first = false;
      }
    }
    for (std::size_t j = 0; j < vocab_size; ++j) {
      model.head.P.at(l, j) = best.w[j];
    }
    model.head.b_p[l] = best.b;
  });
  return model;
}

}  // namespace grnn

#endif  // GRNN_MODELS_HPP_
