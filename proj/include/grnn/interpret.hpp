// Per-token belief trajectories for chosen labels, with CSV/JSON export and a
// self-contained HTML heatmap colored by per-token belief change.
//
// Grounded models read the tracked label's grounded dimension through the
// prediction rescaling; GRU-family models apply the affine head row at every
// step. For bidirectional models each per-step belief is conditioned on the
// reverse pass over the whole document (noted in the trace header).

#ifndef GRNN_INTERPRET_HPP_
#define GRNN_INTERPRET_HPP_

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "grnn/training.hpp"

namespace grnn {

struct BeliefTrace {
  std::string doc_id;
  std::string model_kind;
  std::string note;  // conditioning caveats, one line
  std::vector<std::string> tokens;
  std::vector<int> label_ids;
  std::vector<std::string> label_names;
  Vec prior;                      // belief before any token, per label
  std::vector<Vec> belief;        // [token][tracked label], in [0, 1]
  std::vector<Vec> delta;         // row 0 is belief - prior
  std::vector<Vec> raw_grounded;  // grounded kinds: g_t per tracked label
};

namespace detail {

inline double head_row_belief(const PredictionHead& head, std::size_t label,
                              const Vec& state) {
  const double* row = head.P.row(label);
  double s = head.b_p[label];
  for (std::size_t i = 0; i < state.size(); ++i) s += row[i] * state[i];
  return sigmoid(s);
}

}  // namespace detail

inline BeliefTrace belief_trajectory(const Checkpoint& ckpt,
                                     const Document& doc,
                                     const Vocabulary& vocab,
                                     const std::vector<int>& tracked) {
  const ModelParameters& m = ckpt.params;
  const ModelKind kind = m.config.kind;
  if (!is_recurrent(kind)) {
    throw std::invalid_argument(str_cat(
        "belief_trajectory: model kind \"", to_string(kind),
        "\" keeps no per-token state to trace; use a gru/bigru/bigru_l/"
        "grnn/bigrnn checkpoint"));
  }
  check_arg(!tracked.empty(), "belief_trajectory: no labels to track");
  for (int l : tracked) {
    check_arg(l >= 0 && static_cast<std::size_t>(l) < m.config.num_labels,
              str_cat("belief_trajectory: label id ", l, " out of range"));
  }

  const ForwardResult fwd = forward_sequence(m, doc.tokens);
  const std::size_t T = doc.tokens.size();
  const std::size_t K = tracked.size();

  BeliefTrace trace;
  trace.doc_id = doc.id;
  trace.model_kind = to_string(kind);
  if (is_bidirectional(kind)) {
    trace.note =
        "per-step beliefs are conditioned on the reverse pass over the full"
        " document";
  }
  trace.label_ids = tracked;
  for (int l : tracked) {
    trace.label_names.push_back(ckpt.label_names[static_cast<std::size_t>(l)]);
  }
  for (int tok : doc.tokens) {
    trace.tokens.push_back(vocab.tokens[static_cast<std::size_t>(tok)]);
  }

  const bool grounded = is_grounded(kind);
  auto grounded_belief = [&](double g, std::size_t label) {
    Vec one{g};
    const Vec bias{m.grnn.b_p[label]};
    return predict_grounded(one, bias, m.config.grounded_eps)[0];
  };

  // Prior: prediction from the initial (zero) recurrent state, with the
  // reverse context attached for the state-concatenating bidirectional GRU.
  trace.prior.assign(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const auto label = static_cast<std::size_t>(tracked[k]);
    if (grounded) {
      trace.prior[k] = grounded_belief(0.0, label);
    } else if (kind == ModelKind::kBiGru) {
      const Vec zero(m.config.hidden_or_control_dim, 0.0);
      trace.prior[k] =
          detail::head_row_belief(m.head, label, concat(zero, fwd.rev_states[0]));
    } else {
      const Vec zero(m.head.P.cols(), 0.0);
      trace.prior[k] = detail::head_row_belief(m.head, label, zero);
    }
  }

  trace.belief.assign(T, Vec(K, 0.0));
  trace.delta.assign(T, Vec(K, 0.0));
  if (grounded) trace.raw_grounded.assign(T, Vec(K, 0.0));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      const auto label = static_cast<std::size_t>(tracked[k]);
      double belief = 0.0;
      if (grounded) {
        const double g = fwd.states[t][label];
        trace.raw_grounded[t][k] = g;
        belief = grounded_belief(g, label);
      } else if (kind == ModelKind::kBiGru) {
        belief = detail::head_row_belief(
            m.head, label, concat(fwd.states[t], fwd.rev_states[0]));
      } else {
        belief = detail::head_row_belief(m.head, label, fwd.states[t]);
      }
      trace.belief[t][k] = belief;
      trace.delta[t][k] =
          belief - (t == 0 ? trace.prior[k] : trace.belief[t - 1][k]);
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Emission.
// ---------------------------------------------------------------------------

enum class TraceFormat { kCsv, kJson, kHtml };

inline TraceFormat trace_format_from_string(const std::string& name) {
  if (name == "csv") return TraceFormat::kCsv;
  if (name == "json") return TraceFormat::kJson;
  if (name == "html") return TraceFormat::kHtml;
  throw std::invalid_argument("unknown trace format: " + name);
}

/// Belief change below which a token renders as neutral; deltas at or beyond
/// +/- kDeltaClip get the fully saturated color.
inline constexpr double kDeltaClip = 0.2;

namespace detail {

inline std::string f9(double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.9f", v);
  return buffer;
}

/// Symmetric diverging color: blue for decreases, red for increases, white
/// at zero, clipped at |delta| = kDeltaClip.
inline std::string delta_color(double delta) {
  const double t =
      std::clamp(delta / kDeltaClip, -1.0, 1.0);
  const double mag = std::abs(t);
  const int target_r = t >= 0.0 ? 215 : 44;
  const int target_g = t >= 0.0 ? 25 : 123;
  const int target_b = t >= 0.0 ? 28 : 182;
  auto channel = [&](int target) {
    return static_cast<int>(std::lround(255.0 + (target - 255.0) * mag));
  };
  return str_cat("rgb(", channel(target_r), ",", channel(target_g), ",",
                 channel(target_b), ")");
}

inline std::string html_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace detail

inline std::string render_trace_csv(const BeliefTrace& trace) {
  std::string out = "token_index,token";
  for (const std::string& name : trace.label_names) {
    out += ",belief:" + name + ",delta:" + name;
  }
  if (!trace.raw_grounded.empty()) {
    for (const std::string& name : trace.label_names) out += ",g:" + name;
  }
  out += '\n';
  for (std::size_t t = 0; t < trace.tokens.size(); ++t) {
    out += str_cat(t, ",", trace.tokens[t]);
    for (std::size_t k = 0; k < trace.label_names.size(); ++k) {
      out += "," + detail::f9(trace.belief[t][k]);
      out += "," + detail::f9(trace.delta[t][k]);
    }
    if (!trace.raw_grounded.empty()) {
      for (std::size_t k = 0; k < trace.label_names.size(); ++k) {
        out += "," + detail::f9(trace.raw_grounded[t][k]);
      }
    }
    out += '\n';
  }
  return out;
}

inline nlohmann::ordered_json trace_to_json(const BeliefTrace& trace) {
  nlohmann::ordered_json j;
  j["doc_id"] = trace.doc_id;
  j["model_kind"] = trace.model_kind;
  if (!trace.note.empty()) j["note"] = trace.note;
  j["labels"] = trace.label_names;
  j["tokens"] = trace.tokens;
  j["prior"] = trace.prior;
  j["belief"] = trace.belief;
  j["delta"] = trace.delta;
  if (!trace.raw_grounded.empty()) j["grounded_state"] = trace.raw_grounded;
  return j;
}

inline std::string render_trace_html(const BeliefTrace& trace) {
  std::string out =
      "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\n<title>belief "
      "trace ";
  out += detail::html_escape(trace.doc_id);
  out +=
      "</title>\n<style>body{font-family:sans-serif;margin:2em;}"
      "span.tok{padding:1px 2px;margin:0 1px;border-radius:2px;}"
      "div.legend span{display:inline-block;width:3.5em;text-align:center;}"
      "</style></head>\n<body>\n";
  out += "<h1>" + detail::html_escape(trace.doc_id) + " (" +
         detail::html_escape(trace.model_kind) + ")</h1>\n";
  if (!trace.note.empty()) {
    out += "<p><em>" + detail::html_escape(trace.note) + "</em></p>\n";
  }
  out += "<div class=\"legend\">belief change: ";
  for (double v : {-kDeltaClip, -kDeltaClip / 2, 0.0, kDeltaClip / 2,
                   kDeltaClip}) {
    out += "<span style=\"background-color:" + detail::delta_color(v) + "\">";
    char label[16];
    std::snprintf(label, sizeof label, "%+.2f", v);
    out += label;
    out += "</span>";
  }
  out += "</div>\n";
  for (std::size_t k = 0; k < trace.label_names.size(); ++k) {
    out += "<h2>" + detail::html_escape(trace.label_names[k]) + " (prior " +
           detail::f9(trace.prior[k]) + ")</h2>\n<p>";
    for (std::size_t t = 0; t < trace.tokens.size(); ++t) {
      out += "<span class=\"tok\" style=\"background-color:" +
             detail::delta_color(trace.delta[t][k]) + "\" title=\"belief " +
             detail::f9(trace.belief[t][k]) + ", delta " +
             detail::f9(trace.delta[t][k]) + "\">" +
             detail::html_escape(trace.tokens[t]) + "</span> ";
    }
    out += "</p>\n";
  }
  out += "</body></html>\n";
  return out;
}

/// Writes the trace in the requested format; output bytes are a pure function
/// of the trace.
inline void emit_trace(const BeliefTrace& trace, TraceFormat format,
                       const std::string& path) {
  std::string payload;
  switch (format) {
    case TraceFormat::kCsv: payload = render_trace_csv(trace); break;
    case TraceFormat::kJson: payload = trace_to_json(trace).dump(2) + "\n"; break;
    case TraceFormat::kHtml: payload = render_trace_html(trace); break;
  }
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write trace: " + path);
  out << payload;
  if (!out) throw std::runtime_error("trace write failed: " + path);
}

}  // namespace grnn

#endif  // GRNN_INTERPRET_HPP_
