// Multi-label evaluation: micro/macro precision-recall-F1, AUC(ROC) via the
// tie-aware rank statistic, AUC(PR) as average precision, precision/recall at
// n, per-label breakdowns, and report rendering.
//
// Conventions (also printed in every report header):
//   - binarization threshold 0.5, strict (score must exceed it);
//   - a zero denominator makes precision/recall/F1 zero;
//   - macro F1 averages all labels with that zero convention;
//   - macro AUC averages only labels where the curve is defined;
//   - top-n ties are broken by ascending label index.

#ifndef GRNN_METRICS_HPP_
#define GRNN_METRICS_HPP_

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "grnn/training.hpp"

namespace grnn {

struct ScoreMatrix {
  std::vector<std::string> doc_ids;
  std::size_t num_labels = 0;
  std::vector<Vec> scores;                        // [doc][label]
  std::vector<std::vector<std::uint8_t>> gold;    // [doc][label]

  std::size_t num_docs() const { return scores.size(); }
};

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

namespace detail {

inline double safe_div(double num, double den) {
  return den == 0.0 ? 0.0 : num / den;
}

inline PRF prf_from_counts(double tp, double fp, double fn) {
  PRF out;
  out.precision = safe_div(tp, tp + fp);
  out.recall = safe_div(tp, tp + fn);
  out.f1 = safe_div(2.0 * out.precision * out.recall,
                    out.precision + out.recall);
  return out;
}

}  // namespace detail

/// Pools every (document, label) cell as one binary decision.
inline PRF micro_prf(const ScoreMatrix& sm, double threshold = 0.5) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t d = 0; d < sm.num_docs(); ++d) {
    for (std::size_t l = 0; l < sm.num_labels; ++l) {
      const bool predicted = sm.scores[d][l] > threshold;
      const bool gold = sm.gold[d][l] != 0;
      tp += predicted && gold;
      fp += predicted && !gold;
      fn += !predicted && gold;
    }
  }
  return detail::prf_from_counts(tp, fp, fn);
}

struct MacroF1Result {
  double macro_f1 = 0.0;
  Vec per_label_f1;
};

inline MacroF1Result macro_prf(const ScoreMatrix& sm, double threshold = 0.5) {
  MacroF1Result out;
  out.per_label_f1.assign(sm.num_labels, 0.0);
  for (std::size_t l = 0; l < sm.num_labels; ++l) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t d = 0; d < sm.num_docs(); ++d) {
      const bool predicted = sm.scores[d][l] > threshold;
      const bool gold = sm.gold[d][l] != 0;
      tp += predicted && gold;
      fp += predicted && !gold;
      fn += !predicted && gold;
    }
    out.per_label_f1[l] = detail::prf_from_counts(tp, fp, fn).f1;
  }
  for (double f : out.per_label_f1) out.macro_f1 += f;
  if (sm.num_labels > 0) {
    out.macro_f1 /= static_cast<double>(sm.num_labels);
  }
  return out;
}

/// Rank statistic with half credit for ties: P(score_pos > score_neg) +
/// 0.5 P(tie). Undefined (nullopt) without at least one positive and one
/// negative.
inline std::optional<double> auc_roc(const Vec& scores,
                                     const std::vector<std::uint8_t>& gold) {
  check_shape(scores.size() == gold.size(), "auc_roc: length mismatch");
  const std::size_t n = scores.size();
  std::size_t positives = 0;
  for (std::uint8_t g : gold) positives += g != 0;
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  // Average ranks over tie groups; rank sums stay exactly representable.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) +
                             static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (gold[idx[k]] != 0) rank_sum_pos += avg_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(positives);
  const double u = rank_sum_pos - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

/// Average precision: mean over positives, in score-descending order with
/// ties kept in original order, of the precision at that rank. Undefined
/// without positives.
inline std::optional<double> auc_pr(const Vec& scores,
                                    const std::vector<std::uint8_t>& gold) {
  check_shape(scores.size() == gold.size(), "auc_pr: length mismatch");
  const std::size_t n = scores.size();
  std::size_t positives = 0;
  for (std::uint8_t g : gold) positives += g != 0;
  if (positives == 0) return std::nullopt;

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 1; rank <= n; ++rank) {
    if (gold[idx[rank - 1]] != 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank);
    }
  }
  return sum / static_cast<double>(positives);
}

/// Indices of the n highest-scored labels, ties by ascending label index.
inline std::vector<std::size_t> top_n_labels(const Vec& scores,
                                             std::size_t n) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  n = std::min(n, scores.size());
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  idx.resize(n);
  return idx;
}

/// Fraction of the top n that are gold. n beyond the label count clamps.
inline double p_at_n(const Vec& scores, const std::vector<std::uint8_t>& gold,
                     std::size_t n) {
  check_arg(n >= 1, "p_at_n: n must be >= 1");
  const auto top = top_n_labels(scores, n);
  double hits = 0;
  for (std::size_t l : top) hits += gold[l] != 0;
  return hits / static_cast<double>(top.size());
}

/// Fraction of the gold labels covered by the top n; undefined for documents
/// without gold labels (those are excluded from corpus means).
inline std::optional<double> r_at_n(const Vec& scores,
                                    const std::vector<std::uint8_t>& gold,
                                    std::size_t n) {
  check_arg(n >= 1, "r_at_n: n must be >= 1");
  double total = 0;
  for (std::uint8_t g : gold) total += g != 0;
  if (total == 0) return std::nullopt;
  const auto top = top_n_labels(scores, n);
  double hits = 0;
  for (std::size_t l : top) hits += gold[l] != 0;
  return hits / total;
}

// ---------------------------------------------------------------------------
// Report assembly.
// ---------------------------------------------------------------------------

struct PerLabelStat {
  std::string name;
  std::size_t frequency = 0;  // training-split count
  double f1 = 0.0;
  std::optional<double> auc_pr;
  std::optional<double> auc_roc;
};

struct MetricsReport {
  double precision = 0.0;  // micro, at the binarization threshold
  double recall = 0.0;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  std::optional<double> micro_auc_pr;
  std::optional<double> micro_auc_roc;
  double macro_auc_pr = 0.0;   // mean over labels with a defined curve
  double macro_auc_roc = 0.0;
  std::size_t auc_pr_skipped = 0;
  std::size_t auc_roc_skipped = 0;
  std::vector<std::size_t> n_list;
  Vec p_at_n_mean;  // parallel to n_list
  Vec r_at_n_mean;
  std::vector<PerLabelStat> per_label;
  std::string conventions;
};

inline MetricsReport compute_metrics(const ScoreMatrix& sm,
                                     const std::vector<std::string>& names,
                                     const std::vector<std::size_t>& freqs,
                                     std::vector<std::size_t> n_list = {8, 24,
                                                                        40}) {
  check_shape(names.size() == sm.num_labels && freqs.size() == sm.num_labels,
              "compute_metrics: label metadata length mismatch");
  MetricsReport report;
  const PRF micro = micro_prf(sm);
  report.precision = micro.precision;
  report.recall = micro.recall;
  report.micro_f1 = micro.f1;
  const MacroF1Result macro = macro_prf(sm);
  report.macro_f1 = macro.macro_f1;

  // Pooled cells for the micro-averaged curves.
  Vec pooled_scores;
  std::vector<std::uint8_t> pooled_gold;
  pooled_scores.reserve(sm.num_docs() * sm.num_labels);
  pooled_gold.reserve(sm.num_docs() * sm.num_labels);
  for (std::size_t d = 0; d < sm.num_docs(); ++d) {
    pooled_scores.insert(pooled_scores.end(), sm.scores[d].begin(),
                         sm.scores[d].end());
    pooled_gold.insert(pooled_gold.end(), sm.gold[d].begin(),
                       sm.gold[d].end());
  }
  report.micro_auc_pr = auc_pr(pooled_scores, pooled_gold);
  report.micro_auc_roc = auc_roc(pooled_scores, pooled_gold);

  Vec column(sm.num_docs());
  std::vector<std::uint8_t> column_gold(sm.num_docs());
  double sum_pr = 0.0, sum_roc = 0.0;
  std::size_t defined_pr = 0, defined_roc = 0;
  for (std::size_t l = 0; l < sm.num_labels; ++l) {
    for (std::size_t d = 0; d < sm.num_docs(); ++d) {
      column[d] = sm.scores[d][l];
      column_gold[d] = sm.gold[d][l];
    }
    PerLabelStat stat;
    stat.name = names[l];
    stat.frequency = freqs[l];
    stat.f1 = macro.per_label_f1[l];
    stat.auc_pr = auc_pr(column, column_gold);
    stat.auc_roc = auc_roc(column, column_gold);
    if (stat.auc_pr) {
      sum_pr += *stat.auc_pr;
      ++defined_pr;
    }
    if (stat.auc_roc) {
      sum_roc += *stat.auc_roc;
      ++defined_roc;
    }
    report.per_label.push_back(std::move(stat));
  }
  report.macro_auc_pr = detail::safe_div(sum_pr, defined_pr);
  report.macro_auc_roc = detail::safe_div(sum_roc, defined_roc);
  report.auc_pr_skipped = sm.num_labels - defined_pr;
  report.auc_roc_skipped = sm.num_labels - defined_roc;

  bool clamped = false;
  for (std::size_t& n : n_list) {
    if (n > sm.num_labels) {
      n = sm.num_labels;
      clamped = true;
    }
  }
  report.n_list = n_list;
  for (std::size_t n : n_list) {
    double p_sum = 0.0, r_sum = 0.0;
    std::size_t r_count = 0;
    for (std::size_t d = 0; d < sm.num_docs(); ++d) {
      p_sum += p_at_n(sm.scores[d], sm.gold[d], n);
      if (const auto r = r_at_n(sm.scores[d], sm.gold[d], n)) {
        r_sum += *r;
        ++r_count;
      }
    }
    report.p_at_n_mean.push_back(detail::safe_div(p_sum, sm.num_docs()));
    report.r_at_n_mean.push_back(detail::safe_div(r_sum, r_count));
  }

  report.conventions = str_cat(
      "threshold 0.5 strict; zero denominators give 0; macro F1 zero-fills"
      " undefined labels; macro AUC skips undefined labels (PR skipped ",
      report.auc_pr_skipped, ", ROC skipped ", report.auc_roc_skipped,
      " of ", sm.num_labels, "); top-n ties broken by ascending label index",
      clamped ? "; n clamped to label count" : "");
  return report;
}

// ---------------------------------------------------------------------------
// Scoring a corpus with a checkpoint.
// ---------------------------------------------------------------------------

inline std::uint64_t label_names_hash(const std::vector<std::string>& names) {
  std::uint64_t h = 14695981039346656037ULL;
  for (const std::string& name : names) {
    h = fnv1a64(name, h);
    h = fnv1a64("\n", h);
  }
  return h;
}

inline ScoreMatrix score_corpus(const ModelParameters& params,
                                const EncodedCorpus& corpus,
                                std::size_t workers = 1) {
  ScoreMatrix sm;
  sm.num_labels = params.config.num_labels;
  sm.doc_ids.resize(corpus.docs.size());
  sm.scores.assign(corpus.docs.size(), Vec());
  sm.gold.assign(corpus.docs.size(), {});
  parallel_for(corpus.docs.size(), workers, [&](std::size_t d) {
    const Document& doc = corpus.docs[d];
    sm.doc_ids[d] = doc.id;
    sm.scores[d] = forward_sequence(params, doc.tokens).y_hat;
    sm.gold[d] = gold_vector(doc, sm.num_labels);
  });
  return sm;
}

/// Scores a split with the checkpoint and computes the full report. The
/// checkpoint's label order must match the evaluation label space.
inline MetricsReport evaluate(const Checkpoint& ckpt,
                              const EncodedCorpus& split,
                              const LabelSpace& labels,
                              std::vector<std::size_t> n_list = {8, 24, 40},
                              std::size_t workers = 1) {
  const std::uint64_t ckpt_hash = label_names_hash(ckpt.label_names);
  const std::uint64_t space_hash = labels.hash();
  if (ckpt_hash != space_hash) {
    throw std::invalid_argument(str_cat(
        "evaluate: label-space mismatch: checkpoint ",
        detail::hex64(ckpt_hash), ", corpus ", detail::hex64(space_hash)));
  }
  const ScoreMatrix sm = score_corpus(ckpt.params, split, workers);
  return compute_metrics(sm, ckpt.label_names, ckpt.label_frequencies,
                         std::move(n_list));
}

// ---------------------------------------------------------------------------
// Per-frequency breakdown (labels ordered most to least frequent).
// ---------------------------------------------------------------------------

struct FrequencyBucket {
  std::size_t first = 0;  // rank of the bucket's most frequent label
  std::size_t count = 0;
  std::optional<double> mean_auc_pr;
};

inline std::vector<FrequencyBucket> frequency_breakdown(
    const MetricsReport& report, std::size_t num_buckets) {
  check_arg(num_buckets >= 1, "frequency_breakdown: need at least one bucket");
  std::vector<std::size_t> idx(report.per_label.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return report.per_label[a].frequency > report.per_label[b].frequency;
  });

  const std::size_t n = idx.size();
  num_buckets = std::min(num_buckets, std::max<std::size_t>(n, 1));
  std::vector<FrequencyBucket> buckets;
  const std::size_t base = n / num_buckets;
  const std::size_t extra = n % num_buckets;
  std::size_t at = 0;
  for (std::size_t b = 0; b < num_buckets; ++b) {
    FrequencyBucket bucket;
    bucket.first = at;
    bucket.count = base + (b < extra ? 1 : 0);
    double sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t k = 0; k < bucket.count; ++k) {
      const auto& stat = report.per_label[idx[at + k]];
      if (stat.auc_pr) {
        sum += *stat.auc_pr;
        ++defined;
      }
    }
    if (defined > 0) bucket.mean_auc_pr = sum / static_cast<double>(defined);
    at += bucket.count;
    buckets.push_back(bucket);
  }
  return buckets;
}

// ---------------------------------------------------------------------------
// Rendering and score import/export.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fixed(double v, int digits = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline std::string opt_fixed(const std::optional<double>& v, int digits = 3) {
  return v ? fixed(*v, digits) : std::string("-");
}

}  // namespace detail

/// Human-readable single-model results table.
inline std::string render_table(const MetricsReport& r,
                                const std::string& model_name) {
  std::ostringstream os;
  os << "# " << r.conventions << "\n";
  os << "Model";
  for (const char* col : {"P", "R", "F1(Mi)", "F1(Ma)", "AUCPR(Mi)",
                          "AUCPR(Ma)", "AUCROC(Mi)", "AUCROC(Ma)"}) {
    os << '\t' << col;
  }
  for (std::size_t n : r.n_list) os << "\tP@" << n;
  for (std::size_t n : r.n_list) os << "\tR@" << n;
  os << '\n' << model_name;
  os << '\t' << detail::fixed(r.precision) << '\t' << detail::fixed(r.recall)
     << '\t' << detail::fixed(r.micro_f1) << '\t' << detail::fixed(r.macro_f1)
     << '\t' << detail::opt_fixed(r.micro_auc_pr) << '\t'
     << detail::fixed(r.macro_auc_pr) << '\t'
     << detail::opt_fixed(r.micro_auc_roc) << '\t'
     << detail::fixed(r.macro_auc_roc);
  for (double v : r.p_at_n_mean) os << '\t' << detail::fixed(v);
  for (double v : r.r_at_n_mean) os << '\t' << detail::fixed(v);
  os << '\n';
  return os.str();
}

inline nlohmann::ordered_json report_to_json(const MetricsReport& r,
                                             const std::string& model_name) {
  nlohmann::ordered_json j;
  j["model"] = model_name;
  j["conventions"] = r.conventions;
  j["P"] = r.precision;
  j["R"] = r.recall;
  j["F1_micro"] = r.micro_f1;
  j["F1_macro"] = r.macro_f1;
  if (r.micro_auc_pr) j["AUC_PR_micro"] = *r.micro_auc_pr;
  j["AUC_PR_macro"] = r.macro_auc_pr;
  if (r.micro_auc_roc) j["AUC_ROC_micro"] = *r.micro_auc_roc;
  j["AUC_ROC_macro"] = r.macro_auc_roc;
  j["AUC_PR_skipped_labels"] = r.auc_pr_skipped;
  j["AUC_ROC_skipped_labels"] = r.auc_roc_skipped;
  for (std::size_t i = 0; i < r.n_list.size(); ++i) {
    j[str_cat("P@", r.n_list[i])] = r.p_at_n_mean[i];
    j[str_cat("R@", r.n_list[i])] = r.r_at_n_mean[i];
  }
  nlohmann::ordered_json per_label = nlohmann::ordered_json::array();
  for (const PerLabelStat& s : r.per_label) {
    nlohmann::ordered_json row;
    row["label"] = s.name;
    row["frequency"] = s.frequency;
    row["F1"] = s.f1;
    if (s.auc_pr) row["AUC_PR"] = *s.auc_pr;
    if (s.auc_roc) row["AUC_ROC"] = *s.auc_roc;
    per_label.push_back(row);
  }
  j["per_label"] = per_label;
  return j;
}

/// CSV rows: doc_id,label_index,score — the standalone-evaluation interchange.
inline void save_scores_csv(const std::string& path, const ScoreMatrix& sm) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write scores: " + path);
  out << "doc_id,label,score\n";
  char buffer[64];
  for (std::size_t d = 0; d < sm.num_docs(); ++d) {
    for (std::size_t l = 0; l < sm.num_labels; ++l) {
      std::snprintf(buffer, sizeof buffer, "%.9f", sm.scores[d][l]);
      out << sm.doc_ids[d] << ',' << l << ',' << buffer << '\n';
    }
  }
}

/// Rebuilds a ScoreMatrix from a score CSV plus the corpus that supplies the
/// gold labels. Cells absent from the file stay at score zero.
inline ScoreMatrix load_scores_csv(const std::string& path,
                                   const EncodedCorpus& corpus) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("scores not found: " + path);
  ScoreMatrix sm;
  sm.num_labels = corpus.num_labels;
  std::unordered_map<std::string, std::size_t> doc_index;
  for (const Document& doc : corpus.docs) {
    doc_index[doc.id] = sm.num_docs();
    sm.doc_ids.push_back(doc.id);
    sm.scores.emplace_back(sm.num_labels, 0.0);
    sm.gold.push_back(gold_vector(doc, sm.num_labels));
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line_no == 1) continue;  // header
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos) {
      throw std::runtime_error(
          str_cat(path, ": line ", line_no, ": expected doc_id,label,score"));
    }
    const std::string doc_id = line.substr(0, c1);
    const auto it = doc_index.find(doc_id);
    if (it == doc_index.end()) {
      throw std::runtime_error(str_cat(path, ": line ", line_no,
                                       ": unknown document \"", doc_id, "\""));
    }
    const std::size_t label =
        static_cast<std::size_t>(std::stoul(line.substr(c1 + 1, c2 - c1 - 1)));
    if (label >= sm.num_labels) {
      throw std::runtime_error(str_cat(path, ": line ", line_no,
                                       ": label index ", label,
                                       " out of range"));
    }
    sm.scores[it->second][label] = std::stod(line.substr(c2 + 1));
  }
  return sm;
}

}  // namespace grnn

#endif  // GRNN_METRICS_HPP_
