// grnn: train, evaluate, and introspect grounded recurrent models.
//
// Subcommands: synth, train, eval, predict, trace, params.
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "grnn/grnn.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what)
      : std::runtime_error(what) {}
};

void require_file(const std::string& path, const std::string& what) {
  if (path.empty() || !fs::exists(path)) {
    throw ValidationError(what + " not found: " + path);
  }
}

/// Input parsing happens before any output is produced; every failure in
/// this phase is a validation error (exit 1), not a runtime one.
template <typename F>
auto validated(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception& e) {
    throw ValidationError(e.what());
  }
}

std::vector<std::string> split_commas(const std::string& csv) {
  std::vector<std::string> out;
  std::string current;
  for (char c : csv) {
    if (c == ',') {
      if (!current.empty()) out.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) out.push_back(current);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write: " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Option bundles.
// ---------------------------------------------------------------------------

struct ModelOptions {
  std::string kind = "grnn";
  std::size_t embed_dim = 192;
  std::size_t hidden_dim = 128;
  std::size_t reverse_hidden_dim = 64;
  std::size_t attention_window = 5;
  double grounded_eps = 1e-6;

  void attach(CLI::App& cmd) {
    cmd.add_option("--model", kind,
                   "model kind: logistic|attn_bow|gru|bigru|bigru_l|grnn|"
                   "bigrnn")
        ->capture_default_str();
    cmd.add_option("--embed-dim", embed_dim, "word embedding size")
        ->capture_default_str();
    cmd.add_option("--hidden-dim", hidden_dim,
                   "hidden size (GRU family) or control size (grounded)")
        ->capture_default_str();
    cmd.add_option("--reverse-hidden-dim", reverse_hidden_dim,
                   "reverse GRU size for bidirectional kinds")
        ->capture_default_str();
    cmd.add_option("--attention-window", attention_window,
                   "attn_bow scoring window (odd)")
        ->capture_default_str();
    cmd.add_option("--grounded-eps", grounded_eps,
                   "belief clamp for the grounded head")
        ->capture_default_str();
  }

  grnn::ModelConfig to_config(std::size_t num_labels, std::uint64_t seed) const {
    grnn::ModelConfig cfg;
    cfg.kind = grnn::model_kind_from_string(kind);
    cfg.num_labels = num_labels;
    cfg.embed_dim = embed_dim;
    cfg.hidden_or_control_dim = hidden_dim;
    cfg.reverse_hidden_dim = reverse_hidden_dim;
    cfg.attention_window = attention_window;
    cfg.grounded_eps = grounded_eps;
    cfg.seed = seed;
    return cfg;
  }
};

struct TrainOptions {
  std::size_t initial_len = 50;
  double growth = 1.35;
  std::size_t max_len = 4000;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::string optimizer = "adam";
  std::size_t patience = 5;
  std::size_t epochs = 30;

  void attach(CLI::App& cmd) {
    cmd.add_option("--initial-len", initial_len,
                   "curriculum length at epoch 0")
        ->capture_default_str();
    cmd.add_option("--growth", growth, "curriculum growth factor per epoch")
        ->capture_default_str();
    cmd.add_option("--max-len", max_len, "document truncation cap")
        ->capture_default_str();
    cmd.add_option("--batch", batch, "mini-batch size")->capture_default_str();
    cmd.add_option("--lr", lr, "learning rate")->capture_default_str();
    cmd.add_option("--optimizer", optimizer, "adam|sgd")
        ->capture_default_str();
    cmd.add_option("--patience", patience,
                   "epochs without validation improvement before stopping")
        ->capture_default_str();
    cmd.add_option("--epochs", epochs, "maximum training epochs")
        ->capture_default_str();
  }

  grnn::TrainConfig to_config(std::uint64_t seed, std::size_t workers) const {
    grnn::TrainConfig cfg;
    cfg.initial_len = initial_len;
    cfg.growth = growth;
    cfg.max_len_cap = max_len;
    cfg.batch_size = batch;
    cfg.learning_rate = lr;
    cfg.optimizer = grnn::optimizer_from_string(optimizer);
    cfg.patience = patience;
    cfg.max_epochs = epochs;
    cfg.seed = seed;
    cfg.workers = workers;
    return cfg;
  }
};

// Encoded corpus plus everything needed to interpret it.
struct LoadedData {
  grnn::Vocabulary vocab;
  grnn::LabelSpace labels;
  grnn::ParentMap parents;
  bool has_parents = false;
};

grnn::EncodedCorpus encode_with(const LoadedData& data,
                                const grnn::Corpus& corpus) {
  return grnn::encode_corpus(corpus, data.vocab, data.labels,
                             data.has_parents ? &data.parents : nullptr);
}

grnn::LabelSpace label_space_of(const grnn::Checkpoint& ckpt) {
  grnn::LabelSpace space;
  for (std::size_t i = 0; i < ckpt.label_names.size(); ++i) {
    space.index[ckpt.label_names[i]] = static_cast<int>(i);
    space.names.push_back(ckpt.label_names[i]);
    space.frequencies.push_back(ckpt.label_frequencies[i]);
  }
  return space;
}

std::string default_run_dir(const ordered_json& config_echo) {
  const std::uint64_t hash = grnn::fnv1a64(config_echo.dump());
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  const auto seconds =
      std::chrono::duration_cast<std::chrono::seconds>(now).count();
  return grnn::str_cat("runs/", grnn::detail::hex64(hash).substr(0, 8), "-",
                       seconds);
}

// ---------------------------------------------------------------------------
// Subcommand implementations.
// ---------------------------------------------------------------------------

int cmd_synth(const grnn::SynthConfig& cfg, const std::string& out_dir) {
  const grnn::SynthCorpus synth = grnn::synth_generate(cfg);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  grnn::save_jsonl((dir / "train.jsonl").string(), synth.train);
  grnn::save_jsonl((dir / "valid.jsonl").string(), synth.valid);
  grnn::save_jsonl((dir / "test.jsonl").string(), synth.test);
  {
    std::string triggers;
    for (std::size_t l = 0; l < synth.label_names.size(); ++l) {
      triggers += synth.label_names[l];
      for (const std::string& t : synth.triggers[l]) triggers += "\t" + t;
      triggers += "\n";
    }
    write_text(dir / "triggers.tsv", triggers);
  }
  if (!synth.parents.empty()) {
    grnn::save_parent_map((dir / "parent_map.tsv").string(), synth.parents);
  }
  ordered_json echo;
  echo["num_labels"] = cfg.num_labels;
  echo["vocab_size"] = cfg.vocab_size;
  echo["num_docs"] = cfg.num_docs;
  echo["doc_len_min"] = cfg.doc_len_min;
  echo["doc_len_max"] = cfg.doc_len_max;
  echo["triggers_per_label"] = cfg.triggers_per_label;
  echo["label_rate"] = cfg.label_rate;
  echo["noise_rate"] = cfg.noise_rate;
  echo["hierarchy_depth"] = cfg.hierarchy_depth;
  echo["seed"] = cfg.seed;
  write_text(dir / "synth_config.json", echo.dump(2) + "\n");
  std::cout << "wrote " << synth.train.docs.size() << " train / "
            << synth.valid.docs.size() << " valid / "
            << synth.test.docs.size() << " test documents to " << out_dir
            << "\n";
  return 0;
}

int cmd_train(const ModelOptions& model_opts, const TrainOptions& train_opts,
              const std::string& train_path, const std::string& valid_path,
              const std::string& vocab_path, const std::string& labels_path,
              const std::string& parent_map_path, std::size_t top_labels,
              std::uint64_t seed, std::size_t workers, std::string out_dir,
              const std::vector<double>& l1_grid) {
  require_file(train_path, "corpus");
  require_file(valid_path, "corpus");
  if (!vocab_path.empty()) require_file(vocab_path, "vocabulary");
  if (!labels_path.empty()) require_file(labels_path, "label space");
  if (!parent_map_path.empty()) require_file(parent_map_path, "parent map");

  const grnn::Corpus train_raw =
      validated([&] { return grnn::load_jsonl(train_path); });
  const grnn::Corpus valid_raw =
      validated([&] { return grnn::load_jsonl(valid_path); });
  if (train_raw.docs.empty()) {
    throw ValidationError("corpus has no documents: " + train_path);
  }

  LoadedData data;
  if (!parent_map_path.empty()) {
    data.parents = validated([&] { return grnn::load_parent_map(parent_map_path); });
    data.has_parents = true;
  }
  data.vocab = validated([&] {
    return vocab_path.empty() ? grnn::build_vocabulary(train_raw)
                              : grnn::load_vocabulary(vocab_path);
  });
  data.labels = validated([&] {
    return labels_path.empty()
               ? grnn::build_label_space(
                     train_raw, top_labels == 0 ? SIZE_MAX : top_labels,
                     data.has_parents ? &data.parents : nullptr)
               : grnn::load_label_space(labels_path);
  });
  if (data.labels.size() == 0) {
    throw ValidationError("label space is empty; corpus has no labels");
  }
  if (top_labels != 0 && labels_path.empty() &&
      data.labels.size() < top_labels) {
    std::cerr << "warning: corpus has only " << data.labels.size()
              << " distinct labels; --top-labels " << top_labels
              << " keeps all of them\n";
  }

  const grnn::EncodedCorpus train_enc = encode_with(data, train_raw);
  const grnn::EncodedCorpus valid_enc = encode_with(data, valid_raw);
  const grnn::ModelConfig model_cfg =
      model_opts.to_config(data.labels.size(), seed);
  grnn::validate(model_cfg);
  const grnn::TrainConfig train_cfg = train_opts.to_config(seed, workers);
  grnn::validate(train_cfg);

  ordered_json echo;
  echo["model"] = grnn::detail::model_config_to_json(model_cfg);
  echo["train"] = {{"initial_len", train_cfg.initial_len},
                   {"growth", train_cfg.growth},
                   {"max_len_cap", train_cfg.max_len_cap},
                   {"batch_size", train_cfg.batch_size},
                   {"learning_rate", train_cfg.learning_rate},
                   {"optimizer", grnn::to_string(train_cfg.optimizer)},
                   {"patience", train_cfg.patience},
                   {"max_epochs", train_cfg.max_epochs},
                   {"seed", train_cfg.seed}};
  echo["paths"] = {{"train", train_path},
                   {"valid", valid_path},
                   {"vocab", vocab_path},
                   {"labels", labels_path},
                   {"parent_map", parent_map_path}};
  if (out_dir.empty()) out_dir = default_run_dir(echo);

  // All validation done; now produce outputs.
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_text(dir / "config.json", echo.dump(2) + "\n");
  grnn::save_vocabulary((dir / "vocab.tsv").string(), data.vocab);
  grnn::save_label_space((dir / "labels.tsv").string(), data.labels);

  grnn::Checkpoint ckpt;
  std::string epoch_log;
  if (model_cfg.kind == grnn::ModelKind::kLogistic) {
    grnn::LogisticTrainConfig lcfg;
    if (!l1_grid.empty()) lcfg.l1_grid = l1_grid;
    lcfg.patience = train_cfg.patience;
    lcfg.workers = workers;
    ckpt.params =
        grnn::logistic_train(train_enc, valid_enc, data.vocab.size(), lcfg);
    ckpt.label_names = data.labels.names;
    ckpt.label_frequencies = data.labels.frequencies;
    ckpt.vocab_hash = data.vocab.hash();
  } else {
    const grnn::TrainResult result = grnn::train(
        model_cfg, train_enc, valid_enc, data.labels, data.vocab, train_cfg);
    ckpt = result.checkpoint;
    for (const grnn::EpochLog& log : result.log) {
      ordered_json row;
      row["epoch"] = log.epoch;
      row["curriculum_len"] = log.curriculum_len;
      row["train_loss"] = log.train_loss;
      row["valid_loss"] = log.valid_loss;
      epoch_log += row.dump() + "\n";
      std::cout << "epoch " << log.epoch << " len " << log.curriculum_len
                << " train " << log.train_loss << " valid " << log.valid_loss
                << "\n";
    }
  }
  write_text(dir / "epochs.jsonl", epoch_log);
  grnn::save_checkpoint((dir / "checkpoint.bin").string(), ckpt);
  std::cout << "checkpoint: " << (dir / "checkpoint.bin").string() << "\n";
  return 0;
}

struct EvalInputs {
  grnn::Checkpoint ckpt;
  grnn::EncodedCorpus corpus;
  grnn::LabelSpace labels;
};

EvalInputs load_eval_inputs(const std::string& checkpoint_path,
                            const std::string& corpus_path,
                            const std::string& vocab_path,
                            const std::string& parent_map_path) {
  require_file(checkpoint_path, "checkpoint");
  require_file(corpus_path, "corpus");
  require_file(vocab_path, "vocabulary");
  if (!parent_map_path.empty()) require_file(parent_map_path, "parent map");

  EvalInputs inputs;
  inputs.ckpt = validated([&] { return grnn::load_checkpoint(checkpoint_path); });
  LoadedData data;
  data.vocab = validated([&] { return grnn::load_vocabulary(vocab_path); });
  if (data.vocab.hash() != inputs.ckpt.vocab_hash) {
    throw ValidationError(grnn::str_cat(
        "vocabulary mismatch: checkpoint was trained with vocab ",
        grnn::detail::hex64(inputs.ckpt.vocab_hash), ", file ", vocab_path,
        " hashes to ", grnn::detail::hex64(data.vocab.hash())));
  }
  if (!parent_map_path.empty()) {
    data.parents = validated([&] { return grnn::load_parent_map(parent_map_path); });
    data.has_parents = true;
  }
  data.labels = label_space_of(inputs.ckpt);
  inputs.corpus = validated(
      [&] { return encode_with(data, grnn::load_jsonl(corpus_path)); });
  inputs.labels = data.labels;
  return inputs;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& corpus_path,
             const std::string& vocab_path, const std::string& parent_map_path,
             const std::vector<std::size_t>& n_list, std::size_t buckets,
             std::size_t workers, const std::string& out_dir,
             const std::string& scores_csv_out,
             const std::string& from_scores) {
  EvalInputs inputs = load_eval_inputs(checkpoint_path, corpus_path,
                                       vocab_path, parent_map_path);
  if (!from_scores.empty()) require_file(from_scores, "scores csv");

  grnn::ScoreMatrix sm =
      from_scores.empty()
          ? grnn::score_corpus(inputs.ckpt.params, inputs.corpus, workers)
          : grnn::load_scores_csv(from_scores, inputs.corpus);
  const grnn::MetricsReport report = grnn::compute_metrics(
      sm, inputs.ckpt.label_names, inputs.ckpt.label_frequencies, n_list);

  const std::string model_name =
      grnn::to_string(inputs.ckpt.params.config.kind);
  const std::string table = grnn::render_table(report, model_name);
  std::cout << table;

  ordered_json j = grnn::report_to_json(report, model_name);
  if (buckets > 0) {
    ordered_json rows = ordered_json::array();
    for (const auto& b : grnn::frequency_breakdown(report, buckets)) {
      ordered_json row;
      row["first_rank"] = b.first;
      row["count"] = b.count;
      if (b.mean_auc_pr) row["mean_AUC_PR"] = *b.mean_auc_pr;
      rows.push_back(row);
    }
    j["frequency_buckets"] = rows;
  }

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "report.txt", table);
    write_text(fs::path(out_dir) / "report.json", j.dump(2) + "\n");
  }
  if (!scores_csv_out.empty()) {
    grnn::save_scores_csv(scores_csv_out, sm);
  }
  return 0;
}

int cmd_predict(const std::string& checkpoint_path,
                const std::string& corpus_path, const std::string& vocab_path,
                const std::string& parent_map_path, std::size_t n,
                std::size_t workers, const std::string& out_path) {
  EvalInputs inputs = load_eval_inputs(checkpoint_path, corpus_path,
                                       vocab_path, parent_map_path);
  const std::size_t num_labels = inputs.ckpt.label_names.size();
  if (n > num_labels) {
    std::cerr << "warning: n=" << n << " exceeds the " << num_labels
              << "-label space; clamping\n";
    n = num_labels;
  }
  const grnn::ScoreMatrix sm =
      grnn::score_corpus(inputs.ckpt.params, inputs.corpus, workers);
  std::string out = "doc_id\trank\tlabel\tscore\n";
  char buffer[64];
  for (std::size_t d = 0; d < sm.num_docs(); ++d) {
    const auto top = grnn::top_n_labels(sm.scores[d], n);
    for (std::size_t r = 0; r < top.size(); ++r) {
      std::snprintf(buffer, sizeof buffer, "%.9f", sm.scores[d][top[r]]);
      out += grnn::str_cat(sm.doc_ids[d], "\t", r + 1, "\t",
                           inputs.ckpt.label_names[top[r]], "\t", buffer,
                           "\n");
    }
  }
  if (out_path.empty()) {
    std::cout << out;
  } else {
    write_text(out_path, out);
  }
  return 0;
}

int cmd_trace(const std::string& checkpoint_path,
              const std::string& corpus_path, const std::string& vocab_path,
              const std::string& doc_id, const std::string& labels_csv,
              const std::string& format, const std::string& out_path) {
  require_file(checkpoint_path, "checkpoint");
  require_file(corpus_path, "corpus");
  require_file(vocab_path, "vocabulary");
  const grnn::Checkpoint ckpt =
      validated([&] { return grnn::load_checkpoint(checkpoint_path); });
  const grnn::Vocabulary vocab =
      validated([&] { return grnn::load_vocabulary(vocab_path); });
  if (vocab.hash() != ckpt.vocab_hash) {
    throw ValidationError("vocabulary mismatch with checkpoint");
  }
  const grnn::TraceFormat trace_format =
      grnn::trace_format_from_string(format);

  LoadedData data;
  data.vocab = vocab;
  data.labels = label_space_of(ckpt);
  const grnn::EncodedCorpus corpus = validated(
      [&] { return encode_with(data, grnn::load_jsonl(corpus_path)); });

  const grnn::Document* doc = nullptr;
  for (const grnn::Document& candidate : corpus.docs) {
    if (candidate.id == doc_id) {
      doc = &candidate;
      break;
    }
  }
  if (doc == nullptr) {
    throw ValidationError("unknown document id: " + doc_id);
  }
  std::vector<int> tracked;
  for (const std::string& name : split_commas(labels_csv)) {
    const int id = data.labels.id_of(name);
    if (id < 0) throw ValidationError("unknown label name: " + name);
    tracked.push_back(id);
  }
  if (tracked.empty()) throw ValidationError("no labels requested");

  const grnn::BeliefTrace trace =
      grnn::belief_trajectory(ckpt, *doc, vocab, tracked);
  grnn::emit_trace(trace, trace_format, out_path);
  std::cout << "trace written to " << out_path << "\n";
  return 0;
}

int cmd_params(const ModelOptions& model_opts, std::size_t num_labels,
               std::size_t vocab_size) {
  const grnn::ModelConfig cfg = model_opts.to_config(num_labels, 0);
  grnn::validate(cfg);
  const std::size_t count = grnn::count_parameters(cfg, vocab_size);
  std::cout << "model: " << grnn::to_string(cfg.kind) << "\n"
            << "labels: " << cfg.num_labels << "\n"
            << "non-embedding parameters: " << count << "\n";
  if (vocab_size > 0 && cfg.kind != grnn::ModelKind::kLogistic) {
    std::cout << "embedding parameters: "
              << grnn::embedding_parameter_count(cfg, vocab_size) << "\n";
  }
  if (grnn::is_grounded(cfg.kind)) {
    const std::size_t matched = grnn::matched_gru_hidden(
        cfg.num_labels, cfg.hidden_or_control_dim, cfg.embed_dim);
    std::cout << "matched GRU hidden size: " << matched << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grounded recurrent neural networks for multi-label text"
               " classification"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read defaults from a TOML/INI config file");

  std::uint64_t seed = 0;
  std::size_t workers = 1;
  app.add_option("--seed", seed, "seed for every stochastic choice")
      ->capture_default_str();
  app.add_option("--workers", workers, "worker threads (0 = hardware)")
      ->capture_default_str();

  // synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a planted-keyword corpus");
  grnn::SynthConfig synth_cfg;
  std::string synth_out;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--labels", synth_cfg.num_labels, "label count")
      ->capture_default_str();
  synth->add_option("--vocab-size", synth_cfg.vocab_size, "vocabulary size")
      ->capture_default_str();
  synth->add_option("--docs", synth_cfg.num_docs, "document count")
      ->capture_default_str();
  synth->add_option("--len-min", synth_cfg.doc_len_min, "minimum doc length")
      ->capture_default_str();
  synth->add_option("--len-max", synth_cfg.doc_len_max, "maximum doc length")
      ->capture_default_str();
  synth->add_option("--triggers", synth_cfg.triggers_per_label,
                    "trigger tokens per label")
      ->capture_default_str();
  synth->add_option("--label-rate", synth_cfg.label_rate,
                    "per-label positive probability")
      ->capture_default_str();
  synth->add_option("--noise-rate", synth_cfg.noise_rate,
                    "background token probability")
      ->capture_default_str();
  synth->add_option("--hierarchy-depth", synth_cfg.hierarchy_depth,
                    "ancestor closure depth (0 = flat)")
      ->capture_default_str();

  // train ---------------------------------------------------------------
  auto* train = app.add_subcommand("train", "train a model");
  ModelOptions model_opts;
  TrainOptions train_opts;
  model_opts.attach(*train);
  train_opts.attach(*train);
  std::string train_path, valid_path, vocab_path, labels_path, parent_path;
  std::string train_out;
  std::size_t top_labels = 0;
  std::vector<double> l1_grid;
  train->add_option("--train", train_path, "training corpus (JSONL)")
      ->required();
  train->add_option("--valid", valid_path, "validation corpus (JSONL)")
      ->required();
  train->add_option("--vocab", vocab_path,
                    "vocabulary TSV (default: build from training corpus)");
  train->add_option("--labels-file", labels_path,
                    "label-space TSV (default: build from training corpus)");
  train->add_option("--parent-map", parent_path,
                    "child TAB parent hierarchy for label closure");
  train->add_option("--top-labels", top_labels,
                    "keep only the most frequent labels (0 = all)")
      ->capture_default_str();
  train->add_option("--l1-grid", l1_grid,
                    "l1 strengths for the logistic baseline");
  train->add_option("--out", train_out,
                    "run directory (default runs/<config-hash>-<time>)");

  // eval ----------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_corpus, eval_vocab, eval_parents, eval_out;
  std::string scores_out, from_scores;
  std::vector<std::size_t> n_list = {8, 24, 40};
  std::size_t buckets = 0;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--corpus", eval_corpus, "evaluation corpus (JSONL)")
      ->required();
  eval->add_option("--vocab", eval_vocab, "vocabulary TSV")->required();
  eval->add_option("--parent-map", eval_parents, "label hierarchy");
  eval->add_option("--n", n_list, "cutoffs for P@n / R@n")
      ->capture_default_str();
  eval->add_option("--buckets", buckets,
                   "per-frequency AUC(PR) buckets in the JSON report");
  eval->add_option("--out", eval_out, "directory for report.txt/report.json");
  eval->add_option("--scores-csv", scores_out, "also dump scores as CSV");
  eval->add_option("--from-scores", from_scores,
                   "evaluate a scores CSV instead of running the model");

  // predict ---------------------------------------------------------------
  auto* predict = app.add_subcommand("predict", "emit top-n labels per doc");
  std::string pred_ckpt, pred_corpus, pred_vocab, pred_parents, pred_out;
  std::size_t top_n = 8;
  predict->add_option("--checkpoint", pred_ckpt, "checkpoint file")
      ->required();
  predict->add_option("--corpus", pred_corpus, "corpus (JSONL)")->required();
  predict->add_option("--vocab", pred_vocab, "vocabulary TSV")->required();
  predict->add_option("--parent-map", pred_parents, "label hierarchy");
  predict->add_option("--n", top_n, "labels per document")
      ->capture_default_str();
  predict->add_option("--out", pred_out, "output TSV (default stdout)");

  // trace -----------------------------------------------------------------
  auto* trace = app.add_subcommand("trace", "belief trajectory for one doc");
  std::string trace_ckpt, trace_corpus, trace_vocab, trace_doc, trace_labels;
  std::string trace_format = "html", trace_out;
  trace->add_option("--checkpoint", trace_ckpt, "checkpoint file")->required();
  trace->add_option("--corpus", trace_corpus, "corpus (JSONL)")->required();
  trace->add_option("--vocab", trace_vocab, "vocabulary TSV")->required();
  trace->add_option("--doc", trace_doc, "document id")->required();
  trace->add_option("--labels", trace_labels, "comma-separated label names")
      ->required();
  trace->add_option("--format", trace_format, "csv|json|html")
      ->capture_default_str();
  trace->add_option("--out", trace_out, "output file")->required();

  // params ------------------------------------------------------------------
  auto* params = app.add_subcommand("params", "parameter accounting");
  ModelOptions params_opts;
  params_opts.attach(*params);
  std::size_t params_labels = 0;
  std::size_t params_vocab = 0;
  params->add_option("--labels", params_labels, "label count")->required();
  params->add_option("--vocab-size", params_vocab,
                     "vocabulary size (embedding and logistic accounting)");

  for (CLI::App* sub : {synth, train, eval, predict, trace, params}) {
    sub->fallthrough();  // global --seed/--workers may follow the subcommand
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (workers == 0) workers = grnn::default_workers();
    if (synth->parsed()) return cmd_synth(synth_cfg, synth_out);
    if (train->parsed()) {
      return cmd_train(model_opts, train_opts, train_path, valid_path,
                       vocab_path, labels_path, parent_path, top_labels, seed,
                       workers, train_out, l1_grid);
    }
    if (eval->parsed()) {
      return cmd_eval(eval_ckpt, eval_corpus, eval_vocab, eval_parents, n_list,
                      buckets, workers, eval_out, scores_out, from_scores);
    }
    if (predict->parsed()) {
      return cmd_predict(pred_ckpt, pred_corpus, pred_vocab, pred_parents,
                         top_n, workers, pred_out);
    }
    if (trace->parsed()) {
      return cmd_trace(trace_ckpt, trace_corpus, trace_vocab, trace_doc,
                       trace_labels, trace_format, trace_out);
    }
    if (params->parsed()) {
      return cmd_params(params_opts, params_labels, params_vocab);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const grnn::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
