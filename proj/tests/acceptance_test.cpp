// Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
// The expensive pieces (desk-scale planted-keyword training runs) are built
// once and shared across criteria.

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "grnn/grnn.hpp"
#include "test_util.hpp"

namespace grnn {
namespace {

namespace fs = std::filesystem;
using testutil::max_abs_diff;
using testutil::random_semidiag;
using testutil::random_vec;

void report(int criterion, const std::string& what, bool pass) {
  std::printf("[criterion %d] %s: %s\n", criterion, what.c_str(),
              pass ? "PASS" : "FAIL");
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------
// Shared desk-scale world: the planted-keyword corpus and the trained
// GRNN / capacity-matched GRU used by criteria 5, 8 and 10.
// ---------------------------------------------------------------------------

struct World {
  SynthCorpus synth;
  Vocabulary vocab;
  LabelSpace labels;
  EncodedCorpus train, valid, test;
  std::vector<std::set<std::string>> trigger_sets;  // per label id
  ModelConfig grnn_cfg, gru_cfg;
  TrainConfig train_cfg;
};

const World& world() {
  static const World w = [] {
    World built;
    SynthConfig sc;
    sc.num_labels = 50;
    sc.vocab_size = 2000;
    sc.num_docs = 5000;
    sc.doc_len_min = 30;
    sc.doc_len_max = 120;
    sc.triggers_per_label = 2;
    sc.label_rate = 0.06;
    sc.noise_rate = 0.5;
    sc.seed = 1;
    built.synth = synth_generate(sc);
    built.vocab = build_vocabulary(built.synth.train);
    built.labels = build_label_space(built.synth.train, sc.num_labels);
    built.train = encode_corpus(built.synth.train, built.vocab, built.labels);
    built.valid = encode_corpus(built.synth.valid, built.vocab, built.labels);
    built.test = encode_corpus(built.synth.test, built.vocab, built.labels);

    built.trigger_sets.resize(built.labels.size());
    for (std::size_t l = 0; l < built.synth.label_names.size(); ++l) {
      const int id = built.labels.id_of(built.synth.label_names[l]);
      if (id < 0) continue;
      built.trigger_sets[static_cast<std::size_t>(id)] = {
          built.synth.triggers[l].begin(), built.synth.triggers[l].end()};
    }

    built.grnn_cfg.kind = ModelKind::kGrnn;
    built.grnn_cfg.num_labels = built.labels.size();
    built.grnn_cfg.embed_dim = 32;
    built.grnn_cfg.hidden_or_control_dim = 32;
    built.grnn_cfg.seed = 2;

    built.gru_cfg = built.grnn_cfg;
    built.gru_cfg.kind = ModelKind::kGru;
    built.gru_cfg.hidden_or_control_dim =
        matched_gru_hidden(built.labels.size(), 32, 32);

    built.train_cfg.initial_len = 50;
    built.train_cfg.growth = 1.35;
    built.train_cfg.max_len_cap = 120;
    built.train_cfg.batch_size = 32;
    built.train_cfg.learning_rate = 3e-3;
    built.train_cfg.optimizer = OptimizerKind::kAdam;
    built.train_cfg.patience = 5;
    built.train_cfg.max_epochs = 30;
    built.train_cfg.seed = 2;
    built.train_cfg.workers = default_workers();
    return built;
  }();
  return w;
}

EncodedCorpus train_fraction(const World& w, double fraction) {
  std::vector<std::size_t> order(w.train.docs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(3);
  rng.shuffle(order);
  EncodedCorpus out;
  out.num_labels = w.train.num_labels;
  const auto keep = static_cast<std::size_t>(
      fraction * static_cast<double>(order.size()));
  for (std::size_t i = 0; i < keep; ++i) {
    out.docs.push_back(w.train.docs[order[i]]);
  }
  return out;
}

Checkpoint run_training(const ModelConfig& model_cfg,
                        const EncodedCorpus& train_split) {
  const World& w = world();
  TrainResult result =
      train(model_cfg, train_split, w.valid, w.labels, w.vocab, w.train_cfg);
  return std::move(result.checkpoint);
}

double test_micro_f1(const Checkpoint& ckpt) {
  const ScoreMatrix sm =
      score_corpus(ckpt.params, world().test, default_workers());
  return micro_prf(sm).f1;
}

const Checkpoint& grnn_full() {
  static const Checkpoint c = run_training(world().grnn_cfg, world().train);
  return c;
}

const Checkpoint& gru_full() {
  static const Checkpoint c = run_training(world().gru_cfg, world().train);
  return c;
}

double fraction_gap(double fraction) {
  const World& w = world();
  if (fraction >= 1.0) {
    return test_micro_f1(grnn_full()) - test_micro_f1(gru_full());
  }
  const EncodedCorpus subset = train_fraction(w, fraction);
  const Checkpoint grnn_ckpt = run_training(w.grnn_cfg, subset);
  const Checkpoint gru_ckpt = run_training(w.gru_cfg, subset);
  return test_micro_f1(grnn_ckpt) - test_micro_f1(gru_ckpt);
}

// ---------------------------------------------------------------------------
// Criterion 1: parameter reconciliation against the published matched sizes.
// ---------------------------------------------------------------------------

TEST(Acceptance, Criterion1_ParameterReconciliation) {
  const std::size_t at5000 = matched_gru_hidden(5000, 128, 192);
  const std::size_t at4000 = matched_gru_hidden(4000, 128, 192);
  EXPECT_NEAR(static_cast<double>(at5000), 846.0, 2.0);
  EXPECT_NEAR(static_cast<double>(at4000), 793.0, 2.0);
  report(1,
         str_cat("matched GRU hidden 5000->", at5000, " (846 +/- 2), 4000->",
                 at4000, " (793 +/- 2)"),
         !HasFailure());
}

// ---------------------------------------------------------------------------
// Criterion 2: analytic gradients vs central finite differences for every
// model kind at toy dims.
// ---------------------------------------------------------------------------

TEST(Acceptance, Criterion2_GradientSuite) {
  const std::vector<int> tokens{1, 4, 2, 5};  // T = 4
  double worst = 0.0;
  for (ModelKind kind :
       {ModelKind::kLogistic, ModelKind::kAttnBow, ModelKind::kGru,
        ModelKind::kBiGru, ModelKind::kBiGruL, ModelKind::kGrnn,
        ModelKind::kBiGrnn}) {
    ModelConfig cfg;
    cfg.kind = kind;
    cfg.num_labels = 3;
    cfg.embed_dim = 3;
    cfg.hidden_or_control_dim = 3;
    cfg.reverse_hidden_dim = 2;
    cfg.attention_window = 3;
    cfg.seed = 91;
    ModelParameters m = ModelParameters::build(cfg, 6);
    Rng rng(91);
    for (const TensorRef& ref : collect_tensors(m)) {
      for (double& v : *ref.values) v = rng.uniform(-0.7, 0.7);
    }
    const std::vector<std::uint8_t> y = {1, 0, 1};
    ModelParameters grads = zeros_like(m);
    backward_sequence(m, forward_sequence(m, tokens), y, grads);
    auto loss = [&]() { return sequence_loss(m, tokens, y); };
    std::vector<const Vec*> analytic;
    for (const auto& r : collect_tensors(grads)) analytic.push_back(r.values);
    const auto check =
        grad_check(collect_tensors(m), analytic, loss, 1e-5, 1e-4);
    EXPECT_TRUE(check.passed()) << to_string(kind) << " worst "
                                << check.worst();
    worst = std::max(worst, check.worst());
  }
  report(2,
         str_cat("all 7 model kinds match finite differences, worst rel err ",
                 worst, " < 1e-4"),
         !HasFailure());
}

// ---------------------------------------------------------------------------
// Criterion 3: semi-diagonal GRNN equals the masked-dense GRU on random
// instances, elementwise at 1e-12.
// ---------------------------------------------------------------------------

TEST(Acceptance, Criterion3_SemiDiagonalEquivalence) {
  Rng rng(41);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t L = 1 + rng.uniform_int(0, 5);
    const std::size_t dc = rng.uniform_int(0, 4);
    const std::size_t de = 1 + rng.uniform_int(0, 3);
    GrnnParameters p(L, dc, de);
    p.Z = random_semidiag(L, dc, de, rng, 0.8);
    p.R = random_semidiag(L, dc, de, rng, 0.8);
    p.W = random_semidiag(L, dc, de, rng, 0.8);
    p.b_z = random_vec(L + dc, rng, 0.8);
    p.b_r = random_vec(L + dc, rng, 0.8);
    p.b_w = random_vec(L + dc, rng, 0.8);

    GruParameters dense(L + dc, de);
    dense.Z = dense_equivalent(p.Z);
    dense.R = dense_equivalent(p.R);
    dense.W = dense_equivalent(p.W);
    dense.b_z = p.b_z;
    dense.b_r = p.b_r;
    dense.b_w = p.b_w;

    Vec g(L, 0.0), c(dc, 0.0), h(L + dc, 0.0);
    for (int t = 0; t < 6; ++t) {
      const Vec x = random_vec(de, rng);
      const auto s = grnn_step(p, g, c, x);
      h = gru_step(dense, h, x);
      g = s.g;
      c = s.c;
      worst = std::max(worst, max_abs_diff(concat(g, c), h));
    }
  }
  EXPECT_LE(worst, 1e-12);
  report(3,
         str_cat("100 random GRNN vs masked-dense GRU trajectories, max |diff| ",
                 worst, " <= 1e-12"),
         !HasFailure());
}

// ---------------------------------------------------------------------------
// Criterion 4: metric implementations against brute-force oracles.
// ---------------------------------------------------------------------------

std::optional<double> pairwise_auc_roc(const Vec& scores,
                                       const std::vector<std::uint8_t>& gold) {
  double numerator = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (gold[i] == 0) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (gold[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) {
        numerator += 1.0;
      } else if (scores[i] == scores[j]) {
        numerator += 0.5;
      }
    }
  }
  if (pairs == 0.0) return std::nullopt;
  return numerator / pairs;
}

std::optional<double> sweep_auc_pr(const Vec& scores,
                                   const std::vector<std::uint8_t>& gold) {
  double positives = 0.0;
  for (std::uint8_t g : gold) positives += g != 0;
  if (positives == 0.0) return std::nullopt;
  Vec thresholds = scores;
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());
  double ap = 0.0, prev_recall = 0.0;
  for (double tau : thresholds) {
    double tp = 0.0, predicted = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= tau) {
        predicted += 1.0;
        tp += gold[i] != 0;
      }
    }
    ap += (tp / positives - prev_recall) * (tp / predicted);
    prev_recall = tp / positives;
  }
  return ap;
}

TEST(Acceptance, Criterion4_MetricOracles) {
  Rng rng(17);
  std::size_t roc_checked = 0, pr_checked = 0;
  double pr_worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.uniform_int(0, 48));
    Vec ties(n), smooth(n);
    std::vector<std::uint8_t> gold(n);
    for (std::size_t i = 0; i < n; ++i) {
      ties[i] = static_cast<double>(rng.uniform_int(0, 9)) / 10.0;
      smooth[i] = rng.uniform();
      gold[i] = rng.uniform() < 0.35;
    }
    const auto roc = auc_roc(ties, gold);
    const auto roc_oracle = pairwise_auc_roc(ties, gold);
    ASSERT_EQ(roc.has_value(), roc_oracle.has_value());
    if (roc) {
      ASSERT_EQ(*roc, *roc_oracle);  // exact equality, ties included
      ++roc_checked;
    }
    const auto pr = auc_pr(smooth, gold);
    const auto pr_oracle = sweep_auc_pr(smooth, gold);
    ASSERT_EQ(pr.has_value(), pr_oracle.has_value());
    if (pr) {
      pr_worst = std::max(pr_worst, std::abs(*pr - *pr_oracle));
      ASSERT_NEAR(*pr, *pr_oracle, 1e-12);
      ++pr_checked;
    }
  }
  EXPECT_GE(roc_checked, 900u);
  EXPECT_GE(pr_checked, 900u);
  report(4,
         str_cat("AUC-ROC exact vs pairwise oracle on ", roc_checked,
                 " instances; AUC-PR vs threshold sweep on ", pr_checked,
                 " instances, max |diff| ", pr_worst, " <= 1e-12"),
         !HasFailure());
}

// ---------------------------------------------------------------------------
// Criterion 6 (cheap, before the training-heavy ones): curriculum schedule.
// ---------------------------------------------------------------------------

TEST(Acceptance, Criterion6_CurriculumSchedule) {
  TrainConfig cfg;
  cfg.initial_len = 50;
  cfg.growth = 1.35;
  cfg.max_len_cap = 600;
  EXPECT_EQ(curriculum_length(0, cfg), 50u);
  EXPECT_EQ(curriculum_length(1, cfg), 67u);
  EXPECT_EQ(curriculum_length(2, cfg), 91u);
  std::size_t previous = 0;
  bool saturated = false;
  for (std::size_t epoch = 0; epoch < 50; ++epoch) {
    const std::size_t len = curriculum_length(epoch, cfg);
    EXPECT_GE(len, previous);
    previous = len;
    saturated = saturated || len == cfg.max_len_cap;
  }
  EXPECT_TRUE(saturated);
  report(6, "curriculum lengths 50, 67, 91, nondecreasing, saturating at cap",
         !HasFailure());
}

// ---------------------------------------------------------------------------
// Criterion 7: state boundedness over 10,000 random applications, and the
// grounded head as identity at zero bias.
// ---------------------------------------------------------------------------

TEST(Acceptance, Criterion7_StateInvariants) {
  Rng rng(111);
  std::size_t steps = 0;
  while (steps < 10000) {
    const std::size_t L = 1 + rng.uniform_int(0, 7);
    const std::size_t dc = rng.uniform_int(0, 4);
    const std::size_t de = 1 + rng.uniform_int(0, 3);
    GrnnParameters p(L, dc, de);
    p.Z = random_semidiag(L, dc, de, rng, 1.0);
    p.R = random_semidiag(L, dc, de, rng, 1.0);
    p.W = random_semidiag(L, dc, de, rng, 1.0);
    p.b_z = random_vec(L + dc, rng, 1.0);
    p.b_r = random_vec(L + dc, rng, 1.0);
    p.b_w = random_vec(L + dc, rng, 1.0);
    Vec g(L, 0.0), c(dc, 0.0);
    for (int t = 0; t < 250; ++t, ++steps) {
      const auto s = grnn_step(p, g, c, random_vec(de, rng));
      g = s.g;
      c = s.c;
      for (double v : g) {
        ASSERT_GT(v, -1.0);
        ASSERT_LT(v, 1.0);
      }
      for (double v : c) {
        ASSERT_GT(v, -1.0);
        ASSERT_LT(v, 1.0);
      }
    }
  }
  const double eps = 1e-6;
  for (int i = 0; i < 1000; ++i) {
    const double g = rng.uniform(-1.0, 1.0);
    const double clamped = std::clamp((g + 1.0) / 2.0, eps, 1.0 - eps);
    ASSERT_EQ(predict_grounded({g}, {0.0}, eps)[0], clamped);
  }
  report(7,
         str_cat(steps, " grnn_step applications stayed inside (-1, 1); "
                        "zero-bias grounded head is the identity"),
         !HasFailure());
}

// ---------------------------------------------------------------------------
// Criterion 5: desk-scale learnability and the directional advantage over a
// capacity-matched GRU.
// ---------------------------------------------------------------------------

TEST(Acceptance, Criterion5_DeskScaleLearnability) {
  const World& w = world();
  ASSERT_LE(count_parameters(w.gru_cfg), count_parameters(w.grnn_cfg));
  const double grnn_f1 = test_micro_f1(grnn_full());
  const double gru_f1 = test_micro_f1(gru_full());
  EXPECT_GE(grnn_f1, 0.90);
  EXPECT_GE(grnn_f1, gru_f1 - 0.02);
  report(5,
         str_cat("GRNN test micro-F1 ", grnn_f1, " >= 0.90 within 30 epochs; "
                 "matched GRU-",
                 w.gru_cfg.hidden_or_control_dim, " micro-F1 ", gru_f1,
                 " (GRNN ahead or within 0.02)"),
         !HasFailure());
}

// ---------------------------------------------------------------------------
// Criterion 8: trace consistency and trigger attribution on the trained GRNN.
// ---------------------------------------------------------------------------

TEST(Acceptance, Criterion8_TraceConsistency) {
  const World& w = world();

  // Consistency on every supported kind at toy scale.
  Vocabulary toy_vocab;
  toy_vocab.tokens = {"<unk>", "aa", "bb", "cc", "dd", "ee"};
  toy_vocab.counts.assign(6, 1);
  for (std::size_t i = 0; i < toy_vocab.tokens.size(); ++i) {
    toy_vocab.index[toy_vocab.tokens[i]] = static_cast<int>(i);
  }
  const Document toy_doc{"t0", {1, 2, 3, 4}, {0}};
  for (ModelKind kind : {ModelKind::kGru, ModelKind::kBiGru,
                         ModelKind::kBiGruL, ModelKind::kGrnn,
                         ModelKind::kBiGrnn}) {
    ModelConfig cfg;
    cfg.kind = kind;
    cfg.num_labels = 3;
    cfg.embed_dim = 3;
    cfg.hidden_or_control_dim = 3;
    cfg.reverse_hidden_dim = 2;
    cfg.seed = 29;
    Checkpoint ckpt;
    ckpt.params = ModelParameters::build(cfg, 6);
    Rng rng(29);
    for (const TensorRef& ref : collect_tensors(ckpt.params)) {
      for (double& v : *ref.values) v = rng.uniform(-0.7, 0.7);
    }
    ckpt.label_names = {"x", "y", "z"};
    ckpt.label_frequencies = {1, 1, 1};
    const BeliefTrace trace =
        belief_trajectory(ckpt, toy_doc, toy_vocab, {0, 1, 2});
    const Vec prediction = forward_sequence(ckpt.params, toy_doc.tokens).y_hat;
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(trace.belief.back()[k], prediction[k], 1e-9)
          << to_string(kind);
      double sum = 0.0;
      for (std::size_t t = 0; t < trace.tokens.size(); ++t) {
        sum += trace.delta[t][k];
      }
      EXPECT_NEAR(sum, trace.belief.back()[k] - trace.prior[k], 1e-9)
          << to_string(kind);
    }
  }

  // Trigger attribution on the trained desk-scale GRNN.
  const Checkpoint& ckpt = grnn_full();
  std::size_t examined_docs = 0, pairs = 0, hits = 0;
  double worst_final_gap = 0.0;
  for (const Document& doc : w.test.docs) {
    if (doc.labels.empty()) continue;
    if (examined_docs == 200) break;
    ++examined_docs;
    const BeliefTrace trace = belief_trajectory(ckpt, doc, w.vocab, doc.labels);
    const Vec prediction = forward_sequence(ckpt.params, doc.tokens).y_hat;
    for (std::size_t k = 0; k < doc.labels.size(); ++k) {
      const auto label = static_cast<std::size_t>(doc.labels[k]);
      worst_final_gap = std::max(
          worst_final_gap,
          std::abs(trace.belief.back()[k] - prediction[label]));
      std::size_t argmax = 0;
      for (std::size_t t = 1; t < trace.tokens.size(); ++t) {
        if (trace.delta[t][k] > trace.delta[argmax][k]) argmax = t;
      }
      ++pairs;
      hits += w.trigger_sets[label].count(trace.tokens[argmax]) > 0;
    }
  }
  ASSERT_EQ(examined_docs, 200u);
  EXPECT_LE(worst_final_gap, 1e-9);
  const double hit_rate =
      static_cast<double>(hits) / static_cast<double>(pairs);
  EXPECT_GE(hit_rate, 0.90);
  report(8,
         str_cat("final trace row equals prediction and deltas telescope"
                 " (<= 1e-9); max-delta token is a trigger for ",
                 hit_rate * 100.0, "% of ", pairs, " (doc,label) pairs"),
         !HasFailure());
}

// ---------------------------------------------------------------------------
// Criterion 9: cmd_train determinism through the CLI.
// ---------------------------------------------------------------------------

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string command =
      std::string(GRNN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Acceptance, Criterion9_TrainingDeterminism) {
  const auto dir = testutil::scratch_dir("acceptance_determinism");
  SynthConfig sc;
  sc.num_labels = 8;
  sc.vocab_size = 120;
  sc.num_docs = 400;
  sc.doc_len_min = 10;
  sc.doc_len_max = 30;
  sc.label_rate = 0.2;
  sc.seed = 23;
  const SynthCorpus synth = synth_generate(sc);
  save_jsonl((dir / "train.jsonl").string(), synth.train);
  save_jsonl((dir / "valid.jsonl").string(), synth.valid);

  const std::string common =
      "--seed 13 train --model grnn --train " + (dir / "train.jsonl").string() +
      " --valid " + (dir / "valid.jsonl").string() +
      " --embed-dim 8 --hidden-dim 6 --initial-len 10 --max-len 30"
      " --epochs 4 --batch 16 --lr 5e-3 --out ";
  ASSERT_EQ(run_cli(common + (dir / "run_a").string()), 0);
  ASSERT_EQ(run_cli(common + (dir / "run_b").string()), 0);

  const std::string ckpt_a = slurp(dir / "run_a" / "checkpoint.bin");
  EXPECT_FALSE(ckpt_a.empty());
  EXPECT_EQ(ckpt_a, slurp(dir / "run_b" / "checkpoint.bin"));
  const std::string log_a = slurp(dir / "run_a" / "epochs.jsonl");
  EXPECT_FALSE(log_a.empty());
  EXPECT_EQ(log_a, slurp(dir / "run_b" / "epochs.jsonl"));
  report(9, "two cmd_train runs produced bit-identical checkpoints and logs",
         !HasFailure());
}

// ---------------------------------------------------------------------------
// Criterion 10: the GRNN's advantage does not shrink as training data does.
// ---------------------------------------------------------------------------

TEST(Acceptance, Criterion10_DataEfficiencyDirection) {
  const double gap20 = fraction_gap(0.2);
  const double gap60 = fraction_gap(0.6);
  const double gap100 = fraction_gap(1.0);
  EXPECT_GE(gap20, gap100 - 0.02);
  report(10,
         str_cat("micro-F1 gap GRNN-GRU at 20%/60%/100% data: ", gap20, " / ",
                 gap60, " / ", gap100, "; gap(20%) >= gap(100%) - 0.02"),
         !HasFailure());
}

}  // namespace
}  // namespace grnn
