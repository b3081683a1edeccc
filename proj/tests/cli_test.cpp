// End-to-end tests of the grnn binary, driven as a subprocess.

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "grnn/data.hpp"
#include "test_util.hpp"

namespace grnn {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr merged
};

CliResult run_cli(const std::string& args) {
  const std::string command = std::string(GRNN_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(command.c_str(), "r");
  if (pipe == nullptr) throw std::runtime_error("popen failed");
  CliResult result;
  char buffer[4096];
  std::size_t n = 0;
  while ((n = fread(buffer, 1, sizeof buffer, pipe)) > 0) {
    result.output.append(buffer, n);
  }
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// One tiny corpus + trained grnn checkpoint, built once for the suite.
struct World {
  fs::path dir;
  fs::path corpus_dir;
  fs::path run_dir;
};

const World& world() {
  static World w = [] {
    World built;
    built.dir = testutil::scratch_dir("cli_world");
    built.corpus_dir = built.dir / "corpus";
    built.run_dir = built.dir / "run";
    CliResult synth = run_cli(
        "synth --out " + built.corpus_dir.string() +
        " --labels 6 --vocab-size 90 --docs 320 --len-min 8 --len-max 24"
        " --label-rate 0.25 --noise-rate 0.4 --seed 5");
    if (synth.exit_code != 0) {
      throw std::runtime_error("world synth failed: " + synth.output);
    }
    CliResult train = run_cli(
        "--seed 7 train --model grnn --train " +
        (built.corpus_dir / "train.jsonl").string() + " --valid " +
        (built.corpus_dir / "valid.jsonl").string() +
        " --embed-dim 6 --hidden-dim 4 --initial-len 8 --max-len 24"
        " --epochs 4 --batch 16 --lr 5e-3 --out " + built.run_dir.string());
    if (train.exit_code != 0) {
      throw std::runtime_error("world train failed: " + train.output);
    }
    return built;
  }();
  return w;
}

TEST(Cli, MissingCorpusExitsOneWithCause) {
  const CliResult r = run_cli(
      "train --model grnn --train /nonexistent/x.jsonl --valid /nonexistent/"
      "y.jsonl --out /tmp/should_not_exist_grnn");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.output.find("corpus not found: /nonexistent/x.jsonl"),
            std::string::npos);
  EXPECT_FALSE(fs::exists("/tmp/should_not_exist_grnn"));
}

TEST(Cli, SynthIsByteDeterministic) {
  const auto dir = testutil::scratch_dir("cli_synth_det");
  const std::string opts =
      " --labels 5 --vocab-size 60 --docs 120 --len-min 6 --len-max 15"
      " --hierarchy-depth 2 --seed 99";
  ASSERT_EQ(run_cli("synth --out " + (dir / "a").string() + opts).exit_code, 0);
  ASSERT_EQ(run_cli("synth --out " + (dir / "b").string() + opts).exit_code, 0);
  for (const char* name :
       {"train.jsonl", "valid.jsonl", "test.jsonl", "triggers.tsv",
        "parent_map.tsv"}) {
    EXPECT_EQ(slurp(dir / "a" / name), slurp(dir / "b" / name)) << name;
    EXPECT_FALSE(slurp(dir / "a" / name).empty()) << name;
  }
}

TEST(Cli, ParamsReportsMatchedHiddenSizes) {
  const CliResult at5000 =
      run_cli("params --model grnn --labels 5000 --hidden-dim 128"
              " --embed-dim 192");
  EXPECT_EQ(at5000.exit_code, 0);
  EXPECT_NE(at5000.output.find("matched GRU hidden size: 846"),
            std::string::npos);
  const CliResult at4000 =
      run_cli("params --model grnn --labels 4000 --hidden-dim 128"
              " --embed-dim 192");
  EXPECT_NE(at4000.output.find("matched GRU hidden size: 793"),
            std::string::npos);
}

TEST(Cli, TrainRerunIsBitIdentical) {
  const World& w = world();
  const auto rerun_dir = w.dir / "rerun";
  const CliResult r = run_cli(
      "--seed 7 train --model grnn --train " +
      (w.corpus_dir / "train.jsonl").string() + " --valid " +
      (w.corpus_dir / "valid.jsonl").string() +
      " --embed-dim 6 --hidden-dim 4 --initial-len 8 --max-len 24"
      " --epochs 4 --batch 16 --lr 5e-3 --out " + rerun_dir.string());
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_EQ(slurp(w.run_dir / "checkpoint.bin"),
            slurp(rerun_dir / "checkpoint.bin"));
  EXPECT_EQ(slurp(w.run_dir / "epochs.jsonl"),
            slurp(rerun_dir / "epochs.jsonl"));
  EXPECT_FALSE(slurp(rerun_dir / "epochs.jsonl").empty());
}

TEST(Cli, ZeroLearningRateGivesConstantValidLoss) {
  const World& w = world();
  const auto out = w.dir / "lr0";
  const CliResult r = run_cli(
      "--seed 7 train --model grnn --train " +
      (w.corpus_dir / "train.jsonl").string() + " --valid " +
      (w.corpus_dir / "valid.jsonl").string() +
      " --embed-dim 6 --hidden-dim 4 --initial-len 8 --max-len 24"
      " --epochs 3 --patience 10 --batch 16 --lr 0 --out " + out.string());
  ASSERT_EQ(r.exit_code, 0) << r.output;
  std::ifstream log(out / "epochs.jsonl");
  std::string line;
  double first_valid = -1.0;
  std::size_t rows = 0;
  while (std::getline(log, line)) {
    const auto row = nlohmann::json::parse(line);
    const double valid = row.at("valid_loss").get<double>();
    if (rows == 0) first_valid = valid;
    EXPECT_EQ(valid, first_valid);
    ++rows;
  }
  EXPECT_EQ(rows, 3u);
}

TEST(Cli, EvalJsonAndTableAgree) {
  const World& w = world();
  const auto out = w.dir / "eval";
  const CliResult r = run_cli(
      "eval --checkpoint " + (w.run_dir / "checkpoint.bin").string() +
      " --corpus " + (w.corpus_dir / "test.jsonl").string() + " --vocab " +
      (w.run_dir / "vocab.tsv").string() + " --n 2 4 --out " + out.string());
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const auto j = nlohmann::json::parse(slurp(out / "report.json"));
  const std::string table = slurp(out / "report.txt");

  // The table prints three decimals; parse its value row and compare.
  std::stringstream ss(table);
  std::string line, header, values;
  ASSERT_TRUE(std::getline(ss, line));  // conventions comment
  ASSERT_TRUE(std::getline(ss, header));
  ASSERT_TRUE(std::getline(ss, values));
  std::vector<std::string> cols, vals;
  for (std::stringstream h(header); std::getline(h, line, '\t');) {
    cols.push_back(line);
  }
  for (std::stringstream v(values); std::getline(v, line, '\t');) {
    vals.push_back(line);
  }
  ASSERT_EQ(cols.size(), vals.size());
  const std::map<std::string, std::string> to_json_key = {
      {"P", "P"},           {"R", "R"},
      {"F1(Mi)", "F1_micro"}, {"F1(Ma)", "F1_macro"},
      {"AUCPR(Mi)", "AUC_PR_micro"}, {"AUCPR(Ma)", "AUC_PR_macro"},
      {"AUCROC(Mi)", "AUC_ROC_micro"}, {"AUCROC(Ma)", "AUC_ROC_macro"},
      {"P@2", "P@2"},       {"P@4", "P@4"},
      {"R@2", "R@2"},       {"R@4", "R@4"}};
  for (std::size_t c = 1; c < cols.size(); ++c) {
    const auto key = to_json_key.at(cols[c]);
    ASSERT_TRUE(j.contains(key)) << key;
    EXPECT_NEAR(std::stod(vals[c]), j.at(key).get<double>(), 5e-4) << key;
  }
  // n-list override: no P@8 column or key anywhere.
  EXPECT_EQ(table.find("P@8"), std::string::npos);
  EXPECT_FALSE(j.contains("P@8"));
}

TEST(Cli, PredictDeterministicAndClampsN) {
  const World& w = world();
  const std::string base =
      "predict --checkpoint " + (w.run_dir / "checkpoint.bin").string() +
      " --corpus " + (w.corpus_dir / "test.jsonl").string() + " --vocab " +
      (w.run_dir / "vocab.tsv").string();
  const CliResult a = run_cli(base + " --n 3");
  const CliResult b = run_cli(base + " --n 3");
  ASSERT_EQ(a.exit_code, 0);
  EXPECT_EQ(a.output, b.output);

  const CliResult clamped = run_cli(base + " --n 99");
  ASSERT_EQ(clamped.exit_code, 0);
  EXPECT_NE(clamped.output.find("clamping"), std::string::npos);
}

TEST(Cli, TraceRejectsUnsupportedKindAndUnknownNames) {
  const World& w = world();
  // A bag-of-words model has no per-token state to trace.
  const auto attn_dir = w.dir / "attn";
  const CliResult train = run_cli(
      "--seed 7 train --model attn_bow --train " +
      (w.corpus_dir / "train.jsonl").string() + " --valid " +
      (w.corpus_dir / "valid.jsonl").string() +
      " --embed-dim 6 --attention-window 3 --initial-len 24 --max-len 24"
      " --epochs 1 --batch 16 --lr 1e-3 --out " + attn_dir.string());
  ASSERT_EQ(train.exit_code, 0) << train.output;

  const grnn::Corpus test =
      grnn::load_jsonl((w.corpus_dir / "test.jsonl").string());
  const std::string doc_id = test.docs.front().id;
  const std::string label = test.docs.front().labels.empty()
                                ? "caaaa"
                                : test.docs.front().labels.front();

  const CliResult refused = run_cli(
      "trace --checkpoint " + (attn_dir / "checkpoint.bin").string() +
      " --corpus " + (w.corpus_dir / "test.jsonl").string() + " --vocab " +
      (attn_dir / "vocab.tsv").string() + " --doc " + doc_id + " --labels " +
      label + " --format csv --out " + (w.dir / "refused.csv").string());
  EXPECT_EQ(refused.exit_code, 1);
  EXPECT_NE(refused.output.find("attn_bow"), std::string::npos);

  const std::string good_base =
      "trace --checkpoint " + (w.run_dir / "checkpoint.bin").string() +
      " --corpus " + (w.corpus_dir / "test.jsonl").string() + " --vocab " +
      (w.run_dir / "vocab.tsv").string();
  const CliResult bad_doc =
      run_cli(good_base + " --doc nope --labels " + label +
              " --format csv --out " + (w.dir / "t1.csv").string());
  EXPECT_EQ(bad_doc.exit_code, 1);
  EXPECT_NE(bad_doc.output.find("nope"), std::string::npos);

  const CliResult bad_label =
      run_cli(good_base + " --doc " + doc_id + " --labels zzz" +
              " --format csv --out " + (w.dir / "t2.csv").string());
  EXPECT_EQ(bad_label.exit_code, 1);
  EXPECT_NE(bad_label.output.find("zzz"), std::string::npos);

  const CliResult ok =
      run_cli(good_base + " --doc " + doc_id + " --labels " + label +
              " --format html --out " + (w.dir / "t3.html").string());
  EXPECT_EQ(ok.exit_code, 0) << ok.output;
  EXPECT_NE(slurp(w.dir / "t3.html").find("<!DOCTYPE html>"),
            std::string::npos);
}

TEST(Cli, EvalFromScoresCsvMatchesDirectEval) {
  const World& w = world();
  const auto direct = w.dir / "eval_direct";
  const CliResult r1 = run_cli(
      "eval --checkpoint " + (w.run_dir / "checkpoint.bin").string() +
      " --corpus " + (w.corpus_dir / "test.jsonl").string() + " --vocab " +
      (w.run_dir / "vocab.tsv").string() + " --n 2 --out " + direct.string() +
      " --scores-csv " + (w.dir / "scores.csv").string());
  ASSERT_EQ(r1.exit_code, 0) << r1.output;

  const auto via_csv = w.dir / "eval_csv";
  const CliResult r2 = run_cli(
      "eval --checkpoint " + (w.run_dir / "checkpoint.bin").string() +
      " --corpus " + (w.corpus_dir / "test.jsonl").string() + " --vocab " +
      (w.run_dir / "vocab.tsv").string() + " --n 2 --out " + via_csv.string() +
      " --from-scores " + (w.dir / "scores.csv").string());
  ASSERT_EQ(r2.exit_code, 0) << r2.output;

  const auto ja = nlohmann::json::parse(slurp(direct / "report.json"));
  const auto jb = nlohmann::json::parse(slurp(via_csv / "report.json"));
  EXPECT_NEAR(ja.at("F1_micro").get<double>(), jb.at("F1_micro").get<double>(),
              1e-6);
  EXPECT_NEAR(ja.at("AUC_ROC_micro").get<double>(),
              jb.at("AUC_ROC_micro").get<double>(), 1e-6);
}

}  // namespace
}  // namespace grnn
