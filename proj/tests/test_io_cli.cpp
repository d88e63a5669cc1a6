#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "gainsched/commands.hpp"

using namespace gainsched;
namespace fs = std::filesystem;

namespace {

class Workspace : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           ("gainsched_" + std::to_string(::getpid()) + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write(const std::string& name, const std::string& text) const {
    write_file(path(name), text);
    return path(name);
  }

  std::string synth(std::size_t n, const std::string& name = "data.jsonl") const {
    cmd_synth({path(name), n, 2024, std::nullopt});
    return path(name);
  }

  static int shell(const std::string& cmd) {
    const int rc = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }

  static std::string bin() { return GAIN_SCHED_BIN; }

  static std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
      const auto end = text.find('\n', pos);
      out.push_back(text.substr(pos, end - pos));
      pos = end == std::string::npos ? text.size() : end + 1;
    }
    return out;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Workspace, PrefillEmptyFileWarnsAndWritesNothing) {
  const auto data = write("empty.jsonl", "");
  std::ostringstream log;
  EXPECT_EQ(cmd_prefill({data, path("sig.jsonl"), {}, {}, {}}, log), 0u);
  EXPECT_NE(log.str().find("empty"), std::string::npos);
  EXPECT_EQ(read_file(path("sig.jsonl")), "");
  EXPECT_TRUE(fs::exists(manifest_path_for(path("sig.jsonl"))));
}

TEST_F(Workspace, PrefillSingleRowMatchesLibrary) {
  const auto data = write("one.jsonl", R"({"sample_id":"q1","token_ids":[3,9,9,12,40],"prompt_len":2})"
                                       "\n");
  cmd_prefill({data, path("sig.jsonl"), {}, {}, {}});
  const auto rows = parse_signals(read_file(path("sig.jsonl")));
  ASSERT_EQ(rows.size(), 1u);
  const auto direct =
      prefill_signal(init_weights(ToyConfig{}), SegmentedSequence{{3, 9, 9, 12, 40}, 2, "q1"});
  EXPECT_EQ(rows[0].sample_id, "q1");
  EXPECT_EQ(*rows[0].c_intra, direct.c_intra);
  EXPECT_EQ(*rows[0].c_inter, direct.c_inter);
  EXPECT_EQ(rows[0].combined, direct.combined);
}

TEST_F(Workspace, PrefillDeterministicAcrossRunsAndThreadCounts) {
  const auto data = synth(500);
  ::setenv("GAIN_SCHED_THREADS", "1", 1);
  cmd_prefill({data, path("a.jsonl"), {}, {}, {}});
  ::setenv("GAIN_SCHED_THREADS", "4", 1);
  cmd_prefill({data, path("b.jsonl"), {}, {}, {}});
  cmd_prefill({data, path("b.jsonl"), {}, {}, {}});
  ::unsetenv("GAIN_SCHED_THREADS");
  EXPECT_EQ(read_file(path("a.jsonl")), read_file(path("b.jsonl")));
  EXPECT_EQ(lines(read_file(path("a.jsonl"))).size(), 500u);
}

TEST_F(Workspace, PrefillRoundTripsThroughRankExactly) {
  const auto data = synth(40);
  cmd_prefill({data, path("sig.jsonl"), {}, {}, {}});
  const auto records = parse_dataset(read_file(data));
  const auto direct = compute_signals(records, ToySpec{}, 1);
  const auto parsed = parse_signals(read_file(path("sig.jsonl")));
  ASSERT_EQ(parsed.size(), direct.size());
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    EXPECT_EQ(parsed[i].sample_id, direct[i].sample_id);
    EXPECT_EQ(parsed[i].c_intra, direct[i].c_intra);
    EXPECT_EQ(parsed[i].c_inter, direct[i].c_inter);
    EXPECT_EQ(parsed[i].combined, direct[i].combined);
  }
  const auto ranked = cmd_rank({path("sig.jsonl"), path("rank.jsonl"), 1.0});
  const auto reparsed = parse_ranked(read_file(path("rank.jsonl")));
  ASSERT_EQ(reparsed.size(), ranked.size());
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    EXPECT_EQ(reparsed[r].sample_id, ranked[r].sample_id);
    EXPECT_EQ(reparsed[r].combined, direct[ranked[r].original_index].combined);
  }
}

TEST_F(Workspace, PrefillErrorsNameTheLine) {
  const auto bad = write("bad.jsonl", R"({"sample_id":"a","token_ids":[1,2],"prompt_len":0})"
                                      "\n{not json\n");
  try {
    cmd_prefill({bad, path("o.jsonl"), {}, {}, {}});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  const auto dup = write("dup.jsonl", R"({"sample_id":"a","token_ids":[1,2],"prompt_len":0})"
                                      "\n"
                                      R"({"sample_id":"a","token_ids":[1,2],"prompt_len":0})"
                                      "\n");
  EXPECT_THROW(cmd_prefill({dup, path("o.jsonl"), {}, {}, {}}), DataError);
}

TEST_F(Workspace, PrecomputedSignalsPassThrough) {
  const auto data = write("pre.jsonl", R"({"sample_id":"p","token_ids":[],"prompt_len":0,"precomputed_signal":0.75})"
                                       "\n");
  cmd_prefill({data, path("sig.jsonl"), {}, {}, {}});
  const auto rows = parse_signals(read_file(path("sig.jsonl")));
  EXPECT_EQ(rows[0].combined, 0.75);
  EXPECT_FALSE(rows[0].c_intra.has_value());
}

TEST_F(Workspace, RankExamplesAtFileGranularity) {
  const auto one = write("one.jsonl", R"({"sample_id":"x","combined":0.4})" "\n");
  EXPECT_EQ(cmd_rank({one, path("r1.jsonl"), 1.0}).size(), 1u);

  const auto ties = write("ties.jsonl", R"({"sample_id":"a","combined":1.0})" "\n"
                                        R"({"sample_id":"b","combined":1.0})" "\n"
                                        R"({"sample_id":"c","combined":1.0})" "\n");
  const auto t = cmd_rank({ties, path("r2.jsonl"), 1.0});
  EXPECT_EQ(t[0].sample_id, "a");
  EXPECT_EQ(t[2].sample_id, "c");

  const auto hand = write("hand.jsonl", R"({"sample_id":"a","combined":0.3})" "\n"
                                        R"({"sample_id":"b","combined":1.7})" "\n"
                                        R"({"sample_id":"c","combined":1.1})" "\n");
  cmd_rank({hand, path("r3.jsonl"), 1.0});
  const auto out = lines(read_file(path("r3.jsonl")));
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(json::parse(out[0])["sample_id"], "b");
  EXPECT_EQ(json::parse(out[1])["sample_id"], "c");
  EXPECT_EQ(json::parse(out[2])["sample_id"], "a");
  EXPECT_EQ(json::parse(out[2])["rank"], 2);
}

TEST_F(Workspace, RankWeightRecombinesComponents) {
  const auto sig = write("sig.jsonl",
                         R"({"sample_id":"a","c_intra":0.9,"c_inter":0.1,"combined":1.0})" "\n"
                         R"({"sample_id":"b","c_intra":0.2,"c_inter":0.7,"combined":0.9})" "\n");
  EXPECT_EQ(cmd_rank({sig, path("r.jsonl"), 1.0})[0].sample_id, "a");
  EXPECT_EQ(cmd_rank({sig, path("r.jsonl"), 3.0})[0].sample_id, "b");
}

TEST_F(Workspace, RankRejectsNanRowWithRowNumber) {
  const auto sig = write("nan.jsonl", R"({"sample_id":"a","combined":0.5})" "\n"
                                      R"({"sample_id":"b","combined":"NaN"})" "\n");
  try {
    cmd_rank({sig, path("r.jsonl"), 1.0});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
  EXPECT_EQ(shell(bin() + " rank --dataset " + sig + " --out " + path("r.jsonl")), kExitData);
}

TEST_F(Workspace, TraceLayersCsv) {
  const auto data = synth(20);
  const auto cfg = write("toy.json", R"({"n_layers": 1, "weight_mode": "random_gaussian"})");
  cmd_trace_layers({data, path("t1.csv"), cfg, {}, {}});
  auto rows = lines(read_file(path("t1.csv")));
  EXPECT_EQ(rows[0], "sample_id,layer,c_intra,c_inter,combined");
  EXPECT_EQ(rows.size(), 1u + 20u * 2u);  // embedding plus one block

  cmd_trace_layers({data, path("t2.csv"), {}, {}, {}});
  rows = lines(read_file(path("t2.csv")));
  EXPECT_EQ(rows.size(), 1u + 20u * 5u);

  const auto empty = write("empty.jsonl", "");
  cmd_trace_layers({empty, path("t3.csv"), {}, {}, {}});
  EXPECT_EQ(read_file(path("t3.csv")), "sample_id,layer,c_intra,c_inter,combined\n");
}

TEST_F(Workspace, SimulateSchemaErrorsReportedInOnePass) {
  const auto cfg = write("bad.json", R"({"steps": 0, "mode": "fastest", "alpha": "two",
                                         "learner": {"coupling": -1}, "bogus": 1})");
  try {
    cmd_simulate({cfg, {}, path("out"), {}, {}, {}, {}, {}});
    FAIL();
  } catch (const SchemaError& e) {
    const std::string msg = e.what();
    for (const char* key : {"steps", "mode", "alpha", "coupling", "bogus"}) {
      EXPECT_NE(msg.find(key), std::string::npos) << key << " missing from: " << msg;
    }
  }
  const auto zero = write("zero.json", R"({"steps": 0})");
  EXPECT_EQ(shell(bin() + " simulate --config " + zero + " --out " + path("o")), kExitSchema);
}

TEST_F(Workspace, SimulateWritesManifestFirstAndSummary) {
  const auto data = synth(160);
  cmd_prefill({data, path("sig.jsonl"), {}, {}, {}});
  const auto cfg = write("sim.json", R"({"steps": 30})");
  const auto res = cmd_simulate({cfg, path("sig.jsonl"), path("run"), 5, {}, {}, {}, {}});
  for (const char* f : {"manifest.json", "trace.jsonl", "trace.csv", "summary.json",
                        "checkpoint.json", "baseline_trace.jsonl"}) {
    EXPECT_TRUE(fs::exists(path("run/") + f)) << f;
  }
  EXPECT_LE(fs::last_write_time(path("run/manifest.json")),
            fs::last_write_time(path("run/trace.jsonl")));
  const auto manifest = json::parse(read_file(path("run/manifest.json")));
  EXPECT_EQ(manifest["seed"], 5);
  const auto summary = json::parse(read_file(path("run/summary.json")));
  EXPECT_EQ(manifest["dataset_hash"], summary["dataset_hash"]);
  EXPECT_EQ(manifest["config_hash"], summary["config_hash"]);
  EXPECT_FALSE(manifest["toolchain_version"].get<std::string>().empty());
  EXPECT_TRUE(summary["steps_to_threshold"].contains("gain"));
  EXPECT_TRUE(summary["steps_to_threshold"].contains("uniform"));
  EXPECT_EQ(lines(read_file(path("run/trace.jsonl"))).size(), 30u);
  EXPECT_EQ(res.trace.records.size(), 30u);
}

TEST_F(Workspace, SimulateIsByteDeterministic) {
  const auto cfg = write("sim.json", R"({"steps": 20, "population": {"n_samples": 120}})");
  cmd_simulate({cfg, {}, path("a"), {}, {}, {}, {}, {}});
  cmd_simulate({cfg, {}, path("b"), {}, {}, {}, {}, {}});
  for (const char* f : {"trace.jsonl", "trace.csv", "summary.json", "baseline_trace.jsonl"}) {
    EXPECT_EQ(read_file(path("a/") + f), read_file(path("b/") + f)) << f;
  }
}

TEST_F(Workspace, ResumeReproducesRemainingTrace) {
  const auto cfg = write("sim.json", R"({"steps": 24, "population": {"n_samples": 120}})");
  cmd_simulate({cfg, {}, path("full"), {}, {}, {}, {}, {}});
  cmd_simulate({cfg, {}, path("part"), {}, {}, {}, {}, std::size_t{9}});
  cmd_simulate({cfg, {}, path("rest"), {}, {}, {}, path("part/checkpoint.json"), {}});
  const auto full = lines(read_file(path("full/trace.jsonl")));
  const auto part = lines(read_file(path("part/trace.jsonl")));
  const auto rest = lines(read_file(path("rest/trace.jsonl")));
  ASSERT_EQ(part.size(), 9u);
  ASSERT_EQ(part.size() + rest.size(), full.size());
  for (std::size_t i = 0; i < part.size(); ++i) EXPECT_EQ(part[i], full[i]);
  for (std::size_t i = 0; i < rest.size(); ++i) EXPECT_EQ(rest[i], full[part.size() + i]);
}

TEST_F(Workspace, ResumeRejectsForeignCheckpoint) {
  const auto cfg = write("sim.json", R"({"steps": 10, "population": {"n_samples": 64}})");
  const auto other = write("other.json", R"({"steps": 11, "population": {"n_samples": 64}})");
  cmd_simulate({cfg, {}, path("a"), {}, {}, {}, {}, std::size_t{3}});
  EXPECT_THROW(cmd_simulate({other, {}, path("b"), {}, {}, {}, path("a/checkpoint.json"), {}}),
               DataError);
}

TEST_F(Workspace, VerifyReportAndFaultInjection) {
  const auto rep = cmd_verify({path("v.json"), 1, {}});
  EXPECT_TRUE(rep.all_passed());
  const auto j = json::parse(read_file(path("v.json")));
  EXPECT_TRUE(j["passed"].get<bool>());
  bool has_rel = false;
  for (const auto& c : j["checks"]) has_rel = has_rel || c.contains("max_rel_error");
  EXPECT_TRUE(has_rel);

  EXPECT_THROW(cmd_verify({path("f.json"), 1, std::string("grad_decomposition")}),
               VerificationFailure);
  const auto f = json::parse(read_file(path("f.json")));
  EXPECT_FALSE(f["passed"].get<bool>());
  EXPECT_EQ(f["failing"], json::array({"grad_decomposition"}));
  EXPECT_THROW(cmd_verify({path("x.json"), 1, std::string("nonsense")}), SchemaError);
}

TEST_F(Workspace, ExitCodesFromBinary) {
  EXPECT_EQ(shell(bin() + " verify --out " + path("ok.json")), kExitOk);
  EXPECT_EQ(shell(bin() + " verify --out " + path("bad.json") + " --inject-fault ffn_finite_difference"),
            kExitVerification);
  EXPECT_EQ(shell(bin() + " prefill --dataset " + path("missing.jsonl") + " --out " + path("o")),
            kExitOther);
  const auto bad = write("bad.jsonl", "{oops\n");
  EXPECT_EQ(shell(bin() + " prefill --dataset " + bad + " --out " + path("o")), kExitData);
  EXPECT_EQ(shell(bin() + " frobnicate"), kExitSchema);
  const auto good = synth(3);
  EXPECT_EQ(shell("GAIN_SCHED_THREADS=zero " + bin() + " prefill --dataset " + good + " --out " +
                  path("o")),
            kExitSchema);
}
