#pragma once

// File formats: JSONL datasets, signal and ranked files, run traces,
// checkpoints and manifests. Everything is UTF-8 and newline-delimited.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "gainsched/scheduler.hpp"
#include "gainsched/signals.hpp"
#include "gainsched/simloop.hpp"

namespace gainsched {

using json = nlohmann::json;

/// Configuration does not match its schema.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data is malformed or inconsistent.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Files and hashing.

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string content_hash(std::string_view bytes) { return hex64(fnv1a(bytes)); }

/// Compact one-line dump used for every JSONL record.
inline std::string dump_line(const json& j) { return j.dump() + "\n"; }

/// Non-blank lines with their 1-based line numbers.
inline std::vector<std::pair<std::size_t, json>> parse_jsonl(std::string_view text,
                                                            std::string_view what) {
  std::vector<std::pair<std::size_t, json>> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    try {
      out.emplace_back(line_no, json::parse(line));
    } catch (const json::parse_error& e) {
      throw DataError(std::string(what) + " line " + std::to_string(line_no) +
                      ": malformed JSON (" + e.what() + ")");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset records.

struct DatasetRecord {
  std::string sample_id;
  std::vector<std::size_t> token_ids;
  std::size_t prompt_len = 0;
  std::optional<double> precomputed_signal;
};

inline json to_json(const DatasetRecord& r) {
  json j{{"sample_id", r.sample_id}, {"token_ids", r.token_ids}, {"prompt_len", r.prompt_len}};
  if (r.precomputed_signal) j["precomputed_signal"] = *r.precomputed_signal;
  return j;
}

namespace detail {

inline std::string where(std::size_t line) { return "line " + std::to_string(line) + ": "; }

inline std::size_t get_count(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key)) throw DataError(where(line) + "missing field '" + key + "'");
  const auto& v = j.at(key);
  if (!v.is_number_unsigned()) {
    throw DataError(where(line) + "field '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

inline double get_real(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key)) throw DataError(where(line) + "missing field '" + key + "'");
  const auto& v = j.at(key);
  if (!v.is_number()) throw DataError(where(line) + "field '" + key + "' must be a number");
  return v.get<double>();
}

inline std::string get_id(const json& j, std::size_t line) {
  if (!j.contains("sample_id") || !j.at("sample_id").is_string()) {
    throw DataError(where(line) + "field 'sample_id' must be a string");
  }
  return j.at("sample_id").get<std::string>();
}

}  // namespace detail

inline DatasetRecord parse_dataset_record(const json& j, std::size_t line) {
  if (!j.is_object()) throw DataError(detail::where(line) + "record must be a JSON object");
  DatasetRecord r;
  r.sample_id = detail::get_id(j, line);
  if (!j.contains("token_ids") || !j.at("token_ids").is_array()) {
    throw DataError(detail::where(line) + "field 'token_ids' must be an array");
  }
  for (const auto& t : j.at("token_ids")) {
    if (!t.is_number_unsigned()) {
      throw DataError(detail::where(line) + "token ids must be non-negative integers");
    }
    r.token_ids.push_back(t.get<std::size_t>());
  }
  r.prompt_len = detail::get_count(j, "prompt_len", line);
  if (j.contains("precomputed_signal") && !j.at("precomputed_signal").is_null()) {
    r.precomputed_signal = detail::get_real(j, "precomputed_signal", line);
    if (!std::isfinite(*r.precomputed_signal)) {
      throw DataError(detail::where(line) + "precomputed_signal must be finite");
    }
  }
  if (r.token_ids.empty() && !r.precomputed_signal) {
    throw DataError(detail::where(line) + "token_ids is empty");
  }
  if (!r.token_ids.empty() && r.prompt_len >= r.token_ids.size()) {
    throw DataError(detail::where(line) + "prompt_len " + std::to_string(r.prompt_len) +
                    " must be < token count " + std::to_string(r.token_ids.size()));
  }
  return r;
}

inline std::vector<DatasetRecord> parse_dataset(std::string_view text) {
  std::vector<DatasetRecord> out;
  std::unordered_set<std::string> seen;
  for (const auto& [line, j] : parse_jsonl(text, "dataset")) {
    auto r = parse_dataset_record(j, line);
    if (!seen.insert(r.sample_id).second) {
      throw DataError(detail::where(line) + "duplicate sample_id '" + r.sample_id + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string format_dataset(const std::vector<DatasetRecord>& records) {
  std::string out;
  for (const auto& r : records) out += dump_line(to_json(r));
  return out;
}

// ---------------------------------------------------------------------------
// Signal rows (prefill output) and ranked rows.

struct SignalRow {
  std::string sample_id;
  std::optional<double> c_intra;  ///< absent when the signal was supplied precomputed
  std::optional<double> c_inter;
  double combined = 0.0;
};

inline json to_json(const SignalRow& r) {
  json j;
  j["sample_id"] = r.sample_id;
  j["c_intra"] = r.c_intra ? json(*r.c_intra) : json(nullptr);
  j["c_inter"] = r.c_inter ? json(*r.c_inter) : json(nullptr);
  j["combined"] = r.combined;
  return j;
}

inline std::optional<double> optional_real(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return detail::get_real(j, key, line);
}

/// NaN cannot be written as a JSON number; a string "NaN" (or a null
/// combined) marks a missing signal and is rejected with its row number.
inline std::vector<SignalRow> parse_signals(std::string_view text) {
  std::vector<SignalRow> out;
  std::unordered_set<std::string> seen;
  std::size_t row = 0;
  for (const auto& [line, j] : parse_jsonl(text, "signals")) {
    ++row;
    if (!j.is_object()) throw DataError(detail::where(line) + "record must be a JSON object");
    SignalRow r;
    r.sample_id = detail::get_id(j, line);
    const bool nan_combined =
        !j.contains("combined") || j.at("combined").is_null() ||
        (j.at("combined").is_string() && j.at("combined").get<std::string>() == "NaN") ||
        (j.at("combined").is_number() && std::isnan(j.at("combined").get<double>()));
    if (nan_combined) {
      throw DataError("signals row " + std::to_string(row) + " (line " + std::to_string(line) +
                      "): NaN or missing combined signal for '" + r.sample_id + "'");
    }
    r.combined = detail::get_real(j, "combined", line);
    r.c_intra = optional_real(j, "c_intra", line);
    r.c_inter = optional_real(j, "c_inter", line);
    if (!seen.insert(r.sample_id).second) {
      throw DataError(detail::where(line) + "duplicate sample_id '" + r.sample_id + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string format_signals(const std::vector<SignalRow>& rows) {
  std::string out;
  for (const auto& r : rows) out += dump_line(to_json(r));
  return out;
}

/// Ranking key for a signal row under weight c.
inline double reweighted(const SignalRow& r, double weight_c) {
  if (r.c_intra && r.c_inter) return *r.c_intra + weight_c * *r.c_inter;
  return r.combined;
}

inline std::vector<SignalEntry> to_entries(const std::vector<SignalRow>& rows, double weight_c) {
  std::vector<SignalEntry> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back({r.sample_id, reweighted(r, weight_c)});
  return out;
}

inline std::string format_ranked(const RankedDataset& ranked) {
  std::string out;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    out += dump_line(json{{"rank", r},
                          {"sample_id", ranked[r].sample_id},
                          {"combined", ranked[r].combined},
                          {"original_index", ranked[r].original_index}});
  }
  return out;
}

inline RankedDataset parse_ranked(std::string_view text) {
  std::vector<RankedEntry> entries;
  for (const auto& [line, j] : parse_jsonl(text, "ranked")) {
    const auto rank = detail::get_count(j, "rank", line);
    if (rank != entries.size()) {
      throw DataError(detail::where(line) + "expected rank " + std::to_string(entries.size()));
    }
    entries.push_back({detail::get_id(j, line), detail::get_real(j, "combined", line),
                       detail::get_count(j, "original_index", line)});
  }
  try {
    return RankedDataset(std::move(entries));
  } catch (const SchedulerError& e) {
    throw DataError(e.what());
  }
}

// ---------------------------------------------------------------------------
// Run traces.

inline json to_json(const StepRecord& r) {
  return json{{"step", r.step},           {"sampled_ids", r.sampled_ids},
              {"mean_acc", r.mean_acc},   {"mean_signal", r.mean_signal},
              {"mu", r.mu},               {"mu_next", r.mu_next},
              {"mean_mastery", r.mean_mastery}};
}

inline std::string format_trace_jsonl(const RunTrace& trace) {
  std::string out;
  for (const auto& r : trace.records) out += dump_line(to_json(r));
  return out;
}

inline std::string csv_real(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string format_trace_csv(const RunTrace& trace) {
  std::string out = "step,mean_acc,mean_signal,mu,mu_next,mean_mastery\n";
  for (const auto& r : trace.records) {
    out += std::to_string(r.step) + "," + csv_real(r.mean_acc) + "," + csv_real(r.mean_signal) +
           "," + csv_real(r.mu) + "," + csv_real(r.mu_next) + "," + csv_real(r.mean_mastery) +
           "\n";
  }
  return out;
}

inline json epochs_json(const RunTrace& trace) {
  json arr = json::array();
  for (const auto& e : trace.epochs) {
    arr.push_back({{"epoch", e.epoch}, {"step", e.step}, {"counts", e.counts}});
  }
  return arr;
}

// ---------------------------------------------------------------------------
// Checkpoints.

inline json hyper_json(const Hyper& h) {
  return json{{"alpha", h.alpha}, {"beta", h.beta}, {"gamma", h.gamma}, {"n_batch", h.n_batch}};
}

inline json checkpoint_json(const SimulationState& s, const std::string& dataset_hash,
                            const std::string& config_hash) {
  json j;
  j["mu"] = s.scheduler.mu;
  j["sigma"] = s.scheduler.sigma;
  j["step"] = s.scheduler.step;
  j["hyper"] = hyper_json(s.scheduler.hyper);
  j["rng_state"] = serialize_rng(s.scheduler.rng);
  j["dataset_hash"] = dataset_hash;
  j["config_hash"] = config_hash;
  j["mastery"] = s.mastery;
  j["active_pool"] = s.active_pool;
  j["steps_to_threshold"] =
      s.steps_to_threshold ? json(*s.steps_to_threshold) : json(nullptr);
  return j;
}

inline SimulationState parse_checkpoint(const json& j, const std::string& expected_dataset_hash) {
  try {
    if (j.at("dataset_hash").get<std::string>() != expected_dataset_hash) {
      throw DataError("checkpoint: dataset hash does not match the current dataset");
    }
    SimulationState s;
    s.scheduler.mu = j.at("mu").get<double>();
    s.scheduler.sigma = j.at("sigma").get<double>();
    s.scheduler.step = j.at("step").get<std::size_t>();
    const auto& h = j.at("hyper");
    s.scheduler.hyper = {h.at("alpha").get<double>(), h.at("beta").get<double>(),
                         h.at("gamma").get<double>(), h.at("n_batch").get<std::size_t>()};
    s.scheduler.rng = deserialize_rng(j.at("rng_state").get<std::string>());
    s.mastery = j.at("mastery").get<std::vector<double>>();
    s.active_pool = j.at("active_pool").get<std::vector<std::size_t>>();
    if (!j.at("steps_to_threshold").is_null()) {
      s.steps_to_threshold = j.at("steps_to_threshold").get<std::size_t>();
    }
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Manifest.

inline constexpr std::string_view kLibraryVersion = "gainsched 0.1.0";

inline std::string toolchain_version() {
  std::string v(kLibraryVersion);
#if defined(__clang__)
  v += " clang " __clang_version__;
#elif defined(__GNUC__)
  v += " gcc " __VERSION__;
#endif
  return v;
}

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::string dataset_hash;
  std::uint64_t seed = 0;
  std::string mode;
  std::vector<std::string> outputs;
};

inline json to_json(const RunManifest& m) {
  return json{{"command", m.command},
              {"config_hash", m.config_hash},
              {"dataset_hash", m.dataset_hash},
              {"seed", m.seed},
              {"mode", m.mode},
              {"toolchain_version", toolchain_version()},
              {"outputs", m.outputs}};
}

}  // namespace gainsched
