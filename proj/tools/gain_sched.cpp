#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gainsched/commands.hpp"

namespace {

using namespace gainsched;

template <class T>
std::optional<T> opt_if(const CLI::Option* opt, const T& value) {
  return opt->count() ? std::optional<T>(value) : std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gain-sched: angle-informed data scheduling toolkit"};
  app.require_subcommand(1);

  std::string config, dataset, out, mode, resume, fault;
  std::uint64_t seed = 0;
  double weight_c = 1.0;
  std::size_t halt_after = 0, n_samples = 2000;

  auto* prefill = app.add_subcommand("prefill", "final-layer signals for every dataset record");
  prefill->add_option("--dataset", dataset, "dataset JSONL")->required();
  prefill->add_option("--out", out, "signal JSONL to write")->required();
  auto* prefill_cfg = prefill->add_option("--config", config, "toy model config JSON");
  auto* prefill_seed = prefill->add_option("--seed", seed, "toy weight seed override");
  auto* prefill_w = prefill->add_option("--weight-c", weight_c, "inter-segment weight c");

  auto* rank_cmd = app.add_subcommand("rank", "sort signals by combined concentration");
  rank_cmd->add_option("--dataset", dataset, "signal JSONL from prefill")->required();
  rank_cmd->add_option("--out", out, "ranked JSONL to write")->required();
  rank_cmd->add_option("--weight-c", weight_c, "inter-segment weight c")->default_val(1.0);

  auto* simulate = app.add_subcommand("simulate", "run the scheduler against the surrogate learner");
  auto* sim_cfg = simulate->add_option("--config", config, "simulation config JSON");
  auto* sim_data = simulate->add_option("--dataset", dataset, "signal JSONL (default: synthetic)");
  simulate->add_option("--out", out, "output directory")->required();
  auto* sim_seed = simulate->add_option("--seed", seed, "run seed override");
  auto* sim_w = simulate->add_option("--weight-c", weight_c, "inter-segment weight c");
  auto* sim_mode = simulate->add_option("--mode", mode, "scheduling mode override");
  auto* sim_resume = simulate->add_option("--resume", resume, "continue from a checkpoint JSON");
  auto* sim_halt = simulate->add_option("--halt-after", halt_after, "stop after this many steps");

  auto* verify = app.add_subcommand("verify", "run the gradient and angle identity battery");
  verify->add_option("--out", out, "report JSON to write")->required();
  auto* verify_seed = verify->add_option("--seed", seed, "battery seed (default 1)");
  auto* verify_fault =
      verify->add_option("--inject-fault", fault, "corrupt the named check by 1e-3");

  auto* trace = app.add_subcommand("trace-layers", "per-layer signals as CSV");
  trace->add_option("--dataset", dataset, "dataset JSONL")->required();
  trace->add_option("--out", out, "CSV to write")->required();
  auto* trace_cfg = trace->add_option("--config", config, "toy model config JSON");
  auto* trace_seed = trace->add_option("--seed", seed, "toy weight seed override");
  auto* trace_w = trace->add_option("--weight-c", weight_c, "inter-segment weight c");

  auto* synth = app.add_subcommand("synth", "write a synthetic segmented dataset");
  synth->add_option("--out", out, "dataset JSONL to write")->required();
  synth->add_option("--samples", n_samples, "number of samples")->default_val(2000);
  auto* synth_seed = synth->add_option("--seed", seed, "dataset seed (default 2024)");
  auto* synth_cfg = synth->add_option("--config", config, "toy model config JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitSchema;
  }

  try {
    if (prefill->parsed()) {
      const auto n = cmd_prefill({dataset, out, opt_if(prefill_cfg, config),
                                  opt_if(prefill_seed, seed), opt_if(prefill_w, weight_c)});
      std::cout << "prefill: wrote " << n << " signal rows to " << out << "\n";
    } else if (rank_cmd->parsed()) {
      const auto ranked = cmd_rank({dataset, out, weight_c});
      std::cout << "rank: wrote " << ranked.size() << " rows to " << out << "\n";
    } else if (simulate->parsed()) {
      SimulateArgs a;
      a.config = opt_if(sim_cfg, config);
      a.dataset = opt_if(sim_data, dataset);
      a.out = out;
      a.seed = opt_if(sim_seed, seed);
      a.weight_c = opt_if(sim_w, weight_c);
      a.mode = opt_if(sim_mode, mode);
      a.resume = opt_if(sim_resume, resume);
      a.halt_after = opt_if(sim_halt, halt_after);
      const auto res = cmd_simulate(a);
      std::cout << res.summary["steps_to_threshold"].dump() << "\n";
    } else if (verify->parsed()) {
      VerifyArgs a{out, verify_seed->count() ? seed : 1, opt_if(verify_fault, fault)};
      const auto rep = cmd_verify(a);
      std::cout << "verify: " << rep.checks.size() << " checks passed\n";
    } else if (trace->parsed()) {
      const auto n = cmd_trace_layers({dataset, out, opt_if(trace_cfg, config),
                                       opt_if(trace_seed, seed), opt_if(trace_w, weight_c)});
      std::cout << "trace-layers: traced " << n << " samples into " << out << "\n";
    } else if (synth->parsed()) {
      cmd_synth({out, n_samples, synth_seed->count() ? seed : 2024, opt_if(synth_cfg, config)});
      std::cout << "synth: wrote " << n_samples << " samples to " << out << "\n";
    }
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return kExitSchema;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const VerificationFailure& e) {
    std::cerr << e.what() << "\n";
    return kExitVerification;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOk;
}
