#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "jmfusion/harness.hpp"

namespace {

int report_error(const std::string& kind, const std::string& message, int code) {
  std::cerr << nlohmann::json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal jaw-movement recognition: data, training and evaluation"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  unsigned jobs = 0;
  bool verbose = false;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "generate the synthetic dataset"},
      {"train", "train every configured run on the selected folds"},
      {"evaluate", "write per-class and overall metric tables"},
      {"compare-fusion", "rank the configured fusion levels"},
      {"ablate", "ablation report with parameters, FLOPs and inference time"},
      {"quantize", "post-training quantization with metric deltas"},
      {"flops", "parameter and FLOPs accounting without training"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "experiment configuration (JSON)");
    sub->add_option("--out", out_dir, "output directory (overrides the config)");
    sub->add_option("--seed", seed, "experiment seed (overrides the config)");
    sub->add_option("--jobs", jobs, "parallel workers (overrides the config)");
    sub->add_flag("-v,--verbose", verbose, "per-epoch progress on stderr");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), 2);
  }

  try {
    jmf::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = jmf::read_experiment_config(config_path);
    if (cfg.specs.empty()) cfg.specs.push_back(jmf::proposed_spec());
    if (!out_dir.empty()) cfg.out = out_dir;
    const auto* sub = app.get_subcommands().front();
    const std::string cmd = sub->get_name();
    if (sub->count("--seed")) {
      cfg.seed = seed;
      if (cmd == "synth") cfg.synth.seed = seed;
    }
    if (sub->count("--jobs")) cfg.jobs = jobs;
    nlohmann::json result;
    if (cmd == "synth")
      result = jmf::cmd_synth(cfg);
    else if (cmd == "train")
      result = jmf::cmd_train(cfg, verbose ? &std::cerr : nullptr);
    else if (cmd == "evaluate")
      result = jmf::cmd_evaluate(cfg);
    else if (cmd == "compare-fusion")
      result = jmf::cmd_compare_fusion(cfg);
    else if (cmd == "ablate")
      result = jmf::cmd_ablate(cfg);
    else if (cmd == "quantize")
      result = jmf::cmd_quantize(cfg);
    else
      result = jmf::cmd_flops(cfg);
    std::cout << result.dump(2) << std::endl;
    return 0;
  } catch (const jmf::Error& e) {
    return report_error(std::string(jmf::to_string(e.kind())), e.what(), 1);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), 1);
  }
}
