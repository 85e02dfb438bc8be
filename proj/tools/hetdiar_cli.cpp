// hetdiar: synthetic corpus generation, training, diarization, scoring,
// batch analysis and embedding projection.

#include "hetdiar/config.hpp"
#include "hetdiar/error.hpp"
#include "hetdiar/log.hpp"
#include "hetdiar/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct Override {
  std::string path;
  std::string value;
};

// Pulls "--a.b value" / "--a.b=value" pairs out of argv; the rest goes to CLI11.
std::vector<std::string> split_overrides(int argc, char** argv, std::vector<Override>& overrides) {
  std::vector<std::string> rest;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.rfind("--", 0) == 0 && arg.find('.') != std::string::npos && arg.find('.') < arg.find('=')) {
      const auto eq = arg.find('=');
      if (eq != std::string::npos) {
        overrides.push_back({arg.substr(2, eq - 2), arg.substr(eq + 1)});
      } else {
        if (i + 1 >= argc) throw hetdiar::UsageError("missing value for " + arg);
        overrides.push_back({arg.substr(2), argv[++i]});
      }
      continue;
    }
    rest.push_back(arg);
  }
  return rest;
}

nlohmann::json load_document(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw hetdiar::UsageError("cannot open config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw hetdiar::UsageError("config " + path + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hetdiar: speaker diarization with heterogeneous training batches"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, workdir, vb_switch, ref_path, hyp_path;
  std::int64_t seed = -1;
  int batches = 200;
  bool verbose = false, quiet = false, print_config = false;
  app.add_option("-c,--config", config_path, "JSON configuration document");
  app.add_option("--seed", seed, "Random seed (overrides the config)");
  app.add_option("-w,--workdir", workdir, "Artifacts directory (overrides the config)");
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");
  app.add_flag("-q,--quiet", quiet, "Suppress warnings");
  app.add_flag("--print-config", print_config, "Print the resolved configuration and exit");
  app.footer("Any configuration key can be overridden with --section.key VALUE, e.g. --assembly.crop_min 40.");

  app.add_subcommand("synth", "Generate the synthetic corpus");
  app.add_subcommand("train", "Train embedder, PLDA and VB models");
  app.add_subcommand("embed", "Extract segment embeddings for evaluation sessions");
  auto* diarize = app.add_subcommand("diarize", "Diarize evaluation sessions to RTTM");
  diarize->add_option("--vb", vb_switch, "VB resegmentation")->check(CLI::IsMember({"on", "off"}));
  auto* score = app.add_subcommand("score", "Score RTTM hypotheses (DER/JER)");
  score->add_option("--ref", ref_path, "Reference RTTM (scores the work directory when omitted)");
  score->add_option("--hyp", hyp_path, "Hypothesis RTTM");
  auto* analyze = app.add_subcommand("analyze-batches", "Batch composition and augmentation rate");
  analyze->add_option("--batches", batches, "Number of batches to draw");
  app.add_subcommand("project", "2-D projection of segment embeddings");

  std::vector<Override> overrides;
  try {
    std::vector<std::string> rest = split_overrides(argc, argv, overrides);
    std::reverse(rest.begin(), rest.end());
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const hetdiar::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  hetdiar::set_log_level(quiet ? hetdiar::LogLevel::kQuiet
                               : (verbose ? hetdiar::LogLevel::kInfo : hetdiar::LogLevel::kWarning));
  try {
    nlohmann::json doc = load_document(config_path);
    if (seed >= 0) doc["seed"] = seed;
    if (!workdir.empty()) doc["workdir"] = workdir;
    if (!vb_switch.empty()) hetdiar::apply_override(doc, "vb.enabled", vb_switch == "on" ? "true" : "false");
    for (const auto& o : overrides) hetdiar::apply_override(doc, o.path, o.value);

    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    nlohmann::json result;
    if (name == "score" && (!ref_path.empty() || !hyp_path.empty())) {
      if (ref_path.empty() || hyp_path.empty()) throw hetdiar::UsageError("score: --ref and --hyp go together");
      hetdiar::ScoringOptions opts;
      nlohmann::json merged = hetdiar::default_config_json();
      merged.merge_patch(doc);
      opts.collar_s = merged["metrics"]["collar_s"].get<double>();
      opts.skip_overlap = merged["metrics"]["skip_overlap"].get<bool>();
      result = hetdiar::cmd_score_files(ref_path, hyp_path, opts);
    } else {
      const hetdiar::PipelineConfig cfg = hetdiar::resolve_config(doc);
      if (print_config) {
        std::cout << hetdiar::to_json(cfg).dump(2) << '\n';
        return kExitOk;
      }
      if (name == "synth") result = hetdiar::cmd_synth(cfg);
      else if (name == "train") result = hetdiar::cmd_train(cfg);
      else if (name == "embed") result = hetdiar::cmd_embed(cfg);
      else if (name == "diarize") result = hetdiar::cmd_diarize(cfg);
      else if (name == "score") result = hetdiar::cmd_score(cfg);
      else if (name == "analyze-batches") result = hetdiar::cmd_analyze_batches(cfg, batches);
      else if (name == "project") result = hetdiar::cmd_project(cfg);
    }
    std::cout << result.dump(2) << '\n';
    return kExitOk;
  } catch (const hetdiar::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const hetdiar::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const hetdiar::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
}
