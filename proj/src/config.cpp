#include "hetdiar/config.hpp"

#include "hetdiar/error.hpp"

#include <sstream>

namespace hetdiar {

namespace {

using nlohmann::json;

json assembly_json(const AssemblyConfig& a) {
  return {{"batch_size", a.batch_size},
          {"frames", a.frames},
          {"crop_min", a.crop_min},
          {"crop_max", a.crop_max},
          {"overlap_mode", a.overlap_mode == OverlapMode::kAdditiveMix ? "additive_mix" : "none"},
          {"overlap_fraction", a.overlap_fraction}};
}

json vb_json(const VbSettings& v) {
  return {{"enabled", v.enabled},
          {"ubm_components", v.ubm_components},
          {"ubm_iterations", v.ubm_iterations},
          {"max_ubm_frames", v.max_ubm_frames},
          {"rank", v.rank},
          {"eigenvoice_iterations", v.eigenvoice_iterations},
          {"min_duration", v.params.min_duration},
          {"loop_probability", v.params.loop_probability},
          {"downsampling_factor", v.params.downsampling_factor},
          {"max_iterations", v.params.max_iterations}};
}

// Every key of `doc` must exist in `reference`, recursively.
void check_known(const json& doc, const json& reference, const std::string& prefix) {
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!reference.contains(it.key())) throw UsageError("unknown config key: " + path);
    if (it->is_object() && reference.at(it.key()).is_object()) check_known(*it, reference.at(it.key()), path);
  }
}

}  // namespace

void PipelineConfig::validate() const {
  corpus.validate();
  assembly.validate();
  embedder.validate();
  if (training.epochs < 1 || training.batches_per_epoch < 1 || !(training.learning_rate > 0.0))
    throw UsageError("training: epochs, batches_per_epoch and learning_rate must be positive");
  if (plda.rank < 0 || plda.rank > embedder.embed_dim) throw UsageError("plda.rank must lie in [0, embed_dim]");
  if (plda.iterations < 0 || !(plda.crop_s > 0.0) || plda.crops_per_utterance < 1)
    throw UsageError("plda: invalid iterations or crop settings");
  if (clustering.mode != "known_k" && clustering.mode != "threshold")
    throw UsageError("clustering.mode must be known_k or threshold");
  if (clustering.metric != "score" && clustering.metric != "row_distance")
    throw UsageError("clustering.metric must be score or row_distance");
  if (features.cmn_window < 0 || !(features.segment_window_s > 0.0) ||
      !(features.segment_overlap >= 0.0 && features.segment_overlap < 1.0))
    throw UsageError("features: invalid segmentation settings");
  vb.params.validate();
  if (vb.ubm_components < 1 || vb.rank < 1 || vb.ubm_iterations < 0 || vb.eigenvoice_iterations < 0)
    throw UsageError("vb: invalid model sizes");
  if (metrics.collar_s < 0.0) throw UsageError("metrics.collar_s must be >= 0");
  if (projection.method != "tsne" && projection.method != "pca") throw UsageError("projection.method must be tsne or pca");
}

json to_json(const PipelineConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["workdir"] = c.workdir;
  j["corpus"] = c.corpus;
  j["features"] = {{"cmn_window", c.features.cmn_window},
                   {"segment_window_s", c.features.segment_window_s},
                   {"segment_overlap", c.features.segment_overlap}};
  j["assembly"] = assembly_json(c.assembly);
  j["embedder"] = c.embedder;
  j["embedder"].erase("n_classes");
  j["embedder"].erase("input_dim");
  j["training"] = c.training;
  j["plda"] = {{"rank", c.plda.rank},
               {"iterations", c.plda.iterations},
               {"crop_s", c.plda.crop_s},
               {"crops_per_utterance", c.plda.crops_per_utterance}};
  j["clustering"] = {{"mode", c.clustering.mode},
                     {"threshold", c.clustering.threshold},
                     {"calibrate", c.clustering.calibrate},
                     {"dev_sessions", c.clustering.dev_sessions},
                     {"metric", c.clustering.metric}};
  j["vb"] = vb_json(c.vb);
  j["metrics"] = {{"collar_s", c.metrics.collar_s}, {"skip_overlap", c.metrics.skip_overlap}};
  j["projection"] = {{"method", c.projection.method},
                     {"perplexity", c.projection.perplexity},
                     {"iterations", c.projection.iterations},
                     {"max_points", c.projection.max_points},
                     {"kde_resolution", c.projection.kde_resolution}};
  return j;
}

json default_config_json() {
  json j = to_json(PipelineConfig{});
  j.erase("seed");
  return j;
}

PipelineConfig resolve_config(const json& doc) {
  if (!doc.is_object()) throw UsageError("config must be a JSON object");
  json reference = default_config_json();
  reference["seed"] = 0;
  check_known(doc, reference, "");
  if (!doc.contains("seed") || !doc.at("seed").is_number_integer()) throw UsageError("config: seed is mandatory");
  json merged = default_config_json();
  merged.merge_patch(doc);

  PipelineConfig c;
  try {
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.workdir = merged.at("workdir").get<std::string>();
    c.corpus = merged.at("corpus").get<CorpusConfig>();
    const auto& f = merged.at("features");
    c.features.cmn_window = f.at("cmn_window").get<int>();
    c.features.segment_window_s = f.at("segment_window_s").get<double>();
    c.features.segment_overlap = f.at("segment_overlap").get<double>();
    const auto& a = merged.at("assembly");
    c.assembly.batch_size = a.at("batch_size").get<int>();
    c.assembly.frames = a.at("frames").get<int>();
    c.assembly.crop_min = a.at("crop_min").get<int>();
    c.assembly.crop_max = a.at("crop_max").get<int>();
    const auto mode = a.at("overlap_mode").get<std::string>();
    if (mode != "none" && mode != "additive_mix") throw UsageError("assembly.overlap_mode must be none or additive_mix");
    c.assembly.overlap_mode = mode == "additive_mix" ? OverlapMode::kAdditiveMix : OverlapMode::kNone;
    c.assembly.overlap_fraction = a.at("overlap_fraction").get<double>();
    c.assembly.dim = c.corpus.dim;
    c.assembly.seed = c.seed;
    c.embedder = merged.at("embedder").get<EmbedderConfig>();
    c.embedder.input_dim = c.corpus.dim;
    c.embedder.n_classes = c.corpus.train_speakers;
    c.training = merged.at("training").get<TrainSchedule>();
    const auto& p = merged.at("plda");
    c.plda.rank = p.at("rank").get<int>();
    c.plda.iterations = p.at("iterations").get<int>();
    c.plda.crop_s = p.at("crop_s").get<double>();
    c.plda.crops_per_utterance = p.at("crops_per_utterance").get<int>();
    const auto& cl = merged.at("clustering");
    c.clustering.mode = cl.at("mode").get<std::string>();
    c.clustering.threshold = cl.at("threshold").get<double>();
    c.clustering.calibrate = cl.at("calibrate").get<bool>();
    c.clustering.dev_sessions = cl.at("dev_sessions").get<int>();
    c.clustering.metric = cl.at("metric").get<std::string>();
    const auto& v = merged.at("vb");
    c.vb.enabled = v.at("enabled").get<bool>();
    c.vb.ubm_components = v.at("ubm_components").get<int>();
    c.vb.ubm_iterations = v.at("ubm_iterations").get<int>();
    c.vb.max_ubm_frames = v.at("max_ubm_frames").get<int>();
    c.vb.rank = v.at("rank").get<int>();
    c.vb.eigenvoice_iterations = v.at("eigenvoice_iterations").get<int>();
    c.vb.params.min_duration = v.at("min_duration").get<int>();
    c.vb.params.loop_probability = v.at("loop_probability").get<double>();
    c.vb.params.downsampling_factor = v.at("downsampling_factor").get<int>();
    c.vb.params.max_iterations = v.at("max_iterations").get<int>();
    const auto& m = merged.at("metrics");
    c.metrics.collar_s = m.at("collar_s").get<double>();
    c.metrics.skip_overlap = m.at("skip_overlap").get<bool>();
    const auto& pr = merged.at("projection");
    c.projection.method = pr.at("method").get<std::string>();
    c.projection.perplexity = pr.at("perplexity").get<double>();
    c.projection.iterations = pr.at("iterations").get<int>();
    c.projection.max_points = pr.at("max_points").get<int>();
    c.projection.kde_resolution = pr.at("kde_resolution").get<int>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

void apply_override(json& doc, const std::string& dot_path, const std::string& value) {
  json reference = default_config_json();
  reference["seed"] = 0;
  std::vector<std::string> keys;
  std::stringstream ss(dot_path);
  for (std::string part; std::getline(ss, part, '.');) keys.push_back(part);
  if (keys.empty()) throw UsageError("empty override path");
  const json* ref = &reference;
  json* node = &doc;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (!ref->is_object() || !ref->contains(keys[i])) throw UsageError("unknown config key: " + dot_path);
    ref = &ref->at(keys[i]);
    if (i + 1 < keys.size()) {
      if (!node->contains(keys[i]) || !(*node)[keys[i]].is_object()) (*node)[keys[i]] = json::object();
      node = &(*node)[keys[i]];
    }
  }
  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;
  (*node)[keys.back()] = parsed;
}

}  // namespace hetdiar
