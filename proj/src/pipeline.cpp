#include "hetdiar/pipeline.hpp"

#include "hetdiar/binary_io.hpp"
#include "hetdiar/clustering.hpp"
#include "hetdiar/error.hpp"
#include "hetdiar/log.hpp"
#include "hetdiar/projection.hpp"
#include "hetdiar/rng.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace hetdiar {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kEmbedderStream = 11;
constexpr std::uint64_t kPldaStream = 12;
constexpr std::uint64_t kDevStream = 13;
constexpr std::uint64_t kUbmStream = 14;
constexpr std::uint64_t kAnalysisStream = 15;
constexpr std::uint64_t kProjectionStream = 16;

// Runs `fn`, prefixing any error message with the stage name.
template <typename Fn>
auto with_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const UsageError& e) {
    throw UsageError(stage + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(stage + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(stage + ": " + e.what());
  } catch (const fs::filesystem_error& e) {
    throw DataError(stage + ": " + e.what());
  }
}

std::vector<std::pair<double, double>> speech_regions(const DiarizationHypothesis& hyp) {
  std::vector<std::pair<double, double>> all;
  for (const auto& iv : hyp.intervals) all.emplace_back(iv.start_s, iv.end_s);
  std::sort(all.begin(), all.end());
  std::vector<std::pair<double, double>> out;
  for (const auto& r : all) {
    if (!out.empty() && r.first <= out.back().second)
      out.back().second = std::max(out.back().second, r.second);
    else
      out.push_back(r);
  }
  return out;
}

CorpusIndex prepared_index(const CorpusIndex& index, const FeatureSettings& settings) {
  CorpusIndex out;
  out.speakers = index.speakers;
  for (const auto& utts : index.utterances) {
    auto& dst = out.utterances.emplace_back();
    for (const auto& u : utts) dst.push_back(prepare_features(u, settings));
  }
  return out;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string label_name(int label) { return "S" + std::to_string(label); }

}  // namespace

FeatureMatrix prepare_features(const FeatureMatrix& feats, const FeatureSettings& settings) {
  if (settings.cmn_window <= 0) return feats;
  return sliding_mean_normalize(feats, settings.cmn_window);
}

std::string majority_speaker(const DiarizationHypothesis& reference, double start_s, double end_s) {
  std::map<std::string, double> overlap;
  for (const auto& iv : reference.intervals) {
    const double o = std::min(end_s, iv.end_s) - std::max(start_s, iv.start_s);
    if (o > 0) overlap[iv.speaker] += o;
  }
  std::string best;
  double best_o = 0.0;
  for (const auto& [spk, o] : overlap)
    if (o > best_o) {
      best = spk;
      best_o = o;
    }
  return best;
}

EmbeddedSession embed_session(const TrainedSystem& system, const PipelineConfig& cfg, const FeatureMatrix& raw,
                              const DiarizationHypothesis& speech) {
  const FeatureMatrix feats = prepare_features(raw, cfg.features);
  const Eigen::Index total = feats.num_frames();
  const double shift = feats.frame_shift_s;
  const Eigen::Index min_frames = system.embedder.config().min_frames();
  if (total < min_frames) throw DataError("session shorter than the embedder's minimum input");

  EmbeddedSession out;
  std::vector<FeatureMatrix> inputs;
  for (const auto& [r_start, r_end] : speech_regions(speech)) {
    const Eigen::Index b = std::clamp<Eigen::Index>(std::llround(r_start / shift), 0, total);
    const Eigen::Index e = std::clamp<Eigen::Index>(std::llround(r_end / shift), 0, total);
    if (e <= b) continue;
    auto spans = uniform_segment(slice(feats, b, e), cfg.features.segment_window_s, cfg.features.segment_overlap,
                                 speech.session_id);
    for (std::size_t i = 0; i < spans.size(); ++i) {
      auto& s = spans[i];
      s.begin_frame += b;
      s.end_frame += b;
      s.start_s = double(s.begin_frame) * shift;
      s.end_s = double(s.end_frame) * shift;
    }
    for (std::size_t i = 0; i < spans.size(); ++i) {
      double lo = r_start, hi = r_end;
      if (i > 0) {
        const auto& p = spans[i - 1];
        lo = p.end_s > spans[i].start_s ? 0.5 * (p.end_s + spans[i].start_s) : spans[i].start_s;
      }
      if (i + 1 < spans.size()) {
        const auto& n = spans[i + 1];
        hi = spans[i].end_s > n.start_s ? 0.5 * (spans[i].end_s + n.start_s) : n.start_s;
      }
      out.coverage.emplace_back(lo, hi);
      Eigen::Index sb = spans[i].begin_frame, se = spans[i].end_frame;
      if (se - sb < min_frames) {
        const Eigen::Index centre = (sb + se) / 2;
        sb = std::clamp<Eigen::Index>(centre - min_frames / 2, 0, total - min_frames);
        se = sb + min_frames;
      }
      inputs.push_back(slice(feats, sb, se));
      out.spans.push_back(spans[i]);
    }
  }
  if (inputs.empty()) throw DataError("no speech to segment in session " + speech.session_id);
  out.embeddings = extract_embeddings(system.embedder, inputs);
  return out;
}

DiarizationHypothesis labels_to_hypothesis(const std::string& session_id, const EmbeddedSession& session,
                                           const std::vector<int>& labels) {
  if (labels.size() != session.coverage.size()) throw UsageError("label count does not match segment count");
  DiarizationHypothesis hyp;
  hyp.session_id = session_id;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto [lo, hi] = session.coverage[i];
    if (hi <= lo) continue;
    hyp.intervals.push_back({lo, hi, label_name(labels[i])});
  }
  return hyp.merged();
}

SessionDiarization diarize_session(const TrainedSystem& system, const PipelineConfig& cfg, const FeatureMatrix& feats,
                                   const DiarizationHypothesis& speech, std::optional<int> known_k, bool use_vb) {
  const EmbeddedSession session = with_stage("embed", [&] { return embed_session(system, cfg, feats, speech); });
  const auto m = static_cast<int>(session.spans.size());
  std::vector<int> labels(static_cast<std::size_t>(m), 0);
  if (m > 1) {
    const Eigen::MatrixXd scores = with_stage("score", [&] {
      return score_matrix(system.plda, preprocess_rows(system.preprocessor, session.embeddings));
    });
    ClusteringConfig cc;
    if (cfg.clustering.mode == "known_k") {
      if (!known_k) throw UsageError("cluster: known_k mode needs the speaker count");
      cc = ClusteringConfig::with_known_k(std::min(*known_k, m));
    } else {
      cc = ClusteringConfig::with_threshold(system.threshold);
    }
    cc.metric = cfg.clustering.metric == "row_distance" ? ClusterMetric::kRowDistance : ClusterMetric::kScore;
    labels = with_stage("cluster", [&] { return ahc(scores, cc); });
  }
  SessionDiarization out;
  out.segment_labels = labels;
  out.clustered = labels_to_hypothesis(speech.session_id, session, labels);
  if (use_vb) {
    out.resegmented = with_stage("vb", [&] {
      return vb_resegment(prepare_features(feats, cfg.features), out.clustered, system.vb_model, cfg.vb.params);
    });
  }
  return out;
}

TrainedSystem train_system(const PipelineConfig& cfg, const SyntheticCorpus& corpus) {
  TrainedSystem system;
  const CorpusIndex index = prepared_index(corpus.train, cfg.features);
  AssemblyConfig assembly = cfg.assembly;
  assembly.dim = static_cast<int>(index.utterances.front().front().dim());

  TrainResult trained = with_stage("train-embedder", [&] {
    return train_embedder(index, assembly, cfg.embedder, cfg.training, substream_seed(cfg.seed, kEmbedderStream));
  });
  system.embedder = std::move(trained.model);
  system.report["embedder"] = trained.report.to_json();

  // PLDA on fixed-length crops of the training utterances.
  with_stage("train-plda", [&] {
    Rng rng(substream_seed(cfg.seed, kPldaStream));
    std::vector<FeatureMatrix> crops;
    std::vector<int> ids;
    for (std::size_t s = 0; s < index.utterances.size(); ++s)
      for (const auto& utt : index.utterances[s])
        for (int c = 0; c < cfg.plda.crops_per_utterance; ++c) {
          const Eigen::Index len = std::min<Eigen::Index>(
              utt.num_frames(), std::max<Eigen::Index>(1, std::llround(cfg.plda.crop_s / utt.frame_shift_s)));
          const Eigen::Index start = rng.uniform_int(0, utt.num_frames() - len);
          crops.push_back(slice(utt, start, start + len));
          ids.push_back(static_cast<int>(s));
        }
    const Eigen::MatrixXd raw = extract_embeddings(system.embedder, crops);
    system.preprocessor = fit_preprocessor(raw);
    const int rank = cfg.plda.rank > 0 ? cfg.plda.rank : std::max(1, system.embedder.config().embed_dim / 2);
    std::vector<double> objective;
    system.plda = fit_plda(preprocess_rows(system.preprocessor, raw), ids, rank, cfg.plda.iterations, &objective);
    system.report["plda"] = {{"rank", rank}, {"training_vectors", raw.rows()}, {"objective", objective}};
  });

  system.threshold = cfg.clustering.threshold;
  if (cfg.clustering.mode == "threshold" && cfg.clustering.calibrate) {
    with_stage("calibrate", [&] {
      Rng rng(substream_seed(cfg.seed, kDevStream));
      std::vector<DevSession> dev;
      for (int d = 0; d < cfg.clustering.dev_sessions; ++d) {
        const auto pool = static_cast<std::int64_t>(corpus.train_speakers.size());
        const auto n = rng.uniform_int(2, std::min<std::int64_t>(4, pool));
        std::vector<std::size_t> order(corpus.train_speakers.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::vector<SyntheticSpeaker> chosen;
        for (std::int64_t i = 0; i < n; ++i) {
          std::swap(order[i], order[rng.uniform_int(i, pool - 1)]);
          chosen.push_back(corpus.train_speakers[order[i]]);
        }
        const SynthSession sess = synth_session(chosen, cfg.corpus.session_s, cfg.corpus.turns, rng,
                                                "dev" + std::to_string(d), cfg.corpus.frame_shift_s, corpus.content);
        const EmbeddedSession emb = embed_session(system, cfg, sess.features, sess.reference);
        DevSession ds;
        ds.similarity = score_matrix(system.plda, preprocess_rows(system.preprocessor, emb.embeddings));
        std::vector<std::string> names;
        for (const auto& [lo, hi] : emb.coverage) {
          const std::string spk = majority_speaker(sess.reference, lo, hi);
          auto it = std::find(names.begin(), names.end(), spk);
          if (it == names.end()) {
            names.push_back(spk);
            it = names.end() - 1;
          }
          ds.reference.push_back(static_cast<int>(it - names.begin()));
        }
        dev.push_back(std::move(ds));
      }
      const auto metric =
          cfg.clustering.metric == "row_distance" ? ClusterMetric::kRowDistance : ClusterMetric::kScore;
      const ThresholdCalibration cal = calibrate_threshold(dev, metric);
      system.threshold = cal.threshold;
      system.report["calibration"] = {{"threshold", cal.threshold}, {"mean_segment_der", cal.mean_der}};
    });
  }
  system.report["threshold"] = system.threshold;

  with_stage("train-vb", [&] {
    Eigen::Index pooled = 0;
    for (const auto& utts : index.utterances)
      for (const auto& u : utts) pooled += u.num_frames();
    const Eigen::Index stride = std::max<Eigen::Index>(1, (pooled + cfg.vb.max_ubm_frames - 1) / cfg.vb.max_ubm_frames);
    Eigen::MatrixXd frames((pooled + stride - 1) / stride, index.utterances.front().front().dim());
    Eigen::Index g = 0, row = 0;
    for (const auto& utts : index.utterances)
      for (const auto& u : utts)
        for (Eigen::Index t = 0; t < u.num_frames(); ++t, ++g)
          if (g % stride == 0) frames.row(row++) = u.frames.row(t);
    frames.conservativeResize(row, Eigen::NoChange);
    std::vector<double> ubm_objective;
    const Ubm ubm = train_ubm(frames, cfg.vb.ubm_components, cfg.vb.ubm_iterations,
                              substream_seed(cfg.seed, kUbmStream), &ubm_objective);
    std::vector<SpeakerStats> stats;
    for (const auto& utts : index.utterances) {
      Eigen::Index n = 0;
      for (const auto& u : utts) n += u.num_frames();
      Eigen::MatrixXd all(n, frames.cols());
      Eigen::Index at = 0;
      for (const auto& u : utts) {
        all.middleRows(at, u.num_frames()) = u.frames;
        at += u.num_frames();
      }
      stats.push_back(accumulate_stats(ubm, all));
    }
    const int rank = std::min<int>(cfg.vb.rank, static_cast<int>(stats.size()));
    system.vb_model = train_eigenvoices(ubm, stats, rank, cfg.vb.eigenvoice_iterations);
    system.report["vb"] = {{"ubm_components", cfg.vb.ubm_components}, {"rank", rank},
                           {"ubm_objective", ubm_objective}};
  });
  return system;
}

CorpusScore score_sessions(const std::vector<DiarizationHypothesis>& references,
                           const std::vector<DiarizationHypothesis>& hypotheses, const ScoringOptions& opts) {
  CorpusScore out;
  std::int64_t error_ms = 0;
  double scored_s = 0.0, jer_sum = 0.0;
  json sessions = json::array();
  for (const auto& ref : references) {
    DiarizationHypothesis hyp;
    hyp.session_id = ref.session_id;
    for (const auto& h : hypotheses)
      if (h.session_id == ref.session_id) hyp = h;
    const DerReport d = score_der(ref, hyp, opts);
    const double j = jer(ref, hyp);
    json entry = score_report_json(d, j);
    entry["session"] = ref.session_id;
    sessions.push_back(entry);
    error_ms += d.error_ms;
    scored_s += d.scored_speech_s;
    jer_sum += j;
  }
  out.der = scored_s > 0 ? double(error_ms) / (1000.0 * scored_s) : 0.0;
  out.mean_jer = references.empty() ? 0.0 : jer_sum / double(references.size());
  out.report = {{"der", out.der}, {"mean_jer", out.mean_jer}, {"collar_s", opts.collar_s},
                {"skip_overlap", opts.skip_overlap}, {"sessions", sessions}};
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts

WorkdirLock::WorkdirLock(const fs::path& root) : path_(root / ".lock") {
  fs::create_directories(root);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0)
    throw UsageError("work directory " + root.string() + " is locked by another command (remove " + path_.string() +
                     " if stale)");
  ::close(fd);
}

WorkdirLock::~WorkdirLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_system(const fs::path& dir, const TrainedSystem& system) {
  fs::create_directories(dir);
  save_embedder(dir / "embedder.hdem", system.embedder);
  save_plda(dir / "plda.hdpl", system.preprocessor, system.plda);
  save_vb_model(dir / "vb.hdvb", system.vb_model);
  write_text_file(dir / "system.json", dump({{"threshold", system.threshold}}));
}

TrainedSystem load_system(const fs::path& dir) {
  TrainedSystem system;
  system.embedder = load_embedder(dir / "embedder.hdem");
  load_plda(dir / "plda.hdpl", system.preprocessor, system.plda);
  system.vb_model = load_vb_model(dir / "vb.hdvb");
  try {
    system.threshold = json::parse(read_text_file(dir / "system.json")).at("threshold").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("system.json: ") + e.what());
  }
  return system;
}

void write_manifest(const fs::path& root, const std::string& command, const PipelineConfig& cfg) {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), root).generic_string();
    if (rel == "manifest.json" || rel == ".lock") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  json artifacts = json::object();
  for (const auto& f : files) artifacts[f] = io::sha256_file(root / f);
  json config = to_json(cfg);
  config.erase("workdir");
  write_text_file(root / "manifest.json",
                  dump({{"command", command}, {"seed", cfg.seed}, {"config", config}, {"artifacts", artifacts}}));
}

namespace {

SyntheticCorpus load_corpus(const PipelineConfig& cfg) {
  return with_stage("corpus", [&] { return read_corpus(fs::path(cfg.workdir) / "corpus"); });
}

TrainedSystem load_models(const PipelineConfig& cfg) {
  return with_stage("models", [&] { return load_system(fs::path(cfg.workdir) / "models"); });
}

std::vector<DiarizationHypothesis> load_hypotheses(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".rttm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<DiarizationHypothesis> out;
  for (const auto& f : files)
    for (auto& h : from_rttm(read_rttm_file(f.string()))) out.push_back(std::move(h));
  return out;
}

}  // namespace

json cmd_synth(const PipelineConfig& cfg) {
  const fs::path root(cfg.workdir);
  WorkdirLock lock(root);
  const SyntheticCorpus corpus = with_stage("synth", [&] { return generate_corpus(cfg.corpus, cfg.seed); });
  with_stage("synth", [&] {
    fs::remove_all(root / "corpus");
    write_corpus(root / "corpus", corpus);
  });
  write_manifest(root, "synth", cfg);
  return {{"train_speakers", corpus.train_speakers.size()},
          {"eval_speakers", corpus.eval_speakers.size()},
          {"sessions", corpus.sessions.size()}};
}

json cmd_train(const PipelineConfig& cfg) {
  const fs::path root(cfg.workdir);
  WorkdirLock lock(root);
  const SyntheticCorpus corpus = load_corpus(cfg);
  const TrainedSystem system = train_system(cfg, corpus);
  with_stage("train", [&] {
    save_system(root / "models", system);
    write_text_file(root / "reports" / "train.json", dump(system.report));
  });
  write_manifest(root, "train", cfg);
  return {{"augmentation_rate", system.report["embedder"]["augmentation_rate"]},
          {"final_loss", system.report["embedder"]["epoch_mean_loss"].back()},
          {"threshold", system.threshold}};
}

json cmd_embed(const PipelineConfig& cfg) {
  const fs::path root(cfg.workdir);
  WorkdirLock lock(root);
  const SyntheticCorpus corpus = load_corpus(cfg);
  const TrainedSystem system = load_models(cfg);
  json sessions = json::array();
  std::size_t total = 0;
  for (const auto& sess : corpus.sessions) {
    const EmbeddedSession emb = with_stage("embed", [&] { return embed_session(system, cfg, sess.features, sess.reference); });
    json segs = json::array();
    for (std::size_t i = 0; i < emb.spans.size(); ++i) {
      const auto row = emb.embeddings.row(static_cast<Eigen::Index>(i));
      segs.push_back({{"start_s", emb.spans[i].start_s},
                      {"end_s", emb.spans[i].end_s},
                      {"speaker", majority_speaker(sess.reference, emb.coverage[i].first, emb.coverage[i].second)},
                      {"embedding", std::vector<double>(row.data(), row.data() + row.size())}});
    }
    total += emb.spans.size();
    sessions.push_back({{"session", sess.session_id}, {"segments", segs}});
  }
  write_text_file(root / "reports" / "embeddings.json", dump({{"sessions", sessions}}));
  write_manifest(root, "embed", cfg);
  return {{"segments", total}};
}

json cmd_diarize(const PipelineConfig& cfg) {
  const fs::path root(cfg.workdir);
  WorkdirLock lock(root);
  const SyntheticCorpus corpus = load_corpus(cfg);
  const TrainedSystem system = load_models(cfg);
  fs::remove_all(root / "rttm");
  fs::create_directories(root / "rttm" / "ahc");
  if (cfg.vb.enabled) fs::create_directories(root / "rttm" / "vb");
  json sessions = json::array(), clusters = json::object();
  for (const auto& sess : corpus.sessions) {
    const auto k = static_cast<int>(sess.reference.speakers().size());
    const SessionDiarization result = diarize_session(system, cfg, sess.features, sess.reference, k, cfg.vb.enabled);
    write_rttm_file((root / "rttm" / "ahc" / (sess.session_id + ".rttm")).string(), to_rttm(result.clustered));
    json assignment = json::object();
    for (std::size_t i = 0; i < result.segment_labels.size(); ++i)
      assignment[std::to_string(i)] = result.segment_labels[i];
    clusters[sess.session_id] = assignment;
    json entry = {{"session", sess.session_id}, {"ahc_speakers", result.clustered.speakers().size()}};
    if (result.resegmented) {
      write_rttm_file((root / "rttm" / "vb" / (sess.session_id + ".rttm")).string(), to_rttm(*result.resegmented));
      entry["vb_speakers"] = result.resegmented->speakers().size();
    }
    sessions.push_back(entry);
  }
  write_text_file(root / "reports" / "diarize.json", dump({{"vb", cfg.vb.enabled}, {"sessions", sessions}}));
  write_text_file(root / "reports" / "clusters.json", dump(clusters));
  write_manifest(root, "diarize", cfg);
  return {{"sessions", corpus.sessions.size()}, {"vb", cfg.vb.enabled}};
}

json cmd_score(const PipelineConfig& cfg) {
  const fs::path root(cfg.workdir);
  WorkdirLock lock(root);
  const SyntheticCorpus corpus = load_corpus(cfg);
  std::vector<DiarizationHypothesis> refs;
  for (const auto& s : corpus.sessions) refs.push_back(s.reference);
  json report = json::object(), summary = json::object();
  for (const std::string system : {"ahc", "vb"}) {
    const fs::path dir = root / "rttm" / system;
    if (!fs::exists(dir)) continue;
    const CorpusScore score = with_stage("score", [&] { return score_sessions(refs, load_hypotheses(dir), cfg.metrics); });
    report[system] = score.report;
    summary[system] = {{"der", score.der}, {"mean_jer", score.mean_jer}};
  }
  if (report.empty()) throw DataError("score: no hypotheses found; run diarize first");
  write_text_file(root / "reports" / "score.json", dump(report));
  write_manifest(root, "score", cfg);
  return summary;
}

json cmd_score_files(const fs::path& ref, const fs::path& hyp, const ScoringOptions& opts) {
  return with_stage("score", [&] {
    const auto refs = from_rttm(read_rttm_file(ref.string()));
    const auto hyps = from_rttm(read_rttm_file(hyp.string()));
    return score_sessions(refs, hyps, opts).report;
  });
}

json cmd_analyze_batches(const PipelineConfig& cfg, int num_batches) {
  const fs::path root(cfg.workdir);
  WorkdirLock lock(root);
  const SyntheticCorpus corpus = load_corpus(cfg);
  if (num_batches < 1) throw UsageError("analyze-batches: need at least one batch");
  const json report = with_stage("analyze-batches", [&] {
    const CorpusIndex index = prepared_index(corpus.train, cfg.features);
    AssemblyConfig acfg = cfg.assembly;
    acfg.dim = static_cast<int>(index.utterances.front().front().dim());
    acfg.seed = substream_seed(cfg.seed, kAnalysisStream);
    BatchAssembler assembler(index, acfg);
    AugmentationStats stats;
    std::int64_t one_hot = 0;
    for (int i = 0; i < num_batches; ++i) {
      const AssembledBatch batch = assembler.next();
      stats.observe(batch);
      for (Eigen::Index b = 0; b < batch.labels.rows(); ++b)
        if (batch.labels.row(b).maxCoeff() == 1.0) ++one_hot;
    }
    json crops = json::object(), spk = json::object();
    for (const auto& [len, n] : stats.crop_length_histogram) crops[std::to_string(len)] = n;
    for (const auto& [c, n] : stats.speakers_per_row_histogram) spk[std::to_string(c)] = n;
    return json{{"frames", acfg.frames},
                {"crop_min", acfg.crop_min},
                {"crop_max", acfg.crop_max},
                {"batches", stats.batches_total},
                {"rows_total", stats.rows_total},
                {"rows_multispeaker", stats.rows_multispeaker},
                {"augmentation_rate", stats.rate()},
                {"batch_augmentation_rate", stats.batch_rate()},
                {"one_hot_rows", one_hot},
                {"crop_length_histogram", crops},
                {"speakers_per_row_histogram", spk}};
  });
  write_text_file(root / "reports" / "batches.json", dump(report));
  write_manifest(root, "analyze-batches", cfg);
  return {{"augmentation_rate", report["augmentation_rate"]}, {"rows_total", report["rows_total"]}};
}

json cmd_project(const PipelineConfig& cfg) {
  const fs::path root(cfg.workdir);
  WorkdirLock lock(root);
  const SyntheticCorpus corpus = load_corpus(cfg);
  const TrainedSystem system = load_models(cfg);
  std::vector<Eigen::VectorXd> rows;
  std::vector<std::string> labels, groups;
  for (const auto& sess : corpus.sessions) {
    if (static_cast<int>(rows.size()) >= cfg.projection.max_points) break;
    const EmbeddedSession emb = with_stage("embed", [&] { return embed_session(system, cfg, sess.features, sess.reference); });
    for (std::size_t i = 0; i < emb.spans.size() && static_cast<int>(rows.size()) < cfg.projection.max_points; ++i) {
      const double lo = emb.spans[i].start_s, hi = emb.spans[i].end_s;
      std::set<std::string> present;
      for (const auto& iv : sess.reference.intervals)
        if (std::min(hi, iv.end_s) - std::max(lo, iv.start_s) > 0) present.insert(iv.speaker);
      std::string group;
      for (const auto& s : present) group += (group.empty() ? "" : "&") + s;
      rows.push_back(emb.embeddings.row(static_cast<Eigen::Index>(i)).transpose());
      labels.push_back(majority_speaker(sess.reference, lo, hi));
      groups.push_back(sess.session_id + ":" + group);
    }
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), system.embedder.config().embed_dim);
  for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  const Eigen::MatrixXd white = whiten_rows(system.preprocessor, x);

  json report = {{"method", cfg.projection.method}, {"points", x.rows()}};
  Eigen::MatrixXd points;
  with_stage("project", [&] {
    if (cfg.projection.method == "pca") {
      points = pca_project(white);
    } else {
      TsneOptions opts;
      opts.perplexity = cfg.projection.perplexity;
      opts.iterations = cfg.projection.iterations;
      opts.seed = substream_seed(cfg.seed, kProjectionStream);
      const Projection p = tsne_project(white, opts);
      points = p.points;
      report["final_kl"] = p.kl_trace.empty() ? 0.0 : p.kl_trace.back();
    }
    std::vector<std::string> names;
    std::vector<int> ids;
    for (const auto& l : labels) {
      auto it = std::find(names.begin(), names.end(), l);
      if (it == names.end()) {
        names.push_back(l);
        it = names.end() - 1;
      }
      ids.push_back(static_cast<int>(it - names.begin()));
    }
    if (names.size() >= 2) report["silhouette"] = silhouette_score(points, ids);
  });
  write_text_file(root / "plots" / "projection.csv", projection_csv(points, labels, groups));
  write_text_file(root / "plots" / "projection_kde.json",
                  dump(density_json(density_grids(points, groups, cfg.projection.kde_resolution))));
  write_text_file(root / "reports" / "projection.json", dump(report));
  write_manifest(root, "project", cfg);
  return report;
}

}  // namespace hetdiar
