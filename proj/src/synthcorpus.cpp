#include "hetdiar/synthcorpus.hpp"

#include "hetdiar/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace hetdiar {

namespace {

constexpr std::uint64_t kUtteranceStream = 0x7574;
constexpr std::uint64_t kSessionStream = 0x7365;
constexpr std::uint64_t kContentStream = 0x636f;

Eigen::Index frames_for(double duration_s, double shift_s) {
  return static_cast<Eigen::Index>(std::llround(duration_s / shift_s));
}

double snap(Eigen::Index frames, double shift_s) { return std::round(double(frames) * shift_s * 1e6) / 1e6; }

}  // namespace

std::vector<SyntheticSpeaker> generate_speakers(int n, int dim, double margin, std::uint64_t seed,
                                                const SpeakerOptions& opts) {
  if (n < 2) throw UsageError("generate_speakers: need at least 2 speakers");
  if (dim < 1) throw UsageError("generate_speakers: dimension must be >= 1");
  if (opts.variability <= 0.0 || opts.profile_scale <= 0.0 || opts.profile_decay <= 0.0)
    throw UsageError("generate_speakers: scales must be positive");
  std::vector<SyntheticSpeaker> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(substream_seed(seed, static_cast<std::uint64_t>(i)));
    SyntheticSpeaker spk;
    spk.id = "spk" + std::to_string(i);
    spk.fundamental_seed = rng.next();
    spk.variability.resize(dim);
    for (int d = 0; d < dim; ++d)
      spk.variability(d) = opts.variability * std::exp(opts.variability_jitter * (rng.uniform() * 2.0 - 1.0));
    bool placed = false;
    spk.profile.resize(dim);
    for (int attempt = 0; attempt <= opts.max_retries && !placed; ++attempt) {
      for (int d = 0; d < dim; ++d) spk.profile(d) = opts.profile_scale * std::pow(opts.profile_decay, d) * rng.normal();
      placed = std::all_of(out.begin(), out.end(),
                           [&](const SyntheticSpeaker& o) { return (o.profile - spk.profile).norm() >= margin; });
    }
    if (!placed)
      throw DataError("generate_speakers: margin " + std::to_string(margin) + " infeasible for speaker " +
                      std::to_string(i));
    out.push_back(std::move(spk));
  }
  return out;
}

ContentModel make_content_model(int units, int dim, double scale, double mean_unit_frames, std::uint64_t seed) {
  if (units < 0 || dim < 1) throw UsageError("content model: invalid sizes");
  if (units > 0 && (!(scale > 0.0) || !(mean_unit_frames >= 1.0)))
    throw UsageError("content model: scale must be positive and units last at least one frame");
  ContentModel model;
  model.mean_unit_frames = mean_unit_frames;
  if (units == 0) return model;
  Rng rng(seed);
  model.codebook.resize(units, dim);
  for (int u = 0; u < units; ++u)
    for (int d = 0; d < dim; ++d) model.codebook(u, d) = scale * rng.normal();
  if (units > 1) model.codebook.rowwise() -= model.codebook.colwise().mean();
  return model;
}

FeatureMatrix synth_utterance(const SyntheticSpeaker& speaker, double duration_s, Rng& rng, double frame_shift_s,
                              const ContentModel& content) {
  if (!(duration_s > 0.0)) throw UsageError("synth_utterance: duration must be positive");
  const Eigen::Index t = frames_for(duration_s, frame_shift_s);
  if (t < 1) throw UsageError("synth_utterance: duration shorter than one frame");
  const Eigen::Index d = speaker.profile.size();
  constexpr int kSmooth = 5;
  Eigen::MatrixXd white(t + kSmooth - 1, d);
  for (Eigen::Index i = 0; i < white.rows(); ++i)
    for (Eigen::Index j = 0; j < d; ++j) white(i, j) = rng.normal();
  FeatureMatrix out;
  out.frame_shift_s = frame_shift_s;
  out.frames.resize(t, d);
  for (Eigen::Index i = 0; i < t; ++i) {
    const Eigen::RowVectorXd smooth = white.middleRows(i, kSmooth).colwise().mean();
    out.frames.row(i) = speaker.profile.transpose() + smooth.cwiseProduct(speaker.variability.transpose());
  }
  if (content.enabled()) {
    if (content.codebook.cols() != d) throw UsageError("synth_utterance: content dimension mismatch");
    for (Eigen::Index i = 0; i < t;) {
      const auto unit = rng.uniform_int(0, content.codebook.rows() - 1);
      const Eigen::Index len =
          std::max<Eigen::Index>(1, std::llround(rng.exponential(content.mean_unit_frames)));
      for (Eigen::Index j = i; j < std::min(t, i + len); ++j) out.frames.row(j) += content.codebook.row(unit);
      i += len;
    }
  }
  return out;
}

void TurnModel::validate() const {
  if (!(mean_turn_s > 0.0) || min_turn_s < 0.0 || min_turn_s > mean_turn_s)
    throw UsageError("turn model: degenerate turn durations");
  if (!(pause_prob >= 0.0 && pause_prob < 1.0)) throw UsageError("turn model: pause_prob must lie in [0,1)");
  if (pause_prob > 0.0 && !(mean_pause_s > 0.0)) throw UsageError("turn model: degenerate pause duration");
}

SynthSession synth_session(const std::vector<SyntheticSpeaker>& speakers, double total_s, const TurnModel& turns,
                           Rng& rng, const std::string& session_id, double frame_shift_s,
                           const ContentModel& content) {
  turns.validate();
  if (speakers.size() < 2 || speakers.size() > 7) throw UsageError("synth_session: need 2 to 7 speakers");
  if (!(total_s > turns.mean_turn_s)) throw UsageError("synth_session: total duration must exceed the mean turn");
  const Eigen::Index total = frames_for(total_s, frame_shift_s);
  const Eigen::Index min_turn = std::max<Eigen::Index>(1, frames_for(turns.min_turn_s, frame_shift_s));
  const Eigen::Index d = speakers.front().profile.size();

  std::vector<int> order(speakers.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

  SynthSession out;
  out.session_id = session_id;
  out.reference.session_id = session_id;
  out.features.frame_shift_s = frame_shift_s;
  out.features.frames.resize(total, d);

  Eigen::Index t = 0;
  std::size_t turn_index = 0;
  int previous = -1;
  while (t < total) {
    if (t > 0 && turns.pause_prob > 0.0 && rng.uniform() < turns.pause_prob) {
      const Eigen::Index len =
          std::min(total - t, std::max<Eigen::Index>(1, frames_for(rng.exponential(turns.mean_pause_s), frame_shift_s)));
      for (Eigen::Index i = 0; i < len; ++i)
        for (Eigen::Index j = 0; j < d; ++j) out.features.frames(t + i, j) = turns.silence_level * rng.normal();
      t += len;
      if (t >= total) break;
    }
    int spk;
    if (turn_index < order.size()) {
      spk = order[turn_index];
    } else {
      spk = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(speakers.size()) - 2));
      if (spk >= previous) ++spk;
    }
    ++turn_index;
    Eigen::Index len = std::max(min_turn, frames_for(rng.exponential(turns.mean_turn_s), frame_shift_s));
    len = std::min(len, total - t);
    const FeatureMatrix seg = synth_utterance(speakers[spk], double(len) * frame_shift_s, rng, frame_shift_s, content);
    out.features.frames.middleRows(t, len) = seg.frames.topRows(len);
    const double start = snap(t, frame_shift_s), end = snap(t + len, frame_shift_s);
    out.script.turns.push_back({speakers[spk].id, start, end});
    out.reference.intervals.push_back({start, end, speakers[spk].id});
    previous = spk;
    t += len;
  }
  std::vector<std::string> seen;
  for (const auto& turn : out.script.turns)
    if (std::find(seen.begin(), seen.end(), turn.speaker_id) == seen.end()) seen.push_back(turn.speaker_id);
  out.script.n_speakers = static_cast<int>(seen.size());
  return out;
}

AudioSignal synth_waveform(const SyntheticSpeaker& speaker, double duration_s, int sample_rate, Rng& rng) {
  if (!(duration_s > 0.0) || sample_rate <= 0) throw UsageError("synth_waveform: invalid duration or rate");
  Rng voice(speaker.fundamental_seed);
  const double f0 = voice.uniform(90.0, 320.0);
  std::vector<double> amps(6);
  for (auto& a : amps) a = voice.uniform(0.2, 1.0);
  AudioSignal sig;
  sig.sample_rate = sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  sig.samples.resize(n);
  const double phase0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  double norm = 0.0;
  for (std::size_t h = 0; h < amps.size(); ++h)
    if (f0 * double(h + 1) < 0.45 * sample_rate) norm += amps[h];
  for (std::size_t i = 0; i < n; ++i) {
    const double t = double(i) / sample_rate;
    double v = 0.0;
    for (std::size_t h = 0; h < amps.size(); ++h) {
      const double f = f0 * double(h + 1);
      if (f >= 0.45 * sample_rate) break;
      v += amps[h] * std::sin(2.0 * std::numbers::pi * f * t + phase0 * double(h + 1));
    }
    sig.samples[i] = 0.5 * v / norm + 0.01 * rng.normal();
  }
  return sig;
}

void CorpusConfig::validate() const {
  if (train_speakers < 2) throw UsageError("corpus: need at least 2 training speakers");
  if (eval_speakers < max_session_speakers) throw UsageError("corpus: eval speaker pool smaller than max_session_speakers");
  if (min_session_speakers < 2 || max_session_speakers > 7 || min_session_speakers > max_session_speakers)
    throw UsageError("corpus: session speaker counts must satisfy 2 <= min <= max <= 7");
  if (content_units < 0 || (content_units > 0 && (!(content_scale > 0.0) || !(content_unit_frames >= 1.0))))
    throw UsageError("corpus: invalid content model");
  if (utterances_per_speaker < 1 || !(utterance_s > 0.0)) throw UsageError("corpus: invalid utterance settings");
  if (sessions < 0 || dim < 1 || !(frame_shift_s > 0.0)) throw UsageError("corpus: invalid sizes");
  turns.validate();
}

SyntheticCorpus generate_corpus(const CorpusConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SyntheticCorpus corpus;
  auto all = generate_speakers(cfg.train_speakers + cfg.eval_speakers, cfg.dim, cfg.margin, seed, cfg.speaker);
  corpus.train_speakers.assign(all.begin(), all.begin() + cfg.train_speakers);
  corpus.eval_speakers.assign(all.begin() + cfg.train_speakers, all.end());
  corpus.content = make_content_model(cfg.content_units, cfg.dim, cfg.content_scale, cfg.content_unit_frames,
                                      substream_seed(seed, kContentStream));

  const std::uint64_t utt_seed = substream_seed(seed, kUtteranceStream);
  for (int s = 0; s < cfg.train_speakers; ++s) {
    corpus.train.speakers.push_back(corpus.train_speakers[s].id);
    auto& utts = corpus.train.utterances.emplace_back();
    for (int u = 0; u < cfg.utterances_per_speaker; ++u) {
      Rng rng(substream_seed(utt_seed, static_cast<std::uint64_t>(s) * 4096u + static_cast<std::uint64_t>(u)));
      utts.push_back(
          synth_utterance(corpus.train_speakers[s], cfg.utterance_s, rng, cfg.frame_shift_s, corpus.content));
    }
  }

  const std::uint64_t session_seed = substream_seed(seed, kSessionStream);
  for (int k = 0; k < cfg.sessions; ++k) {
    Rng rng(substream_seed(session_seed, static_cast<std::uint64_t>(k)));
    const auto n = static_cast<std::size_t>(rng.uniform_int(cfg.min_session_speakers, cfg.max_session_speakers));
    std::vector<std::size_t> pool(corpus.eval_speakers.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    std::vector<SyntheticSpeaker> chosen;
    for (std::size_t i = 0; i < n; ++i) {
      std::swap(pool[i], pool[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                                        static_cast<std::int64_t>(pool.size()) - 1))]);
      chosen.push_back(corpus.eval_speakers[pool[i]]);
    }
    char id[32];
    std::snprintf(id, sizeof id, "sess%03d", k);
    corpus.sessions.push_back(synth_session(chosen, cfg.session_s, cfg.turns, rng, id, cfg.frame_shift_s, corpus.content));
  }
  return corpus;
}

namespace {

nlohmann::json speaker_json(const SyntheticSpeaker& s) {
  return {{"id", s.id},
          {"profile", std::vector<double>(s.profile.data(), s.profile.data() + s.profile.size())},
          {"variability", std::vector<double>(s.variability.data(), s.variability.data() + s.variability.size())},
          {"fundamental_seed", s.fundamental_seed}};
}

SyntheticSpeaker speaker_from_json(const nlohmann::json& j) {
  SyntheticSpeaker s;
  s.id = j.at("id").get<std::string>();
  const auto p = j.at("profile").get<std::vector<double>>();
  const auto v = j.at("variability").get<std::vector<double>>();
  s.profile = Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
  s.variability = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  s.fundamental_seed = j.at("fundamental_seed").get<std::uint64_t>();
  return s;
}

}  // namespace

void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "sessions");
  nlohmann::json manifest;
  manifest["train_speakers"] = nlohmann::json::array();
  manifest["eval_speakers"] = nlohmann::json::array();
  for (const auto& s : corpus.train_speakers) manifest["train_speakers"].push_back(speaker_json(s));
  for (const auto& s : corpus.eval_speakers) manifest["eval_speakers"].push_back(speaker_json(s));
  nlohmann::json codebook = nlohmann::json::array();
  for (Eigen::Index u = 0; u < corpus.content.codebook.rows(); ++u) {
    std::vector<double> row(static_cast<std::size_t>(corpus.content.codebook.cols()));
    for (Eigen::Index d = 0; d < corpus.content.codebook.cols(); ++d) row[d] = corpus.content.codebook(u, d);
    codebook.push_back(row);
  }
  manifest["content"] = {{"mean_unit_frames", corpus.content.mean_unit_frames}, {"codebook", codebook}};
  manifest["utterances"] = nlohmann::json::array();
  for (std::size_t s = 0; s < corpus.train.utterances.size(); ++s)
    for (std::size_t u = 0; u < corpus.train.utterances[s].size(); ++u) {
      const std::string file = "train/" + corpus.train.speakers[s] + "_" + std::to_string(u) + ".hdfm";
      write_features(dir / file, corpus.train.utterances[s][u]);
      manifest["utterances"].push_back({{"speaker", corpus.train.speakers[s]}, {"file", file}});
    }
  manifest["sessions"] = nlohmann::json::array();
  for (const auto& sess : corpus.sessions) {
    const std::string feats = "sessions/" + sess.session_id + ".hdfm";
    const std::string rttm = "sessions/" + sess.session_id + ".rttm";
    write_features(dir / feats, sess.features);
    write_rttm_file((dir / rttm).string(), to_rttm(sess.reference));
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& t : sess.script.turns) turns.push_back({t.speaker_id, t.start_s, t.end_s});
    manifest["sessions"].push_back({{"id", sess.session_id},
                                    {"features", feats},
                                    {"rttm", rttm},
                                    {"n_speakers", sess.script.n_speakers},
                                    {"turns", turns}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write corpus manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

SyntheticCorpus read_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("missing corpus manifest: " + (dir / "manifest.json").string());
  SyntheticCorpus corpus;
  try {
    const auto manifest = nlohmann::json::parse(in);
    for (const auto& s : manifest.at("train_speakers")) corpus.train_speakers.push_back(speaker_from_json(s));
    for (const auto& s : manifest.at("eval_speakers")) corpus.eval_speakers.push_back(speaker_from_json(s));
    const auto& content = manifest.at("content");
    corpus.content.mean_unit_frames = content.at("mean_unit_frames").get<double>();
    const auto rows = content.at("codebook").get<std::vector<std::vector<double>>>();
    if (!rows.empty()) {
      corpus.content.codebook.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
      for (std::size_t u = 0; u < rows.size(); ++u)
        for (std::size_t d = 0; d < rows[u].size(); ++d)
          corpus.content.codebook(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(d)) = rows[u][d];
    }
    for (const auto& s : corpus.train_speakers) corpus.train.speakers.push_back(s.id);
    corpus.train.utterances.resize(corpus.train.speakers.size());
    for (const auto& u : manifest.at("utterances")) {
      const auto spk = u.at("speaker").get<std::string>();
      const auto it = std::find(corpus.train.speakers.begin(), corpus.train.speakers.end(), spk);
      if (it == corpus.train.speakers.end()) throw DataError("corpus manifest: unknown speaker " + spk);
      corpus.train.utterances[it - corpus.train.speakers.begin()].push_back(
          read_features(dir / u.at("file").get<std::string>()));
    }
    for (const auto& s : manifest.at("sessions")) {
      SynthSession sess;
      sess.session_id = s.at("id").get<std::string>();
      sess.features = read_features(dir / s.at("features").get<std::string>());
      const auto refs = from_rttm(read_rttm_file((dir / s.at("rttm").get<std::string>()).string()));
      sess.reference.session_id = sess.session_id;
      for (const auto& h : refs)
        if (h.session_id == sess.session_id) sess.reference = h;
      sess.script.n_speakers = s.at("n_speakers").get<int>();
      for (const auto& t : s.at("turns"))
        sess.script.turns.push_back({t.at(0).get<std::string>(), t.at(1).get<double>(), t.at(2).get<double>()});
      corpus.sessions.push_back(std::move(sess));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corpus manifest: ") + e.what());
  }
  return corpus;
}

void to_json(nlohmann::json& j, const SpeakerOptions& o) {
  j = {{"profile_scale", o.profile_scale},
       {"profile_decay", o.profile_decay},
       {"variability", o.variability},
       {"variability_jitter", o.variability_jitter},
       {"max_retries", o.max_retries}};
}

void from_json(const nlohmann::json& j, SpeakerOptions& o) {
  SpeakerOptions d;
  o.profile_scale = j.value("profile_scale", d.profile_scale);
  o.profile_decay = j.value("profile_decay", d.profile_decay);
  o.variability = j.value("variability", d.variability);
  o.variability_jitter = j.value("variability_jitter", d.variability_jitter);
  o.max_retries = j.value("max_retries", d.max_retries);
}

void to_json(nlohmann::json& j, const TurnModel& t) {
  j = {{"mean_turn_s", t.mean_turn_s},
       {"min_turn_s", t.min_turn_s},
       {"pause_prob", t.pause_prob},
       {"mean_pause_s", t.mean_pause_s},
       {"silence_level", t.silence_level}};
}

void from_json(const nlohmann::json& j, TurnModel& t) {
  TurnModel d;
  t.mean_turn_s = j.value("mean_turn_s", d.mean_turn_s);
  t.min_turn_s = j.value("min_turn_s", d.min_turn_s);
  t.pause_prob = j.value("pause_prob", d.pause_prob);
  t.mean_pause_s = j.value("mean_pause_s", d.mean_pause_s);
  t.silence_level = j.value("silence_level", d.silence_level);
}

void to_json(nlohmann::json& j, const CorpusConfig& c) {
  j = {{"train_speakers", c.train_speakers},
       {"eval_speakers", c.eval_speakers},
       {"dim", c.dim},
       {"margin", c.margin},
       {"speaker", c.speaker},
       {"content_units", c.content_units},
       {"content_scale", c.content_scale},
       {"content_unit_frames", c.content_unit_frames},
       {"utterances_per_speaker", c.utterances_per_speaker},
       {"utterance_s", c.utterance_s},
       {"sessions", c.sessions},
       {"session_s", c.session_s},
       {"min_session_speakers", c.min_session_speakers},
       {"max_session_speakers", c.max_session_speakers},
       {"turns", c.turns},
       {"frame_shift_s", c.frame_shift_s}};
}

void from_json(const nlohmann::json& j, CorpusConfig& c) {
  CorpusConfig d;
  c.train_speakers = j.value("train_speakers", d.train_speakers);
  c.eval_speakers = j.value("eval_speakers", d.eval_speakers);
  c.dim = j.value("dim", d.dim);
  c.margin = j.value("margin", d.margin);
  c.speaker = j.value("speaker", d.speaker);
  c.content_units = j.value("content_units", d.content_units);
  c.content_scale = j.value("content_scale", d.content_scale);
  c.content_unit_frames = j.value("content_unit_frames", d.content_unit_frames);
  c.utterances_per_speaker = j.value("utterances_per_speaker", d.utterances_per_speaker);
  c.utterance_s = j.value("utterance_s", d.utterance_s);
  c.sessions = j.value("sessions", d.sessions);
  c.session_s = j.value("session_s", d.session_s);
  c.min_session_speakers = j.value("min_session_speakers", d.min_session_speakers);
  c.max_session_speakers = j.value("max_session_speakers", d.max_session_speakers);
  c.turns = j.value("turns", d.turns);
  c.frame_shift_s = j.value("frame_shift_s", d.frame_shift_s);
}

}  // namespace hetdiar
