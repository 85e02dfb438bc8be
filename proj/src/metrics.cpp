#include "hetdiar/metrics.hpp"

#include "hetdiar/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hetdiar {

std::vector<int> solve_assignment(const Eigen::MatrixXd& cost) {
  const int rows = static_cast<int>(cost.rows()), cols = static_cast<int>(cost.cols());
  std::vector<int> result(rows, -1);
  if (rows == 0 || cols == 0) return result;
  // Square padding with zeros; Hungarian method with potentials (1-based).
  const int n = std::max(rows, cols);
  auto c = [&](int i, int j) { return (i < rows && j < cols) ? cost(i, j) : 0.0; };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  for (int j = 1; j <= n; ++j)
    if (p[j] >= 1 && p[j] <= rows && j <= cols) result[p[j] - 1] = j - 1;
  return result;
}

namespace {

using Ms = std::int64_t;

Ms to_ms(double s) { return static_cast<Ms>(std::llround(s * 1000.0)); }

struct MsInterval {
  Ms begin, end;
};

// Sorted, disjoint union of a speaker's intervals.
std::vector<MsInterval> union_of(std::vector<MsInterval> v) {
  std::sort(v.begin(), v.end(), [](auto& a, auto& b) { return a.begin < b.begin; });
  std::vector<MsInterval> out;
  for (const auto& iv : v) {
    if (iv.end <= iv.begin) continue;
    if (!out.empty() && iv.begin <= out.back().end)
      out.back().end = std::max(out.back().end, iv.end);
    else
      out.push_back(iv);
  }
  return out;
}

struct SpeakerTracks {
  std::vector<std::string> names;
  std::vector<std::vector<MsInterval>> tracks;
};

SpeakerTracks tracks_of(const DiarizationHypothesis& h) {
  SpeakerTracks t;
  t.names = h.speakers();
  t.tracks.resize(t.names.size());
  for (const auto& iv : h.intervals) {
    const auto idx = std::find(t.names.begin(), t.names.end(), iv.speaker) - t.names.begin();
    t.tracks[idx].push_back({to_ms(iv.start_s), to_ms(iv.end_s)});
  }
  for (auto& tr : t.tracks) tr = union_of(std::move(tr));
  return t;
}

// Activity of every track on each elementary segment [cuts[k], cuts[k+1]).
std::vector<std::vector<char>> activity(const SpeakerTracks& t, const std::vector<Ms>& cuts) {
  std::vector<std::vector<char>> act(t.tracks.size(), std::vector<char>(cuts.size() > 0 ? cuts.size() - 1 : 0, 0));
  for (std::size_t s = 0; s < t.tracks.size(); ++s) {
    std::size_t p = 0;
    const auto& tr = t.tracks[s];
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
      const Ms mid_lo = cuts[k];
      while (p < tr.size() && tr[p].end <= mid_lo) ++p;
      act[s][k] = (p < tr.size() && tr[p].begin <= mid_lo && mid_lo < tr[p].end) ? 1 : 0;
    }
  }
  return act;
}

}  // namespace

OverlapTable overlap_table(const DiarizationHypothesis& reference, const DiarizationHypothesis& hypothesis,
                           const ScoringOptions& opts) {
  reference.validate();
  hypothesis.validate();
  if (opts.collar_s < 0.0) throw UsageError("collar must be >= 0");
  const SpeakerTracks ref = tracks_of(reference), hyp = tracks_of(hypothesis);

  std::vector<MsInterval> no_score;
  const Ms collar = to_ms(opts.collar_s);
  if (collar > 0)
    for (const auto& iv : reference.intervals) {
      no_score.push_back({to_ms(iv.start_s) - collar, to_ms(iv.start_s) + collar});
      no_score.push_back({to_ms(iv.end_s) - collar, to_ms(iv.end_s) + collar});
    }
  no_score = union_of(std::move(no_score));

  std::vector<Ms> cuts;
  for (const auto* tr : {&ref.tracks, &hyp.tracks})
    for (const auto& track : *tr)
      for (const auto& iv : track) {
        cuts.push_back(iv.begin);
        cuts.push_back(iv.end);
      }
  for (const auto& iv : no_score) {
    cuts.push_back(iv.begin);
    cuts.push_back(iv.end);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  const auto ref_act = activity(ref, cuts), hyp_act = activity(hyp, cuts);
  const auto masked = activity(SpeakerTracks{{"x"}, {no_score}}, cuts);

  OverlapTable table;
  table.ref_speakers = ref.names;
  table.hyp_speakers = hyp.names;
  table.overlap = decltype(table.overlap)::Zero(static_cast<Eigen::Index>(ref.names.size()),
                                                static_cast<Eigen::Index>(hyp.names.size()));
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    if (masked[0][k]) continue;
    const Ms dur = cuts[k + 1] - cuts[k];
    Ms n_ref = 0, n_hyp = 0;
    for (const auto& a : ref_act) n_ref += a[k];
    for (const auto& a : hyp_act) n_hyp += a[k];
    if (opts.skip_overlap && n_ref >= 2) continue;
    table.ref_speech_ms += dur * n_ref;
    table.max_count_ms += dur * std::max(n_ref, n_hyp);
    table.missed_ms += dur * std::max<Ms>(0, n_ref - n_hyp);
    table.false_alarm_ms += dur * std::max<Ms>(0, n_hyp - n_ref);
    for (std::size_t r = 0; r < ref_act.size(); ++r) {
      if (!ref_act[r][k]) continue;
      for (std::size_t h = 0; h < hyp_act.size(); ++h)
        if (hyp_act[h][k]) table.overlap(Eigen::Index(r), Eigen::Index(h)) += dur;
    }
  }
  return table;
}

DerReport score_der(const DiarizationHypothesis& reference, const DiarizationHypothesis& hypothesis,
                    const ScoringOptions& opts) {
  const OverlapTable t = overlap_table(reference, hypothesis, opts);
  if (t.ref_speech_ms <= 0) throw DataError("DER undefined: no scored reference speech in " + reference.session_id);
  const std::vector<int> assign = solve_assignment(-t.overlap.cast<double>());
  DerReport rep;
  for (std::size_t r = 0; r < assign.size(); ++r) {
    if (assign[r] < 0) continue;
    const Ms ov = t.overlap(Eigen::Index(r), assign[r]);
    rep.mapped_overlap_ms += ov;
    rep.mapping[t.ref_speakers[r]] = t.hyp_speakers[static_cast<std::size_t>(assign[r])];
  }
  rep.error_ms = t.max_count_ms - rep.mapped_overlap_ms;
  const double total = double(t.ref_speech_ms);
  rep.der = double(rep.error_ms) / total;
  rep.missed = double(t.missed_ms) / total;
  rep.false_alarm = double(t.false_alarm_ms) / total;
  rep.confusion = double(rep.error_ms - t.missed_ms - t.false_alarm_ms) / total;
  rep.scored_speech_s = total / 1000.0;
  return rep;
}

double der(const DiarizationHypothesis& reference, const DiarizationHypothesis& hypothesis, double collar_s) {
  return score_der(reference, hypothesis, {collar_s, false}).der;
}

double jer(const DiarizationHypothesis& reference, const DiarizationHypothesis& hypothesis) {
  const OverlapTable t = overlap_table(reference, hypothesis, {0.0, false});
  const auto nr = t.overlap.rows(), nh = t.overlap.cols();
  if (nr == 0) throw DataError("JER undefined: reference has no speakers");
  Eigen::VectorXd ref_total(nr), hyp_total(nh);
  {
    const SpeakerTracks ref = tracks_of(reference), hyp = tracks_of(hypothesis);
    for (Eigen::Index r = 0; r < nr; ++r) {
      Ms sum = 0;
      for (const auto& iv : ref.tracks[r]) sum += iv.end - iv.begin;
      ref_total(r) = double(sum);
    }
    for (Eigen::Index h = 0; h < nh; ++h) {
      Ms sum = 0;
      for (const auto& iv : hyp.tracks[h]) sum += iv.end - iv.begin;
      hyp_total(h) = double(sum);
    }
  }
  // Columns nh.. are "unmapped" slots with cost 1.
  Eigen::MatrixXd cost = Eigen::MatrixXd::Ones(nr, nh + nr);
  for (Eigen::Index r = 0; r < nr; ++r)
    for (Eigen::Index h = 0; h < nh; ++h) {
      const double inter = double(t.overlap(r, h));
      const double uni = ref_total(r) + hyp_total(h) - inter;
      cost(r, h) = uni > 0.0 ? 1.0 - inter / uni : 1.0;
    }
  const std::vector<int> assign = solve_assignment(cost);
  double sum = 0.0;
  for (Eigen::Index r = 0; r < nr; ++r) sum += cost(r, assign[r]);
  return sum / double(nr);
}

nlohmann::json score_report_json(const DerReport& d, double jer_value) {
  nlohmann::json j;
  j["der"] = d.der;
  j["jer"] = jer_value;
  j["missed"] = d.missed;
  j["false_alarm"] = d.false_alarm;
  j["confusion"] = d.confusion;
  j["scored_speech_s"] = d.scored_speech_s;
  j["mapping"] = d.mapping;
  return j;
}

}  // namespace hetdiar
