#ifndef HETDIAR_METRICS_HPP
#define HETDIAR_METRICS_HPP

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace hetdiar {

struct Interval {
  double start_s = 0.0;
  double end_s = 0.0;
  std::string speaker;

  double duration_s() const { return end_s - start_s; }
  bool operator==(const Interval&) const = default;
};

/// Who spoke when, for one session.
struct DiarizationHypothesis {
  std::string session_id;
  std::vector<Interval> intervals;

  /// Throws DataError unless start < end and labels are non-empty.
  void validate() const;
  std::vector<std::string> speakers() const;
  /// Sorted by start time, adjacent/overlapping same-label intervals fused.
  DiarizationHypothesis merged() const;
};

struct RttmRecord {
  std::string type = "SPEAKER";
  std::string session_id;
  int channel = 1;
  double onset_s = 0.0;
  double duration_s = 0.0;
  std::string speaker;

  bool operator==(const RttmRecord&) const = default;
};

/// Throws DataError("line N: ...") on malformed lines. Blank lines and
/// lines starting with ';' or '#' are skipped.
std::vector<RttmRecord> parse_rttm(std::string_view text);
/// One line per record, onset/duration with 3 decimals.
std::string write_rttm(const std::vector<RttmRecord>& records);

std::vector<RttmRecord> to_rttm(const DiarizationHypothesis& hyp);
/// Groups records by session id, preserving first-seen session order.
std::vector<DiarizationHypothesis> from_rttm(const std::vector<RttmRecord>& records);

std::vector<RttmRecord> read_rttm_file(const std::string& path);
void write_rttm_file(const std::string& path, const std::vector<RttmRecord>& records);

/// Minimum-cost assignment for a rectangular cost matrix. Returns, for
/// every row, the assigned column or -1 when there are more rows than columns.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

struct ScoringOptions {
  double collar_s = 0.25;
  bool skip_overlap = false;
};

/// Overlap statistics in integer milliseconds over the scored region.
struct OverlapTable {
  std::vector<std::string> ref_speakers;
  std::vector<std::string> hyp_speakers;
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> overlap;  // ref x hyp
  std::int64_t ref_speech_ms = 0;     // sum over segments of dur * N_ref
  std::int64_t max_count_ms = 0;      // sum of dur * max(N_ref, N_hyp)
  std::int64_t missed_ms = 0;         // sum of dur * max(0, N_ref - N_hyp)
  std::int64_t false_alarm_ms = 0;    // sum of dur * max(0, N_hyp - N_ref)
};

OverlapTable overlap_table(const DiarizationHypothesis& reference, const DiarizationHypothesis& hypothesis,
                           const ScoringOptions& opts);

struct DerReport {
  double der = 0.0;
  double missed = 0.0;       // fractions of scored reference speech
  double false_alarm = 0.0;
  double confusion = 0.0;
  double scored_speech_s = 0.0;
  std::int64_t error_ms = 0;
  std::int64_t mapped_overlap_ms = 0;
  std::map<std::string, std::string> mapping;  // reference -> hypothesis
};

DerReport score_der(const DiarizationHypothesis& reference, const DiarizationHypothesis& hypothesis,
                    const ScoringOptions& opts = {});
double der(const DiarizationHypothesis& reference, const DiarizationHypothesis& hypothesis, double collar_s);
double jer(const DiarizationHypothesis& reference, const DiarizationHypothesis& hypothesis);

nlohmann::json score_report_json(const DerReport& der_report, double jer_value);

}  // namespace hetdiar

#endif  // HETDIAR_METRICS_HPP
