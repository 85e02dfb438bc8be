#include "hetdiar/error.hpp"
#include "hetdiar/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace hetdiar {

void DiarizationHypothesis::validate() const {
  for (const auto& iv : intervals) {
    if (!(iv.start_s < iv.end_s)) throw DataError("interval with start >= end in session " + session_id);
    if (iv.speaker.empty()) throw DataError("interval with empty speaker label in session " + session_id);
  }
}

std::vector<std::string> DiarizationHypothesis::speakers() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& iv : intervals)
    if (seen.insert(iv.speaker).second) out.push_back(iv.speaker);
  return out;
}

DiarizationHypothesis DiarizationHypothesis::merged() const {
  std::vector<Interval> sorted = intervals;
  std::stable_sort(sorted.begin(), sorted.end(), [](const Interval& a, const Interval& b) {
    return a.start_s < b.start_s;
  });
  DiarizationHypothesis out{session_id, {}};
  for (const auto& iv : sorted) {
    bool fused = false;
    for (auto it = out.intervals.rbegin(); it != out.intervals.rend(); ++it) {
      if (it->speaker == iv.speaker && iv.start_s <= it->end_s + 1e-9) {
        it->end_s = std::max(it->end_s, iv.end_s);
        fused = true;
        break;
      }
      if (it->end_s < iv.start_s - 1e-9) break;
    }
    if (!fused) out.intervals.push_back(iv);
  }
  return out;
}

namespace {

double parse_number(const std::string& field, std::size_t line, const char* what) {
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size() || !std::isfinite(v))
    throw DataError("line " + std::to_string(line) + ": invalid " + what + " '" + field + "'");
  return v;
}

}  // namespace

std::vector<RttmRecord> parse_rttm(std::string_view text) {
  std::vector<RttmRecord> records;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(line);
    std::vector<std::string> f;
    for (std::string tok; fields >> tok;) f.push_back(tok);
    if (f.empty() || f[0][0] == ';' || f[0][0] == '#') continue;
    if (f.size() < 9)
      throw DataError("line " + std::to_string(lineno) + ": expected at least 9 fields, got " +
                      std::to_string(f.size()));
    if (f[0] != "SPEAKER") throw DataError("line " + std::to_string(lineno) + ": unsupported record type " + f[0]);
    RttmRecord r;
    r.type = f[0];
    r.session_id = f[1];
    r.channel = static_cast<int>(parse_number(f[2], lineno, "channel"));
    r.onset_s = parse_number(f[3], lineno, "onset");
    r.duration_s = parse_number(f[4], lineno, "duration");
    r.speaker = f[7];
    if (r.onset_s < 0.0) throw DataError("line " + std::to_string(lineno) + ": negative onset");
    if (!(r.duration_s > 0.0)) throw DataError("line " + std::to_string(lineno) + ": non-positive duration");
    records.push_back(std::move(r));
  }
  return records;
}

std::string write_rttm(const std::vector<RttmRecord>& records) {
  std::string out;
  char buf[64];
  for (const auto& r : records) {
    out += r.type + ' ' + r.session_id + ' ' + std::to_string(r.channel);
    std::snprintf(buf, sizeof(buf), " %.3f %.3f", r.onset_s, r.duration_s);
    out += buf;
    out += " <NA> <NA> " + r.speaker + " <NA> <NA>\n";
  }
  return out;
}

std::vector<RttmRecord> to_rttm(const DiarizationHypothesis& hyp) {
  std::vector<RttmRecord> out;
  for (const auto& iv : hyp.intervals) {
    RttmRecord r;
    r.session_id = hyp.session_id;
    r.onset_s = std::round(iv.start_s * 1000.0) / 1000.0;
    r.duration_s = std::round(iv.end_s * 1000.0) / 1000.0 - r.onset_s;
    r.speaker = iv.speaker;
    if (r.duration_s > 0.0) out.push_back(r);
  }
  return out;
}

std::vector<DiarizationHypothesis> from_rttm(const std::vector<RttmRecord>& records) {
  std::vector<DiarizationHypothesis> out;
  for (const auto& r : records) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& h) { return h.session_id == r.session_id; });
    if (it == out.end()) {
      out.push_back({r.session_id, {}});
      it = std::prev(out.end());
    }
    it->intervals.push_back({r.onset_s, r.onset_s + r.duration_s, r.speaker});
  }
  return out;
}

std::vector<RttmRecord> read_rttm_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing RTTM file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_rttm(ss.str());
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_rttm_file(const std::string& path, const std::vector<RttmRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << write_rttm(records);
}

}  // namespace hetdiar
