#include "hetdiar/vb_reseg.hpp"

#include "hetdiar/binary_io.hpp"
#include "hetdiar/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace hetdiar {

void VbParams::validate() const {
  if (min_duration < 1) throw UsageError("vb: min_duration must be >= 1");
  if (!(loop_probability > 0.0 && loop_probability < 1.0)) throw UsageError("vb: loop_probability must lie in (0,1)");
  if (downsampling_factor < 1) throw UsageError("vb: downsampling_factor must be >= 1");
  if (max_iterations < 0) throw UsageError("vb: max_iterations must be >= 0");
}

namespace {

struct Region {
  double start_s, end_s;
};

std::vector<Region> speech_regions(const DiarizationHypothesis& hyp) {
  std::vector<Region> all;
  for (const auto& iv : hyp.intervals) all.push_back({iv.start_s, iv.end_s});
  std::sort(all.begin(), all.end(), [](const Region& a, const Region& b) { return a.start_s < b.start_s; });
  std::vector<Region> out;
  for (const auto& r : all) {
    if (!out.empty() && r.start_s <= out.back().end_s)
      out.back().end_s = std::max(out.back().end_s, r.end_s);
    else
      out.push_back(r);
  }
  return out;
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double peak = v.maxCoeff();
  if (!std::isfinite(peak)) return peak;
  return peak + std::log((v.array() - peak).exp().sum());
}

// Forward-backward over the replicated-state chain. Returns the total log
// likelihood; `post` receives per-block speaker posteriors.
double forward_backward(const Eigen::MatrixXd& lls, int min_duration, double loop, Eigen::MatrixXd& post) {
  const Eigen::Index n = lls.rows(), s_count = lls.cols();
  const Eigen::Index states = s_count * min_duration;
  const double neg_inf = -std::numeric_limits<double>::infinity();
  const double log_prior = -std::log(double(s_count));

  Eigen::MatrixXd log_tr = Eigen::MatrixXd::Constant(states, states, neg_inf);
  for (Eigen::Index s = 0; s < s_count; ++s) {
    for (int i = 0; i + 1 < min_duration; ++i) log_tr(s * min_duration + i, s * min_duration + i + 1) = 0.0;
    const Eigen::Index last = (s + 1) * min_duration - 1;
    for (Eigen::Index j = 0; j < s_count; ++j) {
      double p = (1.0 - loop) / double(s_count);
      if (j * min_duration == last) p += loop;
      log_tr(last, j * min_duration) = std::log(p);
    }
    if (min_duration > 1) log_tr(last, last) = std::log(loop);
  }

  auto emission = [&](Eigen::Index t, Eigen::Index state) { return lls(t, state / min_duration); };
  Eigen::MatrixXd fw(n, states), bw(n, states);
  for (Eigen::Index q = 0; q < states; ++q) fw(0, q) = (q % min_duration == 0) ? log_prior + emission(0, q) : neg_inf;
  Eigen::VectorXd tmp(states);
  for (Eigen::Index t = 1; t < n; ++t)
    for (Eigen::Index q = 0; q < states; ++q) {
      tmp = fw.row(t - 1).transpose() + log_tr.col(q);
      fw(t, q) = log_sum_exp(tmp) + emission(t, q);
    }
  bw.row(n - 1).setZero();
  for (Eigen::Index t = n - 1; t > 0; --t)
    for (Eigen::Index q = 0; q < states; ++q) {
      for (Eigen::Index r = 0; r < states; ++r) tmp(r) = log_tr(q, r) + emission(t, r) + bw(t, r);
      bw(t - 1, q) = log_sum_exp(tmp);
    }
  const double total = log_sum_exp(fw.row(n - 1).transpose());
  if (!std::isfinite(total)) throw NumericError("vb: non-finite responsibilities");
  post.setZero(n, s_count);
  for (Eigen::Index t = 0; t < n; ++t) {
    tmp = fw.row(t).transpose() + bw.row(t).transpose();
    const double norm = log_sum_exp(tmp);
    for (Eigen::Index q = 0; q < states; ++q) post(t, q / min_duration) += std::exp(tmp(q) - norm);
  }
  return total;
}

}  // namespace

DiarizationHypothesis vb_resegment(const FeatureMatrix& features, const DiarizationHypothesis& init,
                                   const EigenvoiceModel& model, const VbParams& params, VbTrace* trace) {
  params.validate();
  if (init.intervals.empty()) throw DataError("vb: empty initialization");
  init.validate();
  if (params.max_iterations == 0) return init;
  if (features.frames.cols() != model.ubm.dim()) throw DataError("vb: feature dimension does not match the model");

  const std::vector<std::string> speakers = init.speakers();
  const auto s_count = static_cast<Eigen::Index>(speakers.size());
  const std::vector<Region> regions = speech_regions(init);
  const double shift = features.frame_shift_s;

  // Speech frames: those whose midpoint lies inside a speech region.
  std::vector<Eigen::Index> frame_index;
  std::vector<std::size_t> frame_region;
  {
    std::size_t r = 0;
    for (Eigen::Index t = 0; t < features.frames.rows(); ++t) {
      const double mid = (double(t) + 0.5) * shift;
      while (r < regions.size() && regions[r].end_s <= mid) ++r;
      if (r == regions.size()) break;
      if (regions[r].start_s <= mid) {
        frame_index.push_back(t);
        frame_region.push_back(r);
      }
    }
  }
  const auto n = static_cast<Eigen::Index>(frame_index.size());
  if (n == 0) throw DataError("vb: no feature frames inside the initial speech regions");

  Eigen::MatrixXd x(n, features.frames.cols());
  Eigen::MatrixXd q0 = Eigen::MatrixXd::Zero(n, s_count);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) = features.frames.row(frame_index[i]);
    const double mid = (double(frame_index[i]) + 0.5) * shift;
    for (const auto& iv : init.intervals)
      if (iv.start_s <= mid && mid < iv.end_s) {
        const auto s = std::find(speakers.begin(), speakers.end(), iv.speaker) - speakers.begin();
        q0(i, s) = 1.0;
      }
    const double sum = q0.row(i).sum();
    if (sum > 0) q0.row(i) /= sum;
    else q0.row(i).setConstant(1.0 / double(s_count));
  }

  // Per-frame UBM statistics.
  const Ubm& ubm = model.ubm;
  const Eigen::Index k_count = ubm.num_components(), d = ubm.dim(), rank = model.rank();
  Eigen::MatrixXd gamma;
  const Eigen::VectorXd log_px = ubm.posteriors(x, gamma);
  const Eigen::MatrixXd inv_var = ubm.variances.cwiseInverse();
  Eigen::MatrixXd rho = Eigen::MatrixXd::Zero(n, rank);
  Eigen::MatrixXd vtiev(k_count, rank * rank);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const auto v = model.bases.middleRows(k * d, d);
    const Eigen::MatrixXd iev = inv_var.row(k).transpose().asDiagonal() * v;
    const Eigen::MatrixXd m = v.transpose() * iev;
    vtiev.row(k) = Eigen::Map<const Eigen::RowVectorXd>(m.data(), rank * rank);
    rho.noalias() += gamma.col(k).asDiagonal() * ((x.rowwise() - ubm.means.row(k)) * iev);
  }

  // Block aggregation of the statistics.
  const int f = params.downsampling_factor;
  const Eigen::Index blocks = (n + f - 1) / f;
  Eigen::VectorXd g_b = Eigen::VectorXd::Zero(blocks);
  Eigen::MatrixXd gamma_b = Eigen::MatrixXd::Zero(blocks, k_count);
  Eigen::MatrixXd rho_b = Eigen::MatrixXd::Zero(blocks, rank);
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(blocks, s_count);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index b = i / f;
    g_b(b) += log_px(i);
    gamma_b.row(b) += gamma.row(i);
    rho_b.row(b) += rho.row(i);
    q.row(b) += q0.row(i);
  }
  for (Eigen::Index b = 0; b < blocks; ++b) q.row(b) /= q.row(b).sum();

  const Eigen::MatrixXd ident = Eigen::MatrixXd::Identity(rank, rank);
  Eigen::MatrixXd lls(blocks, s_count);
  if (trace) {
    trace->elbo.clear();
    trace->min_simplex_sum.clear();
    trace->max_simplex_sum.clear();
  }
  double previous = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < params.max_iterations; ++it) {
    double kl_total = 0.0;
    for (Eigen::Index s = 0; s < s_count; ++s) {
      const Eigen::VectorXd occ = gamma_b.transpose() * q.col(s);
      const Eigen::VectorXd prec_flat = vtiev.transpose() * occ;
      const Eigen::MatrixXd precision = ident + Eigen::Map<const Eigen::MatrixXd>(prec_flat.data(), rank, rank);
      Eigen::LLT<Eigen::MatrixXd> llt(precision);
      if (llt.info() != Eigen::Success) throw NumericError("vb: singular speaker precision");
      const Eigen::MatrixXd inv_l = llt.solve(ident);
      const Eigen::VectorXd a = inv_l * (rho_b.transpose() * q.col(s));
      const Eigen::MatrixXd second = inv_l + a * a.transpose();
      const Eigen::VectorXd e = vtiev * Eigen::Map<const Eigen::VectorXd>(second.data(), rank * rank);
      lls.col(s) = g_b + rho_b * a - 0.5 * gamma_b * e;
      const double logdet_inv_l = -2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
      kl_total += 0.5 * (logdet_inv_l - inv_l.trace() - a.squaredNorm() + double(rank));
    }
    const double log_like = forward_backward(lls, params.min_duration, params.loop_probability, q);
    if (!q.allFinite()) throw NumericError("vb: non-finite responsibilities");
    const double elbo = log_like + kl_total;
    if (trace) {
      const Eigen::VectorXd sums = q.rowwise().sum();
      trace->elbo.push_back(elbo);
      trace->min_simplex_sum.push_back(sums.minCoeff());
      trace->max_simplex_sum.push_back(sums.maxCoeff());
    }
    if (elbo - previous < 1e-8 * std::abs(elbo)) break;
    previous = elbo;
  }

  Eigen::MatrixXd q_frames(n, s_count);
  for (Eigen::Index i = 0; i < n; ++i) q_frames.row(i) = q.row(i / f);
  if (trace) trace->responsibilities = q_frames;

  // Rebuild intervals that tile each speech region.
  DiarizationHypothesis out;
  out.session_id = init.session_id;
  std::size_t i = 0;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    if (i >= frame_region.size() || frame_region[i] != r) {
      // Region shorter than a frame: keep the label active at its midpoint.
      const double mid = 0.5 * (regions[r].start_s + regions[r].end_s);
      std::string label = speakers.front();
      for (const auto& iv : init.intervals)
        if (iv.start_s <= mid && mid < iv.end_s) {
          label = iv.speaker;
          break;
        }
      out.intervals.push_back({regions[r].start_s, regions[r].end_s, label});
      continue;
    }
    double start = regions[r].start_s;
    Eigen::Index current = -1;
    for (; i < frame_region.size() && frame_region[i] == r; ++i) {
      Eigen::Index best = 0;
      q_frames.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
      if (current >= 0 && best != current) {
        const double cut = double(frame_index[i]) * shift;
        out.intervals.push_back({start, cut, speakers[current]});
        start = cut;
      }
      current = best;
    }
    out.intervals.push_back({start, regions[r].end_s, speakers[current]});
  }
  return out;
}

void save_vb_model(const std::filesystem::path& path, const EigenvoiceModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  io::write_magic(out, "HDVB");
  io::write_string_block(
      out, nlohmann::json{{"K", model.ubm.num_components()}, {"D", model.ubm.dim()}, {"R", model.rank()}}.dump());
  io::write_f64_block(out, model.ubm.weights.transpose());
  io::write_f64_block(out, model.ubm.means);
  io::write_f64_block(out, model.ubm.variances);
  io::write_f64_block(out, model.bases);
}

EigenvoiceModel load_vb_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing VB model: " + path.string());
  io::expect_magic(in, "HDVB", path.string());
  Eigen::Index k = 0, d = 0, r = 0;
  try {
    const auto header = nlohmann::json::parse(io::read_string_block(in));
    k = header.at("K").get<Eigen::Index>();
    d = header.at("D").get<Eigen::Index>();
    r = header.at("R").get<Eigen::Index>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("VB model header: ") + e.what());
  }
  if (k < 1 || d < 1 || r < 1) throw DataError("VB model header: invalid dimensions");
  EigenvoiceModel model;
  model.ubm.weights = io::read_f64_block(in, 1, k).transpose();
  model.ubm.means = io::read_f64_block(in, k, d);
  model.ubm.variances = io::read_f64_block(in, k, d);
  model.bases = io::read_f64_block(in, k * d, r);
  return model;
}

}  // namespace hetdiar
