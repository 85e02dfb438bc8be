#include "hetdiar/embedder.hpp"

#include "hetdiar/error.hpp"
#include "hetdiar/rng.hpp"

#include <algorithm>
#include <cmath>

namespace hetdiar {

EmbedderConfig EmbedderConfig::resnet34(int input_dim, int n_classes) {
  EmbedderConfig c;
  c.stage_channels = {16, 16, 32, 64, 128, 256};
  c.stage_blocks = {0, 3, 4, 6, 3, 3};
  c.stage_downsample = {false, false, true, true, true, true};
  c.embed_dim = 256;
  c.input_dim = input_dim;
  c.n_classes = n_classes;
  return c;
}

void EmbedderConfig::validate() const {
  if (stage_channels.empty() || stage_channels.size() != stage_blocks.size() ||
      stage_channels.size() != stage_downsample.size())
    throw UsageError("embedder: stage lists must be non-empty and of equal length");
  for (int c : stage_channels)
    if (c < 1) throw UsageError("embedder: channel counts must be >= 1");
  for (std::size_t s = 1; s < stage_blocks.size(); ++s)
    if (stage_blocks[s] < 1) throw UsageError("embedder: residual stages need >= 1 block");
  if (stage_downsample[0]) throw UsageError("embedder: the stem convolution does not downsample");
  if (embed_dim < 1) throw UsageError("embedder: embed_dim must be >= 1");
  if (n_classes < 2) throw UsageError("embedder: n_classes must be >= 2");
  if (input_dim < min_frames()) throw UsageError("embedder: input_dim too small for the downsampling depth");
}

int EmbedderConfig::num_downsampling() const {
  return static_cast<int>(std::count(stage_downsample.begin(), stage_downsample.end(), true));
}

std::vector<std::pair<int, int>> EmbedderConfig::stage_shapes(int frames, int dim) const {
  std::vector<std::pair<int, int>> shapes;
  for (std::size_t s = 0; s < stage_channels.size(); ++s) {
    if (stage_downsample[s]) {
      frames /= 2;
      dim /= 2;
    }
    shapes.emplace_back(frames, dim);
  }
  return shapes;
}

void to_json(nlohmann::json& j, const EmbedderConfig& c) {
  j = nlohmann::json{{"stage_channels", c.stage_channels}, {"stage_blocks", c.stage_blocks},
                     {"stage_downsample", c.stage_downsample}, {"embed_dim", c.embed_dim},
                     {"n_classes", c.n_classes}, {"input_dim", c.input_dim}};
}

void from_json(const nlohmann::json& j, EmbedderConfig& c) {
  EmbedderConfig d;
  c.stage_channels = j.value("stage_channels", d.stage_channels);
  c.stage_blocks = j.value("stage_blocks", d.stage_blocks);
  c.stage_downsample = j.value("stage_downsample", d.stage_downsample);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.n_classes = j.value("n_classes", d.n_classes);
  c.input_dim = j.value("input_dim", d.input_dim);
}

// ---------------------------------------------------------------------------
// Model construction

template <typename Scalar>
int EmbedderModelT<Scalar>::add_param(const std::string& name, Eigen::Index rows, Eigen::Index cols, int rank) {
  params_.push_back({name, Matrix::Zero(rows, cols), rank});
  return static_cast<int>(params_.size()) - 1;
}

template <typename Scalar>
typename EmbedderModelT<Scalar>::Conv EmbedderModelT<Scalar>::add_conv(int in_ch, int out_ch, int kernel, int stride,
                                                                       const std::string& name) {
  Conv c;
  c.in_channels = in_ch;
  c.out_channels = out_ch;
  c.kernel = kernel;
  c.stride = stride;
  c.weight = add_param(name + ".weight", out_ch, Eigen::Index(in_ch) * kernel * kernel, 2);
  c.bias = add_param(name + ".bias", out_ch, 1, 1);
  return c;
}

template <typename Scalar>
EmbedderModelT<Scalar> EmbedderModelT<Scalar>::zeros(const EmbedderConfig& cfg) {
  cfg.validate();
  EmbedderModelT m;
  m.config_ = cfg;
  m.stem_ = m.add_conv(1, cfg.stage_channels[0], 3, 1, "conv");
  int channels = cfg.stage_channels[0];
  for (std::size_t s = 1; s < cfg.stage_channels.size(); ++s) {
    const int out = cfg.stage_channels[s];
    for (int b = 0; b < cfg.stage_blocks[s]; ++b) {
      const int stride = (b == 0 && cfg.stage_downsample[s]) ? 2 : 1;
      const std::string prefix = "res" + std::to_string(s) + "." + std::to_string(b);
      Block block;
      block.conv1 = m.add_conv(channels, out, 3, stride, prefix + ".conv1");
      block.conv2 = m.add_conv(out, out, 3, 1, prefix + ".conv2");
      if (stride != 1 || channels != out) {
        block.has_shortcut = true;
        block.shortcut = m.add_conv(channels, out, 1, stride, prefix + ".shortcut");
      }
      m.blocks_.push_back(block);
      channels = out;
    }
  }
  m.linear1_w_ = m.add_param("linear1.weight", cfg.embed_dim, channels, 2);
  m.linear1_b_ = m.add_param("linear1.bias", cfg.embed_dim, 1, 1);
  m.linear2_w_ = m.add_param("linear2.weight", cfg.n_classes, cfg.embed_dim, 2);
  m.linear2_b_ = m.add_param("linear2.bias", cfg.n_classes, 1, 1);
  return m;
}

template <typename Scalar>
EmbedderModelT<Scalar> EmbedderModelT<Scalar>::initialize(const EmbedderConfig& cfg, std::uint64_t seed) {
  EmbedderModelT m = zeros(cfg);
  Rng rng(seed);
  auto fill = [&](int index, double bound) {
    auto& w = m.params_[index].value;
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = Scalar(rng.uniform(-bound, bound));
  };
  auto fan_in = [&](int index) { return double(m.params_[index].value.cols()); };
  fill(m.stem_.weight, std::sqrt(6.0 / fan_in(m.stem_.weight)));
  for (const auto& b : m.blocks_) {
    fill(b.conv1.weight, std::sqrt(6.0 / fan_in(b.conv1.weight)));
    // The residual branch starts damped so activations do not double per block.
    fill(b.conv2.weight, 0.5 * std::sqrt(6.0 / fan_in(b.conv2.weight)));
    if (b.has_shortcut) fill(b.shortcut.weight, std::sqrt(3.0 / fan_in(b.shortcut.weight)));
  }
  fill(m.linear1_w_, std::sqrt(3.0 / fan_in(m.linear1_w_)));
  fill(m.linear2_w_, std::sqrt(3.0 / fan_in(m.linear2_w_)));
  return m;
}

template <typename Scalar>
std::size_t EmbedderModelT<Scalar>::num_parameters() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template <typename Scalar>
template <typename Other>
EmbedderModelT<Other> EmbedderModelT<Scalar>::cast() const {
  EmbedderModelT<Other> out = EmbedderModelT<Other>::zeros(config_);
  for (std::size_t i = 0; i < params_.size(); ++i) out.params_[i].value = params_[i].value.template cast<Other>();
  return out;
}

// ---------------------------------------------------------------------------
// Convolution via im2col

namespace {

inline int out_extent(int n, int stride) { return stride == 1 ? n : n / 2; }

}  // namespace

template <typename Scalar>
typename EmbedderModelT<Scalar>::Activation EmbedderModelT<Scalar>::conv_forward(const Conv& conv,
                                                                                 const Activation& in,
                                                                                 ConvCache* cache) const {
  const int k = conv.kernel, s = conv.stride, pad = k / 2;
  const int oh = out_extent(in.h, s), ow = out_extent(in.w, s);
  const Eigen::Index positions = Eigen::Index(oh) * ow;
  Matrix cols = Matrix::Zero(Eigen::Index(conv.in_channels) * k * k, positions);
  for (int c = 0; c < conv.in_channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (Eigen::Index(c) * k + ky) * k + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = s * oy + ky - pad;
          if (iy < 0 || iy >= in.h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = s * ox + kx - pad;
            if (ix < 0 || ix >= in.w) continue;
            cols(row, Eigen::Index(oy) * ow + ox) = in.data(c, Eigen::Index(iy) * in.w + ix);
          }
        }
      }
    }
  }
  Activation out;
  out.h = oh;
  out.w = ow;
  out.data.noalias() = params_[conv.weight].value * cols;
  out.data.colwise() += params_[conv.bias].value.col(0);
  if (cache) {
    cache->cols = std::move(cols);
    cache->in_h = in.h;
    cache->in_w = in.w;
  }
  return out;
}

template <typename Scalar>
typename EmbedderModelT<Scalar>::Activation EmbedderModelT<Scalar>::conv_backward(const Conv& conv,
                                                                                  const Matrix& grad_out,
                                                                                  const ConvCache& cache,
                                                                                  std::vector<Matrix>& grads,
                                                                                  bool need_input_grad) const {
  grads[conv.weight].noalias() += grad_out * cache.cols.transpose();
  grads[conv.bias].col(0) += grad_out.rowwise().sum();
  Activation din;
  din.h = cache.in_h;
  din.w = cache.in_w;
  if (!need_input_grad) return din;
  const Matrix dcols = params_[conv.weight].value.transpose() * grad_out;
  const int k = conv.kernel, s = conv.stride, pad = k / 2;
  const int oh = out_extent(din.h, s), ow = out_extent(din.w, s);
  din.data = Matrix::Zero(conv.in_channels, Eigen::Index(din.h) * din.w);
  for (int c = 0; c < conv.in_channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (Eigen::Index(c) * k + ky) * k + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = s * oy + ky - pad;
          if (iy < 0 || iy >= din.h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = s * ox + kx - pad;
            if (ix < 0 || ix >= din.w) continue;
            din.data(c, Eigen::Index(iy) * din.w + ix) += dcols(row, Eigen::Index(oy) * ow + ox);
          }
        }
      }
    }
  }
  return din;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename Scalar>
void EmbedderModelT<Scalar>::forward_sample(const Matrix& frames, SampleCache* cache, Vector& embedding,
                                            Vector& logits) const {
  Activation x;
  x.h = static_cast<int>(frames.rows());
  x.w = static_cast<int>(frames.cols());
  x.data.resize(1, frames.size());
  for (int t = 0; t < x.h; ++t)
    for (int d = 0; d < x.w; ++d) x.data(0, Eigen::Index(t) * x.w + d) = frames(t, d);

  Activation a = conv_forward(stem_, x, cache ? &cache->stem : nullptr);
  a.data = a.data.cwiseMax(Scalar(0));
  if (cache) {
    cache->stem_out = a;
    cache->blocks.resize(blocks_.size());
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    BlockCache* bc = cache ? &cache->blocks[i] : nullptr;
    Activation h = conv_forward(b.conv1, a, bc ? &bc->c1 : nullptr);
    h.data = h.data.cwiseMax(Scalar(0));
    Activation out = conv_forward(b.conv2, h, bc ? &bc->c2 : nullptr);
    if (b.has_shortcut)
      out.data += conv_forward(b.shortcut, a, bc ? &bc->sc : nullptr).data;
    else
      out.data += a.data;
    out.data = out.data.cwiseMax(Scalar(0));
    if (bc) {
      bc->input = std::move(a);
      bc->hidden = std::move(h);
      bc->output = out;
    }
    a = std::move(out);
  }
  Vector pooled = a.data.rowwise().mean();
  embedding = params_[linear1_w_].value * pooled + params_[linear1_b_].value.col(0);
  logits = params_[linear2_w_].value * embedding + params_[linear2_b_].value.col(0);
  if (cache) {
    cache->pooled = std::move(pooled);
    cache->embedding = embedding;
  }
}

template <typename Scalar>
typename EmbedderModelT<Scalar>::Output EmbedderModelT<Scalar>::forward(const Matrix& tensor, int frames) const {
  if (frames < 1 || tensor.rows() % frames != 0) throw DataError("forward: tensor rows not a multiple of T");
  if (tensor.cols() != config_.input_dim)
    throw DataError("forward: feature dimension " + std::to_string(tensor.cols()) + " does not match model input " +
                    std::to_string(config_.input_dim));
  if (frames < config_.min_frames()) throw DataError("forward: segment too short for the downsampling depth");
  const Eigen::Index batch = tensor.rows() / frames;
  Output out;
  out.embeddings.resize(batch, config_.embed_dim);
  out.logits.resize(batch, config_.n_classes);
  Vector emb, logits;
  for (Eigen::Index b = 0; b < batch; ++b) {
    forward_sample(tensor.middleRows(b * frames, frames), nullptr, emb, logits);
    out.embeddings.row(b) = emb.transpose();
    out.logits.row(b) = logits.transpose();
  }
  return out;
}

template <typename Scalar>
Scalar EmbedderModelT<Scalar>::loss_and_gradient(const Matrix& tensor, int frames, const Matrix& labels,
                                                 std::vector<Matrix>& grads) const {
  if (frames < 1 || tensor.rows() % frames != 0) throw DataError("loss: tensor rows not a multiple of T");
  if (tensor.cols() != config_.input_dim) throw DataError("loss: feature dimension does not match model input");
  const Eigen::Index batch = tensor.rows() / frames;
  if (labels.rows() != batch || labels.cols() != config_.n_classes) throw DataError("loss: label shape mismatch");

  grads.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i)
    grads[i] = Matrix::Zero(params_[i].value.rows(), params_[i].value.cols());

  Scalar total_loss = 0;
  const Scalar inv_batch = Scalar(1) / Scalar(batch);
  SampleCache cache;
  Vector emb, logits;
  for (Eigen::Index b = 0; b < batch; ++b) {
    forward_sample(tensor.middleRows(b * frames, frames), &cache, emb, logits);
    const Matrix logp = log_softmax_rows(logits.transpose());
    const Vector target = labels.row(b).transpose();
    total_loss -= (logp.row(0).transpose().array() * target.array()).sum();

    // dL/dlogits = (softmax - label) / B
    const Vector dlogits = (logp.row(0).transpose().array().exp() - target.array()).matrix() * inv_batch;
    grads[linear2_w_].noalias() += dlogits * cache.embedding.transpose();
    grads[linear2_b_].col(0) += dlogits;
    const Vector demb = params_[linear2_w_].value.transpose() * dlogits;
    grads[linear1_w_].noalias() += demb * cache.pooled.transpose();
    grads[linear1_b_].col(0) += demb;
    const Vector dpooled = params_[linear1_w_].value.transpose() * demb;

    const Activation& last = blocks_.empty() ? cache.stem_out : cache.blocks.back().output;
    const Eigen::Index positions = last.data.cols();
    Matrix dact = dpooled.replicate(1, positions) / Scalar(positions);

    for (std::size_t i = blocks_.size(); i-- > 0;) {
      const Block& blk = blocks_[i];
      const BlockCache& bc = cache.blocks[i];
      const Matrix dsum = (bc.output.data.array() > Scalar(0)).select(dact, Scalar(0));
      Activation dh = conv_backward(blk.conv2, dsum, bc.c2, grads, true);
      const Matrix dz1 = (bc.hidden.data.array() > Scalar(0)).select(dh.data, Scalar(0));
      Activation din = conv_backward(blk.conv1, dz1, bc.c1, grads, true);
      if (blk.has_shortcut)
        din.data += conv_backward(blk.shortcut, dsum, bc.sc, grads, true).data;
      else
        din.data += dsum;
      dact = std::move(din.data);
    }
    const Matrix dstem = (cache.stem_out.data.array() > Scalar(0)).select(dact, Scalar(0));
    conv_backward(stem_, dstem, cache.stem, grads, false);
  }
  return total_loss * inv_batch;
}

template class EmbedderModelT<double>;
template class EmbedderModelT<float>;
template EmbedderModelT<float> EmbedderModelT<double>::cast<float>() const;
template EmbedderModelT<double> EmbedderModelT<float>::cast<double>() const;

// ---------------------------------------------------------------------------
// Inference helpers

Eigen::VectorXd extract_embedding(const EmbedderModel& model, const FeatureMatrix& feats) {
  const int frames = static_cast<int>(feats.num_frames());
  if (frames < model.config().min_frames())
    throw DataError("segment of " + std::to_string(frames) + " frames is too short (need >= " +
                    std::to_string(model.config().min_frames()) + ")");
  return model.forward(feats.frames, frames).embeddings.row(0).transpose();
}

Eigen::MatrixXd extract_embeddings(const EmbedderModel& model, const std::vector<FeatureMatrix>& segments) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(segments.size()), model.config().embed_dim);
  for (std::size_t i = 0; i < segments.size(); ++i)
    out.row(Eigen::Index(i)) = extract_embedding(model, segments[i]).transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Training

TrainState::TrainState(EmbedderModel m, double lr, double mom)
    : model(std::move(m)), learning_rate(lr), momentum(mom) {
  for (const auto& p : model.params()) velocity.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
}

double train_step(TrainState& state, const AssembledBatch& batch) {
  std::vector<Eigen::MatrixXd> grads;
  const double loss = state.model.loss_and_gradient(batch.tensor, batch.frames, batch.labels, grads);
  if (!std::isfinite(loss)) throw NumericError("train_step: non-finite loss at step " + std::to_string(state.step));
  auto& params = state.model.params();
  double norm2 = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].allFinite()) throw NumericError("train_step: non-finite gradient in " + params[i].name);
    norm2 += grads[i].squaredNorm();
  }
  double scale = 1.0;
  if (state.max_grad_norm > 0.0 && std::sqrt(norm2) > state.max_grad_norm)
    scale = state.max_grad_norm / std::sqrt(norm2);
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const auto& p : params) state.velocity.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.velocity[i] = state.momentum * state.velocity[i] - (state.learning_rate * scale) * grads[i];
    params[i].value += state.velocity[i];
  }
  state.loss_history.push_back(loss);
  ++state.step;
  return loss;
}

void to_json(nlohmann::json& j, const TrainSchedule& s) {
  j = nlohmann::json{{"epochs", s.epochs},         {"batches_per_epoch", s.batches_per_epoch},
                     {"learning_rate", s.learning_rate}, {"momentum", s.momentum},
                     {"lr_decay", s.lr_decay},      {"max_grad_norm", s.max_grad_norm}};
}

void from_json(const nlohmann::json& j, TrainSchedule& s) {
  TrainSchedule d;
  s.epochs = j.value("epochs", d.epochs);
  s.batches_per_epoch = j.value("batches_per_epoch", d.batches_per_epoch);
  s.learning_rate = j.value("learning_rate", d.learning_rate);
  s.momentum = j.value("momentum", d.momentum);
  s.lr_decay = j.value("lr_decay", d.lr_decay);
  s.max_grad_norm = j.value("max_grad_norm", d.max_grad_norm);
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json j;
  j["loss_history"] = loss_history;
  j["epoch_mean_loss"] = epoch_mean_loss;
  j["rows_total"] = augmentation.rows_total;
  j["rows_multispeaker"] = augmentation.rows_multispeaker;
  j["augmentation_rate"] = augmentation.rows_total > 0 ? augmentation.rate() : 0.0;
  j["batch_augmentation_rate"] = augmentation.batches_total > 0 ? augmentation.batch_rate() : 0.0;
  return j;
}

TrainResult train_embedder(const CorpusIndex& index, const AssemblyConfig& assembly, const EmbedderConfig& embed_cfg,
                           const TrainSchedule& schedule, std::uint64_t seed) {
  EmbedderConfig cfg = embed_cfg;
  cfg.n_classes = index.num_classes();
  cfg.input_dim = assembly.dim;
  AssemblyConfig acfg = assembly;
  acfg.seed = substream_seed(seed, 1);
  BatchAssembler assembler(index, acfg);
  TrainState state(EmbedderModel::initialize(cfg, substream_seed(seed, 2)), schedule.learning_rate,
                   schedule.momentum);
  state.max_grad_norm = schedule.max_grad_norm;

  TrainResult result;
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    double sum = 0.0;
    for (int i = 0; i < schedule.batches_per_epoch; ++i) {
      const AssembledBatch batch = assembler.next();
      result.report.augmentation.observe(batch);
      sum += train_step(state, batch);
    }
    result.report.epoch_mean_loss.push_back(schedule.batches_per_epoch > 0 ? sum / schedule.batches_per_epoch : 0.0);
    state.learning_rate *= schedule.lr_decay;
  }
  result.report.loss_history = state.loss_history;
  result.model = std::move(state.model);
  return result;
}

}  // namespace hetdiar
