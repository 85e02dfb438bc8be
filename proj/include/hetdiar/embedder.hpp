#ifndef HETDIAR_EMBEDDER_HPP
#define HETDIAR_EMBEDDER_HPP

#include "hetdiar/batch_assembly.hpp"
#include "hetdiar/features.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace hetdiar {

/// Residual CNN layout. Entry 0 of each list describes the stem
/// convolution (its block count is ignored); entries 1.. are residual
/// stages. Downsampling stages floor-halve both the time and frequency axes.
struct EmbedderConfig {
  std::vector<int> stage_channels{8, 8, 16, 32};
  std::vector<int> stage_blocks{0, 2, 2, 2};
  std::vector<bool> stage_downsample{false, false, true, true};
  int embed_dim = 64;
  int n_classes = 2;
  int input_dim = 16;

  /// Full-size layout: channels 16,16,32,64,128,256 with 3,4,6,3,3 blocks.
  static EmbedderConfig resnet34(int input_dim, int n_classes);
  void validate() const;
  int num_downsampling() const;
  /// Smallest T (and D) that survives every downsampling stage.
  int min_frames() const { return 1 << num_downsampling(); }
  /// (time, freq) extents after each stage, entry 0 = stem.
  std::vector<std::pair<int, int>> stage_shapes(int frames, int dim) const;

  friend void to_json(nlohmann::json& j, const EmbedderConfig& c);
  friend void from_json(const nlohmann::json& j, EmbedderConfig& c);
};

template <typename Scalar>
struct ParamTensor {
  std::string name;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> value;
  int rank = 2;  // biases are stored as n x 1 with rank 1
};

template <typename Scalar>
class EmbedderModelT {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  struct Conv {
    int in_channels = 0, out_channels = 0, kernel = 3, stride = 1;
    int weight = -1, bias = -1;  // indices into params()
  };
  struct Block {
    Conv conv1, conv2, shortcut;
    bool has_shortcut = false;
  };
  struct Output {
    Matrix embeddings;  // B x embed_dim
    Matrix logits;      // B x C
  };

  EmbedderModelT() = default;
  /// Builds the layer graph with fan-in-scaled uniform weights and zero biases.
  static EmbedderModelT initialize(const EmbedderConfig& cfg, std::uint64_t seed);
  /// Builds the layer graph with all-zero parameters (for loading).
  static EmbedderModelT zeros(const EmbedderConfig& cfg);

  const EmbedderConfig& config() const { return config_; }
  std::vector<ParamTensor<Scalar>>& params() { return params_; }
  const std::vector<ParamTensor<Scalar>>& params() const { return params_; }
  std::size_t num_parameters() const;

  /// `tensor` is (B*T) x D: row b*T + t holds frame t of sample b.
  Output forward(const Matrix& tensor, int frames) const;

  /// Mean soft cross-entropy over the batch and its gradient with respect to
  /// every parameter tensor (same layout as params()).
  Scalar loss_and_gradient(const Matrix& tensor, int frames, const Matrix& labels,
                           std::vector<Matrix>& grads) const;

  template <typename Other>
  EmbedderModelT<Other> cast() const;

 private:
  template <typename>
  friend class EmbedderModelT;

  struct Activation {
    Matrix data;  // channels x (h * w), position index = y * w + x
    int h = 0, w = 0;
  };
  struct ConvCache {
    Matrix cols;
    int in_h = 0, in_w = 0;
  };
  struct BlockCache {
    ConvCache c1, c2, sc;
    Activation input, hidden, output;
  };
  struct SampleCache {
    ConvCache stem;
    Activation stem_out;
    std::vector<BlockCache> blocks;
    Vector pooled, embedding;
  };

  Conv add_conv(int in_ch, int out_ch, int kernel, int stride, const std::string& name);
  int add_param(const std::string& name, Eigen::Index rows, Eigen::Index cols, int rank);
  void forward_sample(const Matrix& frames, SampleCache* cache, Vector& embedding, Vector& logits) const;
  Activation conv_forward(const Conv& conv, const Activation& in, ConvCache* cache) const;
  Activation conv_backward(const Conv& conv, const Matrix& grad_out, const ConvCache& cache,
                           std::vector<Matrix>& grads, bool need_input_grad) const;

  EmbedderConfig config_;
  std::vector<ParamTensor<Scalar>> params_;
  Conv stem_;
  std::vector<Block> blocks_;
  int linear1_w_ = -1, linear1_b_ = -1, linear2_w_ = -1, linear2_b_ = -1;
};

using EmbedderModel = EmbedderModelT<double>;

/// Mean over rows of -sum_c labels(b,c) * log softmax(logits.row(b))(c).
/// Throws DataError when a label row is not on the simplex (1e-6).
template <typename Derived, typename LabelDerived>
typename Derived::Scalar soft_cross_entropy(const Eigen::MatrixBase<Derived>& logits,
                                            const Eigen::MatrixBase<LabelDerived>& labels);

/// Row-wise log-softmax with max subtraction.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> log_softmax_rows(
    const Eigen::MatrixBase<Derived>& logits);

/// Linear1 output for a single segment.
Eigen::VectorXd extract_embedding(const EmbedderModel& model, const FeatureMatrix& feats);
Eigen::MatrixXd extract_embeddings(const EmbedderModel& model, const std::vector<FeatureMatrix>& segments);

struct TrainState {
  EmbedderModel model;
  std::vector<Eigen::MatrixXd> velocity;
  std::int64_t step = 0;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double max_grad_norm = 0.0;  // 0 disables clipping
  std::vector<double> loss_history;

  TrainState() = default;
  TrainState(EmbedderModel m, double lr, double mom);
};

/// One SGD-with-momentum step on the soft-label cross-entropy. Returns the
/// pre-update loss. Throws NumericError naming the offending tensor when the
/// loss or a gradient is not finite.
double train_step(TrainState& state, const AssembledBatch& batch);

struct TrainSchedule {
  int epochs = 15;
  int batches_per_epoch = 40;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double lr_decay = 1.0;  // multiplicative, per epoch
  double max_grad_norm = 5.0;

  friend void to_json(nlohmann::json& j, const TrainSchedule& s);
  friend void from_json(const nlohmann::json& j, TrainSchedule& s);
};

struct TrainReport {
  std::vector<double> loss_history;
  std::vector<double> epoch_mean_loss;
  AugmentationStats augmentation;

  nlohmann::json to_json() const;
};

struct TrainResult {
  EmbedderModel model;
  TrainReport report;
};

TrainResult train_embedder(const CorpusIndex& index, const AssemblyConfig& assembly, const EmbedderConfig& embed_cfg,
                           const TrainSchedule& schedule, std::uint64_t seed);

// HDEM checkpoint: "HDEM", u32 version, JSON config block, u32 tensor count,
// then per tensor: u32 rank, u32 dims..., little-endian f32 payload.
void save_embedder(const std::filesystem::path& path, const EmbedderModel& model);
EmbedderModel load_embedder(const std::filesystem::path& path);

}  // namespace hetdiar

#include "hetdiar/embedder_impl.hpp"

#endif  // HETDIAR_EMBEDDER_HPP
