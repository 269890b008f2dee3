#pragma once

// Minimal dense-network machinery: forward with cached activations, exact
// analytic backward, AdamW and a step learning-rate schedule. Templated on
// the scalar so the same code runs in float for training and in double for
// gradient checking; both are explicitly instantiated in nn.cpp.

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace g3::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class Activation { kRelu, kNone };

struct MlpSpec {
  std::vector<int> layer_dims;          // n_layers + 1 entries
  std::vector<Activation> activations;  // one per layer

  // linear(in -> hidden) - relu - linear(hidden -> out)
  static MlpSpec two_layer(int in, int hidden, int out);

  std::size_t n_layers() const { return activations.size(); }
  void validate() const;
};

template <typename T>
struct DenseLayer {
  Matrix<T> weight;  // out x in
  Vector<T> bias;    // out
};

// Identity token that follows moves but not copies, so a cache can tell the
// network it came from apart from a copy of that network.
class InstanceTag {
 public:
  InstanceTag();
  InstanceTag(const InstanceTag&);
  InstanceTag& operator=(const InstanceTag&);
  InstanceTag(InstanceTag&&) noexcept = default;
  InstanceTag& operator=(InstanceTag&&) noexcept = default;
  std::uint64_t value() const { return value_; }

 private:
  std::uint64_t value_;
};

template <typename T>
class Mlp {
 public:
  Mlp() = default;
  // All parameters zero.
  explicit Mlp(MlpSpec spec);

  // Uniform fan-in scaled init: weights in +-sqrt(6/fan_in), biases in
  // +-1/sqrt(fan_in).
  void init_kaiming_uniform(std::mt19937_64& rng);

  const MlpSpec& spec() const { return spec_; }
  const std::vector<DenseLayer<T>>& layers() const { return layers_; }
  // Any mutable access invalidates caches taken before it.
  std::vector<DenseLayer<T>>& mutable_layers() {
    ++revision_;
    return layers_;
  }

  int input_dim() const { return spec_.layer_dims.front(); }
  int output_dim() const { return spec_.layer_dims.back(); }
  std::size_t parameter_count() const;
  std::uint64_t revision() const { return revision_; }
  std::uint64_t tag() const { return tag_.value(); }

  template <typename U>
  Mlp<U> cast() const;

 private:
  MlpSpec spec_;
  std::vector<DenseLayer<T>> layers_;
  std::uint64_t revision_ = 0;
  InstanceTag tag_;
};

template <typename T>
struct MlpCache {
  std::uint64_t owner_tag = 0;
  std::uint64_t owner_revision = 0;
  std::vector<Matrix<T>> inputs;           // input to each layer
  std::vector<Matrix<T>> pre_activations;  // affine output of each layer
};

template <typename T>
struct MlpGrads {
  std::vector<Matrix<T>> weight;
  std::vector<Vector<T>> bias;

  static MlpGrads zeros_like(const Mlp<T>& mlp);
  MlpGrads& operator+=(const MlpGrads& other);
};

template <typename T>
struct ForwardResult {
  Matrix<T> output;
  MlpCache<T> cache;
};

template <typename T>
struct BackwardResult {
  MlpGrads<T> grads;
  Matrix<T> input_grad;
};

// Rows of `input` are samples. Throws UsageError on width mismatch.
template <typename T>
ForwardResult<T> mlp_forward(const Mlp<T>& mlp, const Matrix<T>& input);

// Forward without keeping the cache.
template <typename T>
Matrix<T> mlp_infer(const Mlp<T>& mlp, const Matrix<T>& input);

// Throws UsageError if the cache was not produced by this network at its
// current revision, or if the upstream gradient has the wrong shape.
template <typename T>
BackwardResult<T> mlp_backward(const Mlp<T>& mlp, const MlpCache<T>& cache,
                               const Matrix<T>& upstream_grad);

// One trainable tensor as seen by the optimizer.
template <typename T>
struct ParamSlot {
  std::span<T> value;
  std::span<const T> grad;
};

// Appends weight/bias slots of `mlp` paired with `grads` (same layout).
template <typename T>
void collect_slots(Mlp<T>& mlp, const MlpGrads<T>& grads, std::vector<ParamSlot<T>>& out);

struct AdamWConfig {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
};

// AdamW with decoupled weight decay: p -= lr*wd*p, then the Adam update.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  std::int64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return config_; }

  // Moment buffers are sized on the first call; later calls must pass
  // slots of the same count and sizes.
  void step(std::span<const ParamSlot<T>> slots);

 private:
  AdamWConfig config_;
  std::int64_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

struct StepLrSchedule {
  double base_lr = 3e-5;
  double gamma = 0.87;

  // base_lr * gamma^epoch. Throws UsageError for epoch < 0 or gamma outside (0, 1].
  double lr_at(int epoch) const;
};

// ---- "G3NN" checkpoint -------------------------------------------------
//
// magic "G3NN" | version u32 | metadata (u32 len + UTF-8 JSON) |
// tensor count u32 | per tensor: name (u32 len + UTF-8), rank u32,
// dims u64 x rank, f32 data little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Tensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> data;
};

struct Checkpoint {
  std::string metadata_json;
  std::vector<Tensor> tensors;

  const Tensor& get(std::string_view name) const;  // throws FormatError if absent
  void add(Tensor t) { tensors.push_back(std::move(t)); }
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

template <typename T>
Tensor to_tensor(std::string name, const Matrix<T>& m);
template <typename T>
Tensor to_tensor(std::string name, const Vector<T>& v);
template <typename T>
Matrix<T> matrix_from(const Tensor& t, Eigen::Index rows, Eigen::Index cols);
template <typename T>
Vector<T> vector_from(const Tensor& t, Eigen::Index size);

template <typename T>
void append_mlp(Checkpoint& ckpt, const std::string& prefix, const Mlp<T>& mlp);
// `mlp` must already carry the expected spec; tensors are shape-checked.
template <typename T>
void read_mlp(const Checkpoint& ckpt, const std::string& prefix, Mlp<T>& mlp);

}  // namespace g3::nn
