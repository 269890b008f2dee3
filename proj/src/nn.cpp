#include "g3/nn.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <string>

#include "g3/binary_io.hpp"
#include "g3/errors.hpp"

namespace g3::nn {
namespace {

std::uint64_t next_tag() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

constexpr io::Magic kCheckpointMagic{'G', '3', 'N', 'N'};

}  // namespace

InstanceTag::InstanceTag() : value_(next_tag()) {}
InstanceTag::InstanceTag(const InstanceTag&) : value_(next_tag()) {}
InstanceTag& InstanceTag::operator=(const InstanceTag&) {
  value_ = next_tag();
  return *this;
}

MlpSpec MlpSpec::two_layer(int in, int hidden, int out) {
  return {{in, hidden, out}, {Activation::kRelu, Activation::kNone}};
}

void MlpSpec::validate() const {
  if (layer_dims.size() < 2) throw UsageError("MlpSpec: need at least two dims");
  if (activations.size() + 1 != layer_dims.size()) {
    throw UsageError("MlpSpec: one activation per layer required");
  }
  for (int d : layer_dims) {
    if (d <= 0) throw UsageError("MlpSpec: dims must be positive");
  }
}

template <typename T>
Mlp<T>::Mlp(MlpSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  layers_.resize(spec_.n_layers());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].weight = Matrix<T>::Zero(spec_.layer_dims[l + 1], spec_.layer_dims[l]);
    layers_[l].bias = Vector<T>::Zero(spec_.layer_dims[l + 1]);
  }
}

template <typename T>
void Mlp<T>::init_kaiming_uniform(std::mt19937_64& rng) {
  for (auto& layer : mutable_layers()) {
    const double fan_in = static_cast<double>(layer.weight.cols());
    std::uniform_real_distribution<double> w(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
    std::uniform_real_distribution<double> b(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
      layer.weight.data()[i] = static_cast<T>(w(rng));
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = static_cast<T>(b(rng));
  }
}

template <typename T>
std::size_t Mlp<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

template <typename T>
template <typename U>
Mlp<U> Mlp<T>::cast() const {
  Mlp<U> out(spec_);
  auto& dst = out.mutable_layers();
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    dst[l].weight = layers_[l].weight.template cast<U>();
    dst[l].bias = layers_[l].bias.template cast<U>();
  }
  return out;
}

template <typename T>
MlpGrads<T> MlpGrads<T>::zeros_like(const Mlp<T>& mlp) {
  MlpGrads g;
  for (const auto& l : mlp.layers()) {
    g.weight.push_back(Matrix<T>::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Vector<T>::Zero(l.bias.size()));
  }
  return g;
}

template <typename T>
MlpGrads<T>& MlpGrads<T>::operator+=(const MlpGrads& other) {
  for (std::size_t l = 0; l < weight.size(); ++l) {
    weight[l] += other.weight[l];
    bias[l] += other.bias[l];
  }
  return *this;
}

template <typename T>
ForwardResult<T> mlp_forward(const Mlp<T>& mlp, const Matrix<T>& input) {
  if (input.cols() != mlp.input_dim()) {
    throw UsageError("mlp_forward: input width " + std::to_string(input.cols()) +
                     ", expected " + std::to_string(mlp.input_dim()));
  }
  ForwardResult<T> r;
  r.cache.owner_tag = mlp.tag();
  r.cache.owner_revision = mlp.revision();
  Matrix<T> x = input;
  const auto& layers = mlp.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix<T> z = x * layers[l].weight.transpose();
    z.rowwise() += layers[l].bias.transpose();
    r.cache.inputs.push_back(std::move(x));
    if (mlp.spec().activations[l] == Activation::kRelu) {
      x = z.cwiseMax(T(0));
    } else {
      x = z;
    }
    r.cache.pre_activations.push_back(std::move(z));
  }
  r.output = std::move(x);
  return r;
}

template <typename T>
Matrix<T> mlp_infer(const Mlp<T>& mlp, const Matrix<T>& input) {
  if (input.cols() != mlp.input_dim()) {
    throw UsageError("mlp_infer: input width " + std::to_string(input.cols()) +
                     ", expected " + std::to_string(mlp.input_dim()));
  }
  Matrix<T> x = input;
  const auto& layers = mlp.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix<T> z = x * layers[l].weight.transpose();
    z.rowwise() += layers[l].bias.transpose();
    if (mlp.spec().activations[l] == Activation::kRelu) z = z.cwiseMax(T(0));
    x = std::move(z);
  }
  return x;
}

template <typename T>
BackwardResult<T> mlp_backward(const Mlp<T>& mlp, const MlpCache<T>& cache,
                               const Matrix<T>& upstream_grad) {
  if (cache.owner_tag != mlp.tag()) throw UsageError("mlp_backward: cache from another network");
  if (cache.owner_revision != mlp.revision()) {
    throw UsageError("mlp_backward: stale cache, parameters changed since forward");
  }
  const auto& layers = mlp.layers();
  if (cache.inputs.size() != layers.size()) throw UsageError("mlp_backward: cache depth mismatch");
  const Eigen::Index batch = cache.inputs.front().rows();
  if (upstream_grad.rows() != batch || upstream_grad.cols() != mlp.output_dim()) {
    throw UsageError("mlp_backward: upstream gradient " +
                     shape_str(upstream_grad.rows(), upstream_grad.cols()) + ", expected " +
                     shape_str(batch, mlp.output_dim()));
  }

  BackwardResult<T> r;
  r.grads.weight.resize(layers.size());
  r.grads.bias.resize(layers.size());
  Matrix<T> g = upstream_grad;
  for (std::size_t l = layers.size(); l-- > 0;) {
    if (mlp.spec().activations[l] == Activation::kRelu) {
      g = g.cwiseProduct(
          (cache.pre_activations[l].array() > T(0)).template cast<T>().matrix());
    }
    r.grads.weight[l] = g.transpose() * cache.inputs[l];
    r.grads.bias[l] = g.colwise().sum().transpose();
    g = g * layers[l].weight;
  }
  r.input_grad = std::move(g);
  return r;
}

template <typename T>
void collect_slots(Mlp<T>& mlp, const MlpGrads<T>& grads, std::vector<ParamSlot<T>>& out) {
  auto& layers = mlp.mutable_layers();
  if (grads.weight.size() != layers.size()) throw UsageError("collect_slots: layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& w = layers[l].weight;
    auto& b = layers[l].bias;
    if (grads.weight[l].size() != w.size() || grads.bias[l].size() != b.size()) {
      throw UsageError("collect_slots: gradient shape mismatch");
    }
    out.push_back({{w.data(), static_cast<std::size_t>(w.size())},
                   {grads.weight[l].data(), static_cast<std::size_t>(w.size())}});
    out.push_back({{b.data(), static_cast<std::size_t>(b.size())},
                   {grads.bias[l].data(), static_cast<std::size_t>(b.size())}});
  }
}

template <typename T>
void AdamW<T>::step(std::span<const ParamSlot<T>> slots) {
  if (m_.empty()) {
    for (const auto& s : slots) {
      m_.emplace_back(s.value.size(), 0.0);
      v_.emplace_back(s.value.size(), 0.0);
    }
  }
  if (slots.size() != m_.size()) throw UsageError("AdamW: slot count changed between steps");
  ++step_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double decay = 1.0 - config_.lr * config_.weight_decay;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const auto& slot = slots[s];
    if (slot.value.size() != m_[s].size() || slot.grad.size() != slot.value.size()) {
      throw UsageError("AdamW: parameter shape changed between steps");
    }
    auto& m = m_[s];
    auto& v = v_[s];
    for (std::size_t i = 0; i < slot.value.size(); ++i) {
      const double g = static_cast<double>(slot.grad[i]);
      double p = static_cast<double>(slot.value[i]) * decay;
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
      slot.value[i] = static_cast<T>(p);
    }
  }
}

double StepLrSchedule::lr_at(int epoch) const {
  if (epoch < 0) throw UsageError("lr schedule: negative epoch");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw UsageError("lr schedule: gamma must be in (0, 1]");
  return base_lr * std::pow(gamma, epoch);
}

// ---- checkpoint ----------------------------------------------------------

const Tensor& Checkpoint::get(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw FormatError("checkpoint: missing tensor '" + std::string(name) + "'");
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  io::BinaryWriter w(out);
  w.magic(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(ckpt.metadata_json);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.u64(d);
    w.f32s(t.data);
  }
  w.check();
}

Checkpoint read_checkpoint(std::istream& in) {
  io::BinaryReader r(in);
  r.expect_magic(kCheckpointMagic);
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.metadata_json = r.str();
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    Tensor t;
    t.name = r.str(4096);
    const auto rank = r.u32();
    if (rank > 8) throw FormatError("checkpoint: tensor rank out of range");
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.dims.push_back(r.u64());
      count *= t.dims.back();
      if (count > (1ull << 32)) throw FormatError("checkpoint: tensor too large");
    }
    t.data.resize(count);
    r.f32s(t.data);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  return read_checkpoint(in);
}

template <typename T>
Tensor to_tensor(std::string name, const Matrix<T>& m) {
  Tensor t{std::move(name),
           {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
           {}};
  t.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) t.data[i] = static_cast<float>(m.data()[i]);
  return t;
}

template <typename T>
Tensor to_tensor(std::string name, const Vector<T>& v) {
  Tensor t{std::move(name), {static_cast<std::uint64_t>(v.size())}, {}};
  t.data.resize(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) t.data[i] = static_cast<float>(v[i]);
  return t;
}

template <typename T>
Matrix<T> matrix_from(const Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  if (t.dims.size() != 2 || t.dims[0] != static_cast<std::uint64_t>(rows) ||
      t.dims[1] != static_cast<std::uint64_t>(cols)) {
    throw FormatError("checkpoint: tensor '" + t.name + "' has unexpected shape");
  }
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(t.data[i]);
  return m;
}

template <typename T>
Vector<T> vector_from(const Tensor& t, Eigen::Index size) {
  if (t.dims.size() != 1 || t.dims[0] != static_cast<std::uint64_t>(size)) {
    throw FormatError("checkpoint: tensor '" + t.name + "' has unexpected shape");
  }
  Vector<T> v(size);
  for (Eigen::Index i = 0; i < size; ++i) v[i] = static_cast<T>(t.data[i]);
  return v;
}

template <typename T>
void append_mlp(Checkpoint& ckpt, const std::string& prefix, const Mlp<T>& mlp) {
  const auto& layers = mlp.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    ckpt.add(to_tensor(prefix + "." + std::to_string(l) + ".weight", layers[l].weight));
    ckpt.add(to_tensor(prefix + "." + std::to_string(l) + ".bias", layers[l].bias));
  }
}

template <typename T>
void read_mlp(const Checkpoint& ckpt, const std::string& prefix, Mlp<T>& mlp) {
  auto& layers = mlp.mutable_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& layer = layers[l];
    layer.weight = matrix_from<T>(ckpt.get(prefix + "." + std::to_string(l) + ".weight"),
                                  layer.weight.rows(), layer.weight.cols());
    layer.bias = vector_from<T>(ckpt.get(prefix + "." + std::to_string(l) + ".bias"),
                                layer.bias.size());
  }
}

#define G3_NN_INSTANTIATE(T)                                                              \
  template class Mlp<T>;                                                                  \
  template struct MlpGrads<T>;                                                            \
  template class AdamW<T>;                                                                \
  template ForwardResult<T> mlp_forward(const Mlp<T>&, const Matrix<T>&);                 \
  template Matrix<T> mlp_infer(const Mlp<T>&, const Matrix<T>&);                          \
  template BackwardResult<T> mlp_backward(const Mlp<T>&, const MlpCache<T>&,              \
                                          const Matrix<T>&);                              \
  template void collect_slots(Mlp<T>&, const MlpGrads<T>&, std::vector<ParamSlot<T>>&);   \
  template Tensor to_tensor(std::string, const Matrix<T>&);                               \
  template Tensor to_tensor(std::string, const Vector<T>&);                               \
  template Matrix<T> matrix_from(const Tensor&, Eigen::Index, Eigen::Index);              \
  template Vector<T> vector_from(const Tensor&, Eigen::Index);                            \
  template void append_mlp(Checkpoint&, const std::string&, const Mlp<T>&);               \
  template void read_mlp(const Checkpoint&, const std::string&, Mlp<T>&);

G3_NN_INSTANTIATE(float)
G3_NN_INSTANTIATE(double)
#undef G3_NN_INSTANTIATE

template Mlp<double> Mlp<float>::cast<double>() const;
template Mlp<float> Mlp<double>::cast<float>() const;
template Mlp<float> Mlp<float>::cast<float>() const;
template Mlp<double> Mlp<double>::cast<double>() const;

}  // namespace g3::nn
