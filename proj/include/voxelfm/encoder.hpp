#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "voxelfm/error.hpp"
#include "voxelfm/rng.hpp"
#include "voxelfm/volume.hpp"

namespace voxelfm {

/// Miniature residual 3D conv encoder:
///   stem: conv3 -> relu
///   stage s: a = relu(conv3(x)); g = relu(conv3(a)); x' = avgpool2(a + g)
/// Stage s has base_channels * 2^s channels; the backbone embedding is the
/// global average of the last stage, so embed_dim must equal its width.
/// The projection head is linear -> relu -> linear.
struct EncoderConfig {
  Index3 patch{16, 16, 16};
  int stages = 2;
  int base_channels = 8;
  int embed_dim = 16;
  int proj_dim = 16;

  int stage_channels(int s) const { return base_channels << s; }
  int feature_channels() const { return stage_channels(stages - 1); }
  int downsample() const { return 1 << stages; }

  void validate() const {
    require(stages >= 1, ErrorCode::invalid_argument, "encoder needs >= 1 stage");
    require(base_channels >= 1, ErrorCode::invalid_argument, "base_channels must be >= 1");
    require(embed_dim >= 2 && proj_dim >= 2, ErrorCode::invalid_argument, "embed_dim and proj_dim must be >= 2");
    require(embed_dim == feature_channels(), ErrorCode::invalid_argument,
            "embed_dim must equal base_channels * 2^(stages-1) = " + std::to_string(feature_channels()));
    for (int s : patch) {
      require(s >= downsample() && s % downsample() == 0, ErrorCode::invalid_argument,
              "patch extent must be a positive multiple of 2^stages");
    }
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

template <class T>
struct ParamTensor {
  std::vector<int> shape;
  std::vector<T> values;
};

/// Named parameter tensors; std::map keeps them sorted by name.
template <class T>
using ParamMap = std::map<std::string, ParamTensor<T>>;

template <class T>
using ParamGrads = std::map<std::string, std::vector<T>>;

template <class T>
struct EncoderState {
  EncoderConfig config;
  std::uint64_t seed = 0;
  ParamMap<T> params;

  const std::vector<T>& operator[](const std::string& name) const { return params.at(name).values; }
  std::vector<T>& operator[](const std::string& name) { return params.at(name).values; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params) n += p.values.size();
    return n;
  }
};

/// Channels-last feature map: index ((z*Y + y)*X + x)*C + c.
template <class T>
struct FeatureMap {
  Index3 shape{};
  int channels = 0;
  std::vector<T> data;

  FeatureMap() = default;
  FeatureMap(Index3 s, int c) : shape(s), channels(c), data(voxel_count(s) * static_cast<std::size_t>(c), T(0)) {}
  std::size_t voxels() const { return voxel_count(shape); }
};

namespace nn {

inline std::string stage_name(int s, const char* conv) { return "stage" + std::to_string(s) + "." + conv; }

/// Parameter shapes implied by a config, keyed by name.
inline std::map<std::string, std::vector<int>> parameter_shapes(const EncoderConfig& c) {
  std::map<std::string, std::vector<int>> shapes;
  shapes["stem.weight"] = {27, 1, c.stage_channels(0)};
  shapes["stem.bias"] = {c.stage_channels(0)};
  for (int s = 0; s < c.stages; ++s) {
    const int cin = s == 0 ? c.stage_channels(0) : c.stage_channels(s - 1);
    const int cs = c.stage_channels(s);
    shapes[stage_name(s, "conv_a.weight")] = {27, cin, cs};
    shapes[stage_name(s, "conv_a.bias")] = {cs};
    shapes[stage_name(s, "conv_b.weight")] = {27, cs, cs};
    shapes[stage_name(s, "conv_b.bias")] = {cs};
  }
  shapes["head.fc1.weight"] = {c.embed_dim, c.embed_dim};
  shapes["head.fc1.bias"] = {c.embed_dim};
  shapes["head.fc2.weight"] = {c.embed_dim, c.proj_dim};
  shapes["head.fc2.bias"] = {c.proj_dim};
  return shapes;
}

inline std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Calls fn(dst_voxel, src_voxel, count, tap) for every run of voxels along x
/// whose tap neighbour lies inside the grid.
template <class Fn>
void for_each_tap_run(const Index3& shape, const Fn& fn) {
  const int Z = shape[0], Y = shape[1], X = shape[2];
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int tap = ((dz + 1) * 3 + (dy + 1)) * 3 + (dx + 1);
        const int x0 = std::max(0, -dx), x1 = std::min(X, X - dx);
        if (x1 <= x0) continue;
        for (int z = std::max(0, -dz); z < std::min(Z, Z - dz); ++z)
          for (int y = std::max(0, -dy); y < std::min(Y, Y - dy); ++y) {
            const std::size_t dst = (static_cast<std::size_t>(z) * Y + y) * X + x0;
            const std::size_t src = (static_cast<std::size_t>(z + dz) * Y + (y + dy)) * X + (x0 + dx);
            fn(dst, src, x1 - x0, tap);
          }
      }
}

/// Gathers the 27 zero-padded neighbours of every voxel: [V, 27*cin].
template <class T>
RowMat<T> im2col(const FeatureMap<T>& in) {
  const int cin = in.channels;
  const std::size_t width = 27 * static_cast<std::size_t>(cin);
  RowMat<T> col = RowMat<T>::Zero(static_cast<Eigen::Index>(in.voxels()), static_cast<Eigen::Index>(width));
  T* base = col.data();
  const T* src_data = in.data.data();
  for_each_tap_run(in.shape, [&](std::size_t dst, std::size_t src, int count, int tap) {
    T* d = base + dst * width + static_cast<std::size_t>(tap) * cin;
    const T* s = src_data + src * cin;
    for (int n = 0; n < count; ++n, d += width, s += cin)
      for (int c = 0; c < cin; ++c) d[c] = s[c];
  });
  return col;
}

/// Scatter-adds columns back onto the voxel grid (adjoint of im2col).
template <class T>
void col2im(const RowMat<T>& col, FeatureMap<T>& out) {
  const int cin = out.channels;
  const std::size_t width = 27 * static_cast<std::size_t>(cin);
  const T* base = col.data();
  T* out_data = out.data.data();
  for_each_tap_run(out.shape, [&](std::size_t dst, std::size_t src, int count, int tap) {
    const T* s = base + dst * width + static_cast<std::size_t>(tap) * cin;
    T* d = out_data + src * cin;
    for (int n = 0; n < count; ++n, s += width, d += cin)
      for (int c = 0; c < cin; ++c) d[c] += s[c];
  });
}

/// 3x3x3 "same" convolution. Weights are laid out [27][cin][cout].
template <class T>
FeatureMap<T> conv3_forward(const FeatureMap<T>& in, const T* weight, const T* bias, int cout) {
  FeatureMap<T> out(in.shape, cout);
  const auto V = static_cast<Eigen::Index>(in.voxels());
  const RowMat<T> col = im2col(in);
  Eigen::Map<const RowMat<T>> w(weight, 27 * in.channels, cout);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias, cout);
  Eigen::Map<RowMat<T>> o(out.data.data(), V, cout);
  o.noalias() = col * w;
  o.rowwise() += b;
  return out;
}

/// Accumulates weight/bias gradients; writes the input gradient when `grad_in` is set.
template <class T>
void conv3_backward(const FeatureMap<T>& in, const T* weight, const FeatureMap<T>& grad_out, T* grad_weight,
                    T* grad_bias, FeatureMap<T>* grad_in) {
  const int cin = in.channels;
  const int cout = grad_out.channels;
  const auto V = static_cast<Eigen::Index>(in.voxels());
  Eigen::Map<const RowMat<T>> g(grad_out.data.data(), V, cout);
  Eigen::Map<RowMat<T>> gw(grad_weight, 27 * cin, cout);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(grad_bias, cout);
  gb += g.colwise().sum();
  const RowMat<T> col = im2col(in);
  gw.noalias() += col.transpose() * g;
  if (grad_in) {
    *grad_in = FeatureMap<T>(in.shape, cin);
    Eigen::Map<const RowMat<T>> w(weight, 27 * cin, cout);
    const RowMat<T> gcol = g * w.transpose();
    col2im(gcol, *grad_in);
  }
}

template <class T>
void relu_inplace(FeatureMap<T>& f) {
  for (auto& v : f.data) v = v > T(0) ? v : T(0);
}

/// Zeroes gradient entries where the post-activation output is not positive.
template <class T>
void relu_mask(const FeatureMap<T>& activated, FeatureMap<T>& grad) {
  for (std::size_t n = 0; n < grad.data.size(); ++n)
    if (!(activated.data[n] > T(0))) grad.data[n] = T(0);
}

template <class T>
FeatureMap<T> avgpool2_forward(const FeatureMap<T>& in) {
  const Index3 os{in.shape[0] / 2, in.shape[1] / 2, in.shape[2] / 2};
  FeatureMap<T> out(os, in.channels);
  const int C = in.channels;
  const T scale = T(1) / T(8);
  for (int z = 0; z < os[0]; ++z)
    for (int y = 0; y < os[1]; ++y)
      for (int x = 0; x < os[2]; ++x) {
        T* o = &out.data[((static_cast<std::size_t>(z) * os[1] + y) * os[2] + x) * C];
        for (int d = 0; d < 8; ++d) {
          const int zz = 2 * z + (d >> 2), yy = 2 * y + ((d >> 1) & 1), xx = 2 * x + (d & 1);
          const T* ip = &in.data[((static_cast<std::size_t>(zz) * in.shape[1] + yy) * in.shape[2] + xx) * C];
          for (int c = 0; c < C; ++c) o[c] += ip[c];
        }
        for (int c = 0; c < C; ++c) o[c] *= scale;
      }
  return out;
}

template <class T>
FeatureMap<T> avgpool2_backward(const FeatureMap<T>& grad_out, const Index3& in_shape) {
  FeatureMap<T> gin(in_shape, grad_out.channels);
  const int C = grad_out.channels;
  const T scale = T(1) / T(8);
  const Index3& os = grad_out.shape;
  for (int z = 0; z < os[0]; ++z)
    for (int y = 0; y < os[1]; ++y)
      for (int x = 0; x < os[2]; ++x) {
        const T* g = &grad_out.data[((static_cast<std::size_t>(z) * os[1] + y) * os[2] + x) * C];
        for (int d = 0; d < 8; ++d) {
          const int zz = 2 * z + (d >> 2), yy = 2 * y + ((d >> 1) & 1), xx = 2 * x + (d & 1);
          T* gp = &gin.data[((static_cast<std::size_t>(zz) * in_shape[1] + yy) * in_shape[2] + xx) * C];
          for (int c = 0; c < C; ++c) gp[c] = g[c] * scale;
        }
      }
  return gin;
}

/// y = W^T x + b with W stored [in][out].
template <class T>
std::vector<T> linear_forward(std::span<const T> x, const std::vector<T>& w, const std::vector<T>& b) {
  const std::size_t nout = b.size();
  std::vector<T> y(b);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t o = 0; o < nout; ++o) y[o] += x[i] * w[i * nout + o];
  return y;
}

template <class T>
std::vector<T> linear_backward(std::span<const T> x, const std::vector<T>& w, std::span<const T> gy,
                               std::vector<T>& gw, std::vector<T>& gb) {
  const std::size_t nout = gy.size();
  std::vector<T> gx(x.size(), T(0));
  for (std::size_t o = 0; o < nout; ++o) gb[o] += gy[o];
  for (std::size_t i = 0; i < x.size(); ++i) {
    T acc = 0;
    for (std::size_t o = 0; o < nout; ++o) {
      gw[i * nout + o] += x[i] * gy[o];
      acc += w[i * nout + o] * gy[o];
    }
    gx[i] = acc;
  }
  return gx;
}

}  // namespace nn

/// Fan-in scaled normal init (variance 2 / fan_in); biases zero.
template <class T>
EncoderState<T> init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderState<T> state;
  state.config = config;
  state.seed = seed;
  Rng rng(derive_seed(seed, 0x494e4954ULL));
  for (const auto& [name, shape] : nn::parameter_shapes(config)) {
    ParamTensor<T> p;
    p.shape = shape;
    p.values.assign(nn::shape_size(shape), T(0));
    if (name.ends_with(".weight")) {
      const int fan_in = shape.size() == 3 ? shape[0] * shape[1] : shape[0];
      const double sd = std::sqrt(2.0 / fan_in);
      for (auto& v : p.values) v = static_cast<T>(normal(rng, 0.0, sd));
    }
    state.params.emplace(name, std::move(p));
  }
  return state;
}

template <class U, class T>
EncoderState<U> cast_state(const EncoderState<T>& src) {
  EncoderState<U> dst;
  dst.config = src.config;
  dst.seed = src.seed;
  for (const auto& [name, p] : src.params) {
    ParamTensor<U> q;
    q.shape = p.shape;
    q.values.assign(p.values.begin(), p.values.end());
    dst.params.emplace(name, std::move(q));
  }
  return dst;
}

template <class T>
ParamGrads<T> zero_grads(const EncoderState<T>& state) {
  ParamGrads<T> g;
  for (const auto& [name, p] : state.params) g.emplace(name, std::vector<T>(p.values.size(), T(0)));
  return g;
}

/// Intermediate activations of one view, kept for the backward pass.
template <class T>
struct ForwardTape {
  struct Stage {
    FeatureMap<T> input, a, g, r;
  };
  FeatureMap<T> input;
  FeatureMap<T> stem;
  std::vector<Stage> stages;
  FeatureMap<T> features;
  std::vector<T> embedding;
  std::vector<T> hidden;
  std::vector<T> projected;
};

template <class T>
void check_view_shape(const EncoderConfig& config, const Index3& shape) {
  for (int s : shape) {
    require(s >= config.downsample() && s % config.downsample() == 0, ErrorCode::shape_mismatch,
            "view shape " + to_string(shape) + " is not a positive multiple of " +
                std::to_string(config.downsample()));
  }
}

/// Runs the backbone (and head when `with_head`). Accepts any view whose
/// extents are positive multiples of 2^stages.
template <class T>
ForwardTape<T> forward_pass(const EncoderState<T>& state, const Volume& view, bool with_head = true,
                            bool keep_tape = true) {
  const auto& c = state.config;
  check_view_shape<T>(c, view.shape);
  ForwardTape<T> tape;
  FeatureMap<T> x(view.shape, 1);
  for (std::size_t n = 0; n < view.data.size(); ++n) x.data[n] = static_cast<T>(view.data[n]);

  FeatureMap<T> h = nn::conv3_forward(x, state["stem.weight"].data(), state["stem.bias"].data(), c.stage_channels(0));
  nn::relu_inplace(h);
  if (keep_tape) {
    tape.input = std::move(x);
    tape.stem = h;
  }
  for (int s = 0; s < c.stages; ++s) {
    const int cs = c.stage_channels(s);
    auto a = nn::conv3_forward(h, state[nn::stage_name(s, "conv_a.weight")].data(),
                               state[nn::stage_name(s, "conv_a.bias")].data(), cs);
    nn::relu_inplace(a);
    auto g = nn::conv3_forward(a, state[nn::stage_name(s, "conv_b.weight")].data(),
                               state[nn::stage_name(s, "conv_b.bias")].data(), cs);
    nn::relu_inplace(g);
    FeatureMap<T> r = a;
    for (std::size_t n = 0; n < r.data.size(); ++n) r.data[n] += g.data[n];
    auto next = nn::avgpool2_forward(r);
    if (keep_tape) tape.stages.push_back({std::move(h), std::move(a), std::move(g), std::move(r)});
    h = std::move(next);
  }
  tape.features = std::move(h);

  const int C = tape.features.channels;
  const std::size_t V = tape.features.voxels();
  tape.embedding.assign(static_cast<std::size_t>(C), T(0));
  for (std::size_t v = 0; v < V; ++v)
    for (int ch = 0; ch < C; ++ch) tape.embedding[static_cast<std::size_t>(ch)] += tape.features.data[v * C + ch];
  for (auto& e : tape.embedding) e /= static_cast<T>(V);

  if (with_head) {
    tape.hidden = nn::linear_forward<T>(tape.embedding, state["head.fc1.weight"], state["head.fc1.bias"]);
    for (auto& v : tape.hidden) v = v > T(0) ? v : T(0);
    tape.projected = nn::linear_forward<T>(tape.hidden, state["head.fc2.weight"], state["head.fc2.bias"]);
  }
  return tape;
}

/// Spatial feature map at 1/2^stages resolution.
template <class T>
FeatureMap<T> forward_features(const EncoderState<T>& state, const Volume& view) {
  return forward_pass(state, view, false, false).features;
}

/// Backbone embedding (length embed_dim) or projected embedding (length proj_dim).
template <class T>
std::vector<T> embed(const EncoderState<T>& state, const Volume& view, bool projected) {
  auto tape = forward_pass(state, view, projected, false);
  return projected ? std::move(tape.projected) : std::move(tape.embedding);
}

/// Backpropagates d(loss)/d(projected) through head and backbone, adding
/// parameter gradients into `grads`.
template <class T>
void backward_pass(const EncoderState<T>& state, const ForwardTape<T>& tape, std::span<const T> grad_projected,
                   ParamGrads<T>& grads) {
  const auto& c = state.config;
  require(grad_projected.size() == static_cast<std::size_t>(c.proj_dim), ErrorCode::shape_mismatch,
          "upstream gradient length must equal proj_dim");
  require(!tape.stages.empty() && !tape.projected.empty(), ErrorCode::invalid_argument,
          "backward_pass needs a full tape");

  auto grad_hidden = nn::linear_backward<T>(tape.hidden, state["head.fc2.weight"], grad_projected,
                                            grads.at("head.fc2.weight"), grads.at("head.fc2.bias"));
  for (std::size_t n = 0; n < grad_hidden.size(); ++n)
    if (!(tape.hidden[n] > T(0))) grad_hidden[n] = T(0);
  auto grad_embed = nn::linear_backward<T>(tape.embedding, state["head.fc1.weight"], grad_hidden,
                                           grads.at("head.fc1.weight"), grads.at("head.fc1.bias"));

  const int C = tape.features.channels;
  const std::size_t V = tape.features.voxels();
  FeatureMap<T> grad(tape.features.shape, C);
  for (std::size_t v = 0; v < V; ++v)
    for (int ch = 0; ch < C; ++ch) grad.data[v * C + ch] = grad_embed[static_cast<std::size_t>(ch)] / static_cast<T>(V);

  for (int s = c.stages - 1; s >= 0; --s) {
    const auto& st = tape.stages[static_cast<std::size_t>(s)];
    FeatureMap<T> grad_r = nn::avgpool2_backward(grad, st.r.shape);
    FeatureMap<T> grad_g = grad_r;
    nn::relu_mask(st.g, grad_g);
    FeatureMap<T> grad_a;
    nn::conv3_backward(st.a, state[nn::stage_name(s, "conv_b.weight")].data(), grad_g,
                       grads.at(nn::stage_name(s, "conv_b.weight")).data(),
                       grads.at(nn::stage_name(s, "conv_b.bias")).data(), &grad_a);
    for (std::size_t n = 0; n < grad_a.data.size(); ++n) grad_a.data[n] += grad_r.data[n];
    nn::relu_mask(st.a, grad_a);
    nn::conv3_backward(st.input, state[nn::stage_name(s, "conv_a.weight")].data(), grad_a,
                       grads.at(nn::stage_name(s, "conv_a.weight")).data(),
                       grads.at(nn::stage_name(s, "conv_a.bias")).data(), &grad);
  }
  nn::relu_mask(tape.stem, grad);
  nn::conv3_backward(tape.input, state["stem.weight"].data(), grad, grads.at("stem.weight").data(),
                     grads.at("stem.bias").data(), static_cast<FeatureMap<T>*>(nullptr));
}

/// Parameter gradients of sum_v <upstream_v, projected(view_v)>.
/// With workers > 1 views are split across threads; per-view gradients are
/// reduced in view order, so the result does not depend on the worker count.
template <class T>
ParamGrads<T> gradients(const EncoderState<T>& state, std::span<const Volume> views,
                        std::span<const std::vector<T>> upstream, int workers = 1) {
  require(views.size() == upstream.size(), ErrorCode::shape_mismatch, "one upstream gradient per view required");
  std::vector<ParamGrads<T>> per_view(views.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t n = begin; n < views.size(); n += stride) {
      per_view[n] = zero_grads(state);
      const auto tape = forward_pass(state, views[n]);
      backward_pass<T>(state, tape, upstream[n], per_view[n]);
    }
  };
  if (workers <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, static_cast<std::size_t>(w), static_cast<std::size_t>(workers));
    for (auto& t : pool) t.join();
  }
  auto total = zero_grads(state);
  for (const auto& g : per_view)
    for (auto& [name, acc] : total) {
      const auto& src = g.at(name);
      for (std::size_t n = 0; n < acc.size(); ++n) acc[n] += src[n];
    }
  return total;
}

}  // namespace voxelfm
