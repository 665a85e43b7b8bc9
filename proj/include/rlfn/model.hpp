#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rlfn/ops.hpp"
#include "rlfn/random.hpp"
#include "rlfn/tensor.hpp"

namespace rlfn {

enum class BlockKind { RLFB, RFDB_R, RFDB };

inline const char* to_string(BlockKind k) {
  switch (k) {
    case BlockKind::RLFB:
      return "rlfb";
    case BlockKind::RFDB_R:
      return "rfdb_r";
    case BlockKind::RFDB:
      return "rfdb";
  }
  return "?";
}

inline BlockKind parse_block_kind(const std::string& s) {
  if (s == "rlfb") return BlockKind::RLFB;
  if (s == "rfdb_r") return BlockKind::RFDB_R;
  if (s == "rfdb") return BlockKind::RFDB;
  throw Error("unknown block kind '" + s + "' (expected rlfb, rfdb_r or rfdb)");
}

struct ModelConfig {
  int num_blocks = 6;
  int channels = 52;
  int esa_channels = 16;
  int scale = 4;
  int in_channels = 3;
  int out_channels = 3;
  BlockKind block_kind = BlockKind::RLFB;
  // 3x3 conv+relu layers inside the ESA ConvGroup. RFDN used 3.
  int esa_convs = 1;

  void validate() const {
    auto fail = [](const std::string& msg) { throw Error("model config: " + msg); };
    if (num_blocks < 1) fail("num_blocks must be >= 1, got " + std::to_string(num_blocks));
    if (esa_channels < 1) fail("esa_channels must be >= 1, got " + std::to_string(esa_channels));
    if (channels < esa_channels) {
      fail("channels (" + std::to_string(channels) + ") must be >= esa_channels (" + std::to_string(esa_channels) + ")");
    }
    if (scale < 1) fail("scale must be >= 1, got " + std::to_string(scale));
    if (in_channels < 1 || out_channels < 1) fail("in/out channels must be >= 1");
    if (esa_convs < 1) fail("esa_convs must be >= 1, got " + std::to_string(esa_convs));
    if (block_kind == BlockKind::RFDB && channels % 2 != 0) {
      fail("rfdb needs an even channel count, got " + std::to_string(channels));
    }
  }

  bool operator==(const ModelConfig&) const = default;

  static ModelConfig rlfn(int scale) { return ModelConfig{6, 52, 16, scale}; }
  static ModelConfig rlfn_s(int scale) { return ModelConfig{6, 48, 16, scale}; }
};

template <typename T>
struct BasicEsa {
  BasicConvParams<T> reduce;              // 1x1 C -> f
  BasicConvParams<T> skip;                // 1x1 f -> f
  BasicConvParams<T> down;                // 3x3 stride 2, no padding
  std::vector<BasicConvParams<T>> group;  // 3x3 f -> f, each followed by relu
  BasicConvParams<T> expand;              // 1x1 f -> C
};

template <typename T>
struct BasicBlock {
  BlockKind kind = BlockKind::RLFB;
  std::vector<BasicConvParams<T>> refine;   // 3x3 C -> C
  std::vector<BasicConvParams<T>> distill;  // 1x1 C -> C/2, RFDB only
  BasicConvParams<T> fuse;                  // 1x1 into C
  BasicEsa<T> esa;
};

// Intermediate features of one block, filled on request.
template <typename T>
struct BasicBlockTrace {
  BasicTensor<T> residual;  // RLFB: F_in + refined; RFDB_R: last SRB output; RFDB: distilled concat
  BasicTensor<T> fused;     // after the 1x1 fuse, i.e. the ESA input
};

template <typename T>
struct NamedConv {
  std::string name;
  BasicConvParams<T>* conv;
};

struct LayerCost {
  std::string name;
  int out_h = 0;
  int out_w = 0;
  std::uint64_t macs = 0;
};

struct CostReport {
  std::vector<LayerCost> layers;
  std::uint64_t macs = 0;
  std::uint64_t flops() const { return 2 * macs; }
};

/// RLFN-style network: head conv, a stack of blocks, smoothing conv with a global residual,
/// then one conv and a pixel shuffle.
///
/// Copies share parameter storage; clone() gives an independent model.
template <typename T>
class BasicModel {
 public:
  ModelConfig config;
  BasicConvParams<T> head;
  std::vector<BasicBlock<T>> blocks;
  BasicConvParams<T> smooth;
  BasicConvParams<T> tail;

  // Registry in construction order. Names are a deterministic function of the config.
  std::vector<NamedConv<T>> layers() {
    std::vector<NamedConv<T>> out;
    out.push_back({"head", &head});
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "body." + std::to_string(i) + ".";
      BasicBlock<T>& b = blocks[i];
      for (std::size_t j = 0; j < b.refine.size(); ++j) out.push_back({p + "refine." + std::to_string(j), &b.refine[j]});
      for (std::size_t j = 0; j < b.distill.size(); ++j) {
        out.push_back({p + "distill." + std::to_string(j), &b.distill[j]});
      }
      out.push_back({p + "fuse", &b.fuse});
      out.push_back({p + "esa.reduce", &b.esa.reduce});
      out.push_back({p + "esa.skip", &b.esa.skip});
      out.push_back({p + "esa.down", &b.esa.down});
      for (std::size_t j = 0; j < b.esa.group.size(); ++j) {
        out.push_back({p + "esa.group." + std::to_string(j), &b.esa.group[j]});
      }
      out.push_back({p + "esa.expand", &b.esa.expand});
    }
    out.push_back({"smooth", &smooth});
    out.push_back({"tail", &tail});
    return out;
  }

  // Flat (name, tensor) list: "<layer>.weight", "<layer>.bias".
  std::vector<std::pair<std::string, BasicTensor<T>>> named_tensors() const {
    std::vector<std::pair<std::string, BasicTensor<T>>> out;
    for (auto& [name, conv] : const_cast<BasicModel*>(this)->layers()) {
      out.emplace_back(name + ".weight", conv->weight);
      out.emplace_back(name + ".bias", conv->bias);
    }
    return out;
  }

  std::vector<BasicTensor<T>> parameters() const {
    std::vector<BasicTensor<T>> out;
    for (auto& [name, t] : named_tensors()) out.push_back(t);
    return out;
  }

  std::size_t count_params() const {
    std::size_t n = 0;
    for (auto& [name, t] : named_tensors()) n += t.numel();
    return n;
  }

  void zero_grad() const {
    for (auto& t : parameters()) t.node().grad.clear();
  }

  BasicModel clone() const {
    return map_tensors<T>([](const BasicTensor<T>& t) { return t.clone(); });
  }

  template <typename U>
  BasicModel<U> cast() const {
    return map_tensors<U>([](const BasicTensor<T>& t) { return t.template cast<U>(); });
  }

  // Same layout with every tensor replaced by fn(tensor).
  template <typename U, typename Fn>
  BasicModel<U> map_tensors(Fn fn) const {
    auto conv = [&](const BasicConvParams<T>& c) { return BasicConvParams<U>{fn(c.weight), fn(c.bias), c.stride, c.padding}; };
    auto convs = [&](const std::vector<BasicConvParams<T>>& v) {
      std::vector<BasicConvParams<U>> out;
      for (const auto& c : v) out.push_back(conv(c));
      return out;
    };
    BasicModel<U> m;
    m.config = config;
    m.head = conv(head);
    for (const auto& b : blocks) {
      BasicBlock<U> nb;
      nb.kind = b.kind;
      nb.refine = convs(b.refine);
      nb.distill = convs(b.distill);
      nb.fuse = conv(b.fuse);
      nb.esa = {conv(b.esa.reduce), conv(b.esa.skip), conv(b.esa.down), convs(b.esa.group), conv(b.esa.expand)};
      m.blocks.push_back(std::move(nb));
    }
    m.smooth = conv(smooth);
    m.tail = conv(tail);
    return m;
  }
};

using Model = BasicModel<float>;
using Block = BasicBlock<float>;
using Esa = BasicEsa<float>;
using BlockTrace = BasicBlockTrace<float>;

namespace detail {

template <typename T>
BasicConvParams<T> conv_layer(int c_in, int c_out, int k, int stride = 1, int padding = -1) {
  return {BasicTensor<T>::zeros(Shape{c_out, c_in, k, k}), BasicTensor<T>::zeros(Shape{1, c_out, 1, 1}), stride,
          padding < 0 ? (k - 1) / 2 : padding};
}

template <typename T>
BasicEsa<T> make_esa(int c, int f, int convs) {
  BasicEsa<T> e;
  e.reduce = conv_layer<T>(c, f, 1);
  e.skip = conv_layer<T>(f, f, 1);
  e.down = conv_layer<T>(f, f, 3, 2, 0);
  for (int i = 0; i < convs; ++i) e.group.push_back(conv_layer<T>(f, f, 3));
  e.expand = conv_layer<T>(f, c, 1);
  return e;
}

template <typename T>
BasicBlock<T> make_block(const ModelConfig& cfg) {
  const int c = cfg.channels;
  BasicBlock<T> b;
  b.kind = cfg.block_kind;
  for (int i = 0; i < 3; ++i) b.refine.push_back(conv_layer<T>(c, c, 3));
  if (cfg.block_kind == BlockKind::RFDB) {
    for (int i = 0; i < 4; ++i) b.distill.push_back(conv_layer<T>(c, c / 2, 1));
    b.fuse = conv_layer<T>(4 * (c / 2), c, 1);
  } else {
    b.fuse = conv_layer<T>(c, c, 1);
  }
  b.esa = make_esa<T>(c, cfg.esa_channels, cfg.esa_convs);
  return b;
}

}  // namespace detail

/// Fan-in uniform init: weights ~ U(-b, b), b = sqrt(1 / (c_in * k * k)); biases zero. Layers
/// draw from one seeded stream in registry order.
template <typename T>
void init_fan_in(std::vector<NamedConv<T>> layers, Rng& rng) {
  for (auto& [name, conv] : layers) {
    const Shape& s = conv->weight.shape();
    const double bound = std::sqrt(1.0 / (static_cast<double>(s.c) * s.h * s.w));
    for (T& v : conv->weight.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
    std::fill(conv->bias.mutable_data().begin(), conv->bias.mutable_data().end(), T(0));
  }
}

template <typename T = float>
BasicModel<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  BasicModel<T> m;
  m.config = config;
  const int c = config.channels;
  m.head = detail::conv_layer<T>(config.in_channels, c, 3);
  for (int i = 0; i < config.num_blocks; ++i) m.blocks.push_back(detail::make_block<T>(config));
  m.smooth = detail::conv_layer<T>(c, c, 3);
  m.tail = detail::conv_layer<T>(c, config.out_channels * config.scale * config.scale, 3);
  Rng rng(seed);
  init_fan_in(m.layers(), rng);
  for (auto& t : m.parameters()) t.set_requires_grad(true);
  return m;
}

// Smallest spatial side the ESA chain accepts: the strided conv must leave at least 7 rows for
// the 7x7 pool.
inline constexpr int kEsaMinSize = 15;

template <typename T>
BasicTensor<T> esa_forward(const BasicEsa<T>& esa, const BasicTensor<T>& x) {
  const Shape& s = x.shape();
  if (s.h < kEsaMinSize || s.w < kEsaMinSize) {
    throw ShapeError("esa: spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " is below the minimum " + std::to_string(kEsaMinSize) + "x" + std::to_string(kEsaMinSize) +
                     " required by the stride-2 conv and 7x7/3 max-pool");
  }
  if (s.c != esa.reduce.in_channels()) {
    throw ShapeError("esa: input channels (dim 1) = " + std::to_string(s.c) + " but block expects " +
                     std::to_string(esa.reduce.in_channels()));
  }
  BasicTensor<T> reduced = conv2d(x, esa.reduce);
  BasicTensor<T> g = maxpool2d(conv2d(reduced, esa.down), 7, 3);
  for (const auto& conv : esa.group) g = relu(conv2d(g, conv));
  g = upsample_bilinear(g, s.h, s.w);
  BasicTensor<T> gate = sigmoid(conv2d(add(g, conv2d(reduced, esa.skip)), esa.expand));
  return mul(x, gate);
}

template <typename T>
BasicTensor<T> block_forward(const BasicBlock<T>& b, const BasicTensor<T>& x, BasicBlockTrace<T>* trace = nullptr) {
  const int c = b.refine.front().in_channels();
  if (x.shape().c != c) {
    throw ShapeError("block: input channels (dim 1) = " + std::to_string(x.shape().c) + " but block expects " +
                     std::to_string(c));
  }
  BasicTensor<T> merged;
  switch (b.kind) {
    case BlockKind::RLFB: {
      BasicTensor<T> r = x;
      for (const auto& conv : b.refine) r = relu(conv2d(r, conv));
      merged = add(r, x);
      break;
    }
    case BlockKind::RFDB_R: {
      // Shallow residual blocks: relu(conv(x) + x).
      BasicTensor<T> r = x;
      for (const auto& conv : b.refine) r = relu(add(conv2d(r, conv), r));
      merged = r;
      break;
    }
    case BlockKind::RFDB: {
      std::vector<BasicTensor<T>> distilled;
      BasicTensor<T> r = x;
      for (std::size_t i = 0; i < b.distill.size(); ++i) {
        distilled.push_back(relu(conv2d(r, b.distill[i])));
        if (i < b.refine.size()) r = relu(add(conv2d(r, b.refine[i]), r));
      }
      merged = concat_channels(distilled);
      break;
    }
  }
  BasicTensor<T> fused = conv2d(merged, b.fuse);
  if (trace) *trace = {merged, fused};
  return esa_forward(b.esa, fused);
}

template <typename T>
BasicTensor<T> forward(const BasicModel<T>& m, const BasicTensor<T>& lr) {
  if (lr.shape().c != m.config.in_channels) {
    throw ShapeError("forward: input channels (dim 1) = " + std::to_string(lr.shape().c) + " but model expects " +
                     std::to_string(m.config.in_channels));
  }
  BasicTensor<T> f0 = conv2d(lr, m.head);
  BasicTensor<T> f = f0;
  for (const auto& b : m.blocks) f = block_forward(b, f);
  f = add(conv2d(f, m.smooth), f0);
  return pixel_shuffle(conv2d(f, m.tail), m.config.scale);
}

// Multiply-accumulate count of every convolution at LR input size h x w.
template <typename T>
CostReport count_macs(const BasicModel<T>& m, int h, int w) {
  CostReport r;
  auto add_layer = [&](const std::string& name, const BasicConvParams<T>& c, int ih, int iw) {
    const int oh = detail::conv_out_size(ih, c.kernel(), c.stride, c.padding);
    const int ow = detail::conv_out_size(iw, c.kernel(), c.stride, c.padding);
    const std::uint64_t macs = static_cast<std::uint64_t>(oh) * ow * c.out_channels() * c.in_channels() *
                               static_cast<std::uint64_t>(c.kernel() * c.kernel());
    r.layers.push_back({name, oh, ow, macs});
    r.macs += macs;
    return std::pair{oh, ow};
  };
  add_layer("head", m.head, h, w);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    const std::string p = "body." + std::to_string(i) + ".";
    const auto& b = m.blocks[i];
    for (std::size_t j = 0; j < b.refine.size(); ++j) add_layer(p + "refine." + std::to_string(j), b.refine[j], h, w);
    for (std::size_t j = 0; j < b.distill.size(); ++j) add_layer(p + "distill." + std::to_string(j), b.distill[j], h, w);
    add_layer(p + "fuse", b.fuse, h, w);
    add_layer(p + "esa.reduce", b.esa.reduce, h, w);
    add_layer(p + "esa.skip", b.esa.skip, h, w);
    auto [dh, dw] = add_layer(p + "esa.down", b.esa.down, h, w);
    const int ph = dh >= 7 ? (dh - 7) / 3 + 1 : 0;
    const int pw = dw >= 7 ? (dw - 7) / 3 + 1 : 0;
    for (std::size_t j = 0; j < b.esa.group.size(); ++j) add_layer(p + "esa.group." + std::to_string(j), b.esa.group[j], ph, pw);
    add_layer(p + "esa.expand", b.esa.expand, h, w);
  }
  add_layer("smooth", m.smooth, h, w);
  add_layer("tail", m.tail, h, w);
  return r;
}

// 2 x MACs over convolutions only.
template <typename T>
std::uint64_t count_flops(const BasicModel<T>& m, int h, int w) {
  return count_macs(m, h, w).flops();
}

}  // namespace rlfn
