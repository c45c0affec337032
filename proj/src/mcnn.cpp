// SPDX-License-Identifier: Apache-2.0
#include "lmdf/mcnn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "lmdf/config.hpp"
#include "lmdf/errors.hpp"
#include "lmdf/patches.hpp"

namespace lmdf {
namespace {

std::string path_prefix(std::size_t slot, bool shared) {
  if (shared) {
    static const char* names[] = {"local", "part", "global"};
    return "mcnn/shared_" + std::string(names[slot]) + "/";
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "mcnn/path%02zu/", slot);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------

PathMask PathMask::all(std::size_t paths) { return PathMask{std::vector<bool>(paths, true)}; }

PathMask PathMask::parse(std::string_view text, std::size_t paths) {
  if (text == "all") return all(paths);
  if (text == "global" || text == "parts" || text == "locals") {
    if (paths != kPatchCount) {
      throw ValidationError("granularity masks need the standard " + std::to_string(kPatchCount) +
                            "-path layout");
    }
    const Granularity g = text == "global" ? Granularity::global
                          : text == "parts" ? Granularity::part
                                            : Granularity::local;
    PathMask m{std::vector<bool>(paths, false)};
    for (std::size_t i : PatchLayout::standard().indices_of(g)) m.active[i] = true;
    return m;
  }
  if (text.size() != paths || text.find_first_not_of("01") != std::string_view::npos) {
    throw ValidationError("path mask '" + std::string(text) + "' is neither a granularity name nor " +
                          std::to_string(paths) + " 0/1 flags");
  }
  PathMask m;
  for (char c : text) m.active.push_back(c == '1');
  return m;
}

std::string PathMask::to_string() const {
  std::string s;
  for (bool b : active) s.push_back(b ? '1' : '0');
  return s;
}

std::size_t PathMask::active_count() const {
  return static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
}

// ---------------------------------------------------------------------------

std::size_t MCNNConfig::path_dim() const {
  const std::size_t side = patch_size / 4;
  return side * side * channels3;
}

std::size_t MCNNConfig::fusion_input_dim() const { return mask.active_count() * path_dim(); }

std::size_t MCNNConfig::parameter_count() const {
  const std::size_t kk = std::size_t(kernel) * kernel;
  const std::size_t per_path = kk * 3 * channels1 + channels1 + kk * channels1 * channels2 +
                               channels2 + kk * channels2 * channels3 + channels3;
  const std::size_t sets = share_within_granularity ? 3 : path_count;
  const std::size_t n = representation_dim;
  return sets * per_path + n * fusion_input_dim() + n + 2 * n + 2;
}

void MCNNConfig::validate() const {
  if (path_count == 0) throw ValidationError("MCNN needs at least one path");
  if (patch_size == 0 || patch_size % 4) {
    throw ValidationError("patch size must be a positive multiple of 4, got " +
                          std::to_string(patch_size));
  }
  if (kernel % 2 == 0) throw ValidationError("kernel size must be odd");
  if (!channels1 || !channels2 || !channels3 || !representation_dim) {
    throw ValidationError("layer widths must be positive");
  }
  if (mask.active.size() != path_count) {
    throw ValidationError("path mask has " + std::to_string(mask.active.size()) + " flags for " +
                          std::to_string(path_count) + " paths");
  }
  if (mask.active_count() == 0) throw ValidationError("path mask disables every path");
  if (share_within_granularity && path_count != kPatchCount) {
    throw ValidationError("weight sharing needs the standard 15-path layout");
  }
}

KeyValues MCNNConfig::to_map() const {
  return {
      {"paths", std::to_string(path_count)},
      {"patch_size", std::to_string(patch_size)},
      {"kernel", std::to_string(kernel)},
      {"channels1", std::to_string(channels1)},
      {"channels2", std::to_string(channels2)},
      {"channels3", std::to_string(channels3)},
      {"representation_dim", std::to_string(representation_dim)},
      {"mask", mask.to_string()},
      {"share_within_granularity", share_within_granularity ? "1" : "0"},
      {"mcnn_seed", std::to_string(seed)},
  };
}

MCNNConfig MCNNConfig::from_map(const KeyValues& kv) {
  MCNNConfig c;
  c.path_count = get_u64(kv, "paths", c.path_count);
  c.patch_size = static_cast<std::uint32_t>(get_u64(kv, "patch_size", c.patch_size));
  c.kernel = static_cast<std::uint32_t>(get_u64(kv, "kernel", c.kernel));
  c.channels1 = static_cast<std::uint32_t>(get_u64(kv, "channels1", c.channels1));
  c.channels2 = static_cast<std::uint32_t>(get_u64(kv, "channels2", c.channels2));
  c.channels3 = static_cast<std::uint32_t>(get_u64(kv, "channels3", c.channels3));
  c.representation_dim = get_u64(kv, "representation_dim", c.representation_dim);
  auto it = kv.find("mask");
  c.mask = PathMask::parse(it == kv.end() ? "all" : it->second, c.path_count);
  c.share_within_granularity = get_bool(kv, "share_within_granularity", false);
  c.seed = get_u64(kv, "mcnn_seed", c.seed);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

template <typename T>
void init_uniform(BasicTensor<T>& t, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
std::vector<BasicTensor<T>> to_precision(std::span<const Tensor> patches) {
  std::vector<BasicTensor<T>> out;
  out.reserve(patches.size());
  for (const auto& p : patches) out.push_back(p.template cast<T>());
  return out;
}

template <typename T>
MCNN<T>::MCNN(const MCNNConfig& config) : config_(config) {
  config_.validate();
  const std::size_t k = config_.kernel;
  const std::size_t c1 = config_.channels1, c2 = config_.channels2, c3 = config_.channels3;
  const std::size_t n = config_.representation_dim;

  slot_.resize(config_.path_count);
  if (config_.share_within_granularity) {
    const auto& layout = PatchLayout::standard();
    for (std::size_t p = 0; p < slot_.size(); ++p) {
      slot_[p] = static_cast<std::size_t>(layout.specs[p].granularity);
    }
    slots_.resize(3);
  } else {
    for (std::size_t p = 0; p < slot_.size(); ++p) slot_[p] = p;
    slots_.resize(config_.path_count);
  }

  std::mt19937_64 rng(config_.seed);
  for (std::size_t s = 0; s < slots_.size(); ++s) {
    const std::string pre = path_prefix(s, config_.share_within_granularity);
    auto& ps = slots_[s];
    ps.kernel1 = ParamTensor<T>(pre + "conv1/kernel", {k, k, 3, c1});
    ps.bias1 = ParamTensor<T>(pre + "conv1/bias", {c1});
    ps.kernel2 = ParamTensor<T>(pre + "conv2/kernel", {k, k, c1, c2});
    ps.bias2 = ParamTensor<T>(pre + "conv2/bias", {c2});
    ps.kernel3 = ParamTensor<T>(pre + "conv3/kernel", {k, k, c2, c3});
    ps.bias3 = ParamTensor<T>(pre + "conv3/bias", {c3});
    init_uniform(ps.kernel1.value, k * k * 3, k * k * c1, rng);
    init_uniform(ps.kernel2.value, k * k * c1, k * k * c2, rng);
    init_uniform(ps.kernel3.value, k * k * c2, k * k * c3, rng);
  }
  const std::size_t d = config_.fusion_input_dim();
  fusion_w = ParamTensor<T>("mcnn/fusion/weights", {n, d});
  fusion_b = ParamTensor<T>("mcnn/fusion/bias", {n});
  head_w = ParamTensor<T>("mcnn/head/weights", {2, n});
  head_b = ParamTensor<T>("mcnn/head/bias", {2});
  init_uniform(fusion_w.value, d, n, rng);
  init_uniform(head_w.value, n, 2, rng);
}

template <typename T>
BasicTensor<T> MCNN<T>::path_forward(std::size_t path, const BasicTensor<T>& patch,
                                     PathCache<T>* cache) const {
  if (path >= config_.path_count) throw ShapeError("path index out of range");
  const std::size_t u = config_.patch_size;
  require_shape(patch.shape(), {u, u, 3}, "MCNN patch " + std::to_string(path));
  const auto& ps = slots_[slot_[path]];

  BasicTensor<T> pre1 = conv2d(patch, ps.kernel1.value, ps.bias1.value);
  PoolResult<T> p1 = maxpool2(relu(pre1));
  BasicTensor<T> pre2 = conv2d(p1.output, ps.kernel2.value, ps.bias2.value);
  BasicTensor<T> act2 = relu(pre2);
  BasicTensor<T> pre3 = conv2d(act2, ps.kernel3.value, ps.bias3.value);
  PoolResult<T> p3 = maxpool2(relu(pre3));
  BasicTensor<T> out = p3.output.reshaped({p3.output.size()});
  if (cache) {
    cache->input = patch;
    cache->pre1 = std::move(pre1);
    cache->pool1 = std::move(p1.argmax);
    cache->pooled1 = std::move(p1.output);
    cache->pre2 = std::move(pre2);
    cache->act2 = std::move(act2);
    cache->pre3 = std::move(pre3);
    cache->pool3 = std::move(p3.argmax);
  }
  return out;
}

template <typename T>
BasicTensor<T> MCNN<T>::concat(std::span<const BasicTensor<T>> path_outputs) const {
  const std::size_t active = config_.mask.active_count();
  if (path_outputs.size() != active) {
    throw ShapeError("fusion expects " + std::to_string(active) + " path outputs, got " +
                     std::to_string(path_outputs.size()));
  }
  const std::size_t dim = config_.path_dim();
  BasicTensor<T> out({active * dim});
  for (std::size_t i = 0; i < active; ++i) {
    if (path_outputs[i].size() != dim) {
      throw ShapeError("path output " + std::to_string(i) + " has " +
                       std::to_string(path_outputs[i].size()) + " values, expected " +
                       std::to_string(dim));
    }
    std::copy(path_outputs[i].data().begin(), path_outputs[i].data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  return out;
}

template <typename T>
BasicTensor<T> MCNN<T>::fuse(const BasicTensor<T>& concatenated, BasicTensor<T>* pre_activation) const {
  BasicTensor<T> pre = affine(concatenated, fusion_w.value, fusion_b.value);
  BasicTensor<T> rep = relu(pre);
  if (pre_activation) *pre_activation = std::move(pre);
  return rep;
}

template <typename T>
BasicTensor<T> MCNN<T>::head_logits(const BasicTensor<T>& representation) const {
  return affine(representation, head_w.value, head_b.value);
}

template <typename T>
MCNNOutput<T> MCNN<T>::forward(std::span<const BasicTensor<T>> patches, MCNNCache<T>* cache) const {
  if (patches.size() != config_.path_count) {
    throw ShapeError("MCNN expects " + std::to_string(config_.path_count) + " patches, got " +
                     std::to_string(patches.size()));
  }
  std::vector<BasicTensor<T>> outputs;
  outputs.reserve(config_.mask.active_count());
  if (cache) {
    cache->paths.assign(config_.path_count, PathCache<T>{});
  }
  for (std::size_t p = 0; p < config_.path_count; ++p) {
    if (!config_.mask.active[p]) continue;
    outputs.push_back(path_forward(p, patches[p], cache ? &cache->paths[p] : nullptr));
  }
  MCNNOutput<T> out;
  BasicTensor<T> cat = concat(outputs);
  BasicTensor<T> pre;
  out.representation = fuse(cat, &pre);
  BasicTensor<T> logits = head_logits(out.representation);
  out.probs = softmax(logits);
  out.predicted = argmax<T>(out.probs.data());
  if (cache) {
    cache->concat = std::move(cat);
    cache->fused_pre = std::move(pre);
    cache->representation = out.representation;
    cache->logits = std::move(logits);
  }
  return out;
}

template <typename T>
void MCNN<T>::path_backward(std::size_t path, const PathCache<T>& c, const BasicTensor<T>& upstream) {
  auto& ps = slots_[slot_[path]];
  BasicTensor<T> g3 = maxpool2_backward<T>(c.pre3.shape(), c.pool3,
                                           upstream.reshaped({c.pre3.dim(0) / 2, c.pre3.dim(1) / 2,
                                                              c.pre3.dim(2)}));
  g3 = relu_backward(c.pre3, g3);
  BasicTensor<T> g_act2(c.act2.shape());
  conv2d_backward_accumulate(c.act2, ps.kernel3.value, g3, &g_act2, ps.kernel3.grad, &ps.bias3.grad);
  BasicTensor<T> g2 = relu_backward(c.pre2, g_act2);
  BasicTensor<T> g_pooled1(c.pooled1.shape());
  conv2d_backward_accumulate(c.pooled1, ps.kernel2.value, g2, &g_pooled1, ps.kernel2.grad,
                             &ps.bias2.grad);
  BasicTensor<T> g1 = maxpool2_backward<T>(c.pre1.shape(), c.pool1, g_pooled1);
  g1 = relu_backward(c.pre1, g1);
  conv2d_backward_accumulate<T>(c.input, ps.kernel1.value, g1, nullptr, ps.kernel1.grad,
                                &ps.bias1.grad);
}

template <typename T>
double MCNN<T>::backward(const MCNNCache<T>& cache, std::size_t target, double scale) {
  if (target > 1) throw ValidationError("MCNN target must be 0 or 1");
  SoftmaxXent<T> x = softmax_xent(cache.logits, one_hot<T>(target, 2));
  BasicTensor<T> g_logits = x.grad_logits;
  for (auto& v : g_logits.data()) v = static_cast<T>(double(v) * scale);

  BasicTensor<T> g_rep(cache.representation.shape());
  affine_backward_accumulate(cache.representation, head_w.value, g_logits, &g_rep, head_w.grad,
                             head_b.grad);
  backward_representation(cache, g_rep);
  return x.loss;
}

template <typename T>
void MCNN<T>::backward_representation(const MCNNCache<T>& cache, const BasicTensor<T>& g_rep) {
  if (g_rep.shape() != cache.representation.shape()) {
    throw ShapeError("representation gradient " + shape_to_string(g_rep.shape()) + " does not match " +
                     shape_to_string(cache.representation.shape()));
  }
  BasicTensor<T> g_pre = relu_backward(cache.fused_pre, g_rep);
  BasicTensor<T> g_cat(cache.concat.shape());
  affine_backward_accumulate(cache.concat, fusion_w.value, g_pre, &g_cat, fusion_w.grad,
                             fusion_b.grad);

  const std::size_t dim = config_.path_dim();
  std::size_t slice = 0;
  for (std::size_t p = 0; p < config_.path_count; ++p) {
    if (!config_.mask.active[p]) continue;
    BasicTensor<T> g({dim});
    std::copy_n(g_cat.data().begin() + static_cast<std::ptrdiff_t>(slice * dim), dim, g.data().begin());
    path_backward(p, cache.paths[p], g);
    ++slice;
  }
}

template <typename T>
std::vector<ParamTensor<T>*> MCNN<T>::parameters() {
  std::vector<ParamTensor<T>*> out;
  for (auto& ps : slots_) {
    for (auto* p : {&ps.kernel1, &ps.bias1, &ps.kernel2, &ps.bias2, &ps.kernel3, &ps.bias3}) {
      out.push_back(p);
    }
  }
  for (auto* p : {&fusion_w, &fusion_b, &head_w, &head_b}) out.push_back(p);
  return out;
}

template <typename T>
std::vector<const ParamTensor<T>*> MCNN<T>::parameters() const {
  auto mut = const_cast<MCNN*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename T>
void MCNN<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
void MCNN<T>::adam_step(double lr, const AdamConfig& adam) {
  for (std::size_t s = 0; s < slots_.size(); ++s) {
    // Masked paths never receive gradient; leave their optimiser state alone.
    bool used = false;
    for (std::size_t p = 0; p < slot_.size(); ++p) used |= slot_[p] == s && config_.mask.active[p];
    if (!used) continue;
    auto& ps = slots_[s];
    for (auto* p : {&ps.kernel1, &ps.bias1, &ps.kernel2, &ps.bias2, &ps.kernel3, &ps.bias3}) {
      lmdf::adam_step(*p, lr, adam);
    }
  }
  for (auto* p : {&fusion_w, &fusion_b, &head_w, &head_b}) lmdf::adam_step(*p, lr, adam);
}

template <typename T>
std::vector<NamedTensor> MCNN<T>::to_named() const {
  std::vector<NamedTensor> out;
  for (const auto* p : parameters()) out.push_back({p->name, p->value.template cast<float>()});
  return out;
}

template <typename T>
void MCNN<T>::load_named(std::span<const NamedTensor> tensors) {
  for (auto* p : parameters()) {
    p->reset(find_tensor(tensors, p->name, p->shape()).template cast<T>());
  }
}

#define LMDF_INSTANTIATE(T)                                                                      \
  template class MCNN<T>;                                                                        \
  template void init_uniform<T>(BasicTensor<T>&, std::size_t, std::size_t, std::mt19937_64&);    \
  template std::vector<BasicTensor<T>> to_precision<T>(std::span<const Tensor>);

LMDF_INSTANTIATE(float)
LMDF_INSTANTIATE(double)
#undef LMDF_INSTANTIATE

}  // namespace lmdf
