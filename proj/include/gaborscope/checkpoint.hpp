#ifndef GABORSCOPE_CHECKPOINT_HPP
#define GABORSCOPE_CHECKPOINT_HPP

#include <map>
#include <string>

#include "gaborscope/network.hpp"
#include "gaborscope/stages.hpp"
#include "gaborscope/tensor.hpp"

namespace gaborscope {

// Flat name -> tensor table; the on-disk format stores exactly this plus a
// magic/version preamble. Metadata (front end, parameter counts) rides along
// as meta.* scalar entries so the format stays uniform.
struct NamedTensorMap {
  std::map<std::string, Tensor<float>> tensors;

  bool has(const std::string& name) const { return tensors.count(name) > 0; }
  void put_scalar(const std::string& name, float v) {
    Tensor<float> t({1});
    t.data[0] = v;
    tensors[name] = std::move(t);
  }
  float scalar(const std::string& name) const;
  const Tensor<float>& get(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const NamedTensorMap& map);
NamedTensorMap load_checkpoint(const std::string& path);

template <class T>
void pack_single(SingleEpochNet<T>& net, NamedTensorMap* map) {
  net.visit_params([map](Param<T>& p) { map->tensors[p.name] = p.value.template cast<float>(); });
  net.visit_buffers([map](const std::string& name, Tensor<T>& t) {
    map->tensors[name] = t.template cast<float>();
  });
  map->put_scalar("meta.front_end", front_end_name(net.front_end) == "gabor" ? 0.f : 1.f);
  map->put_scalar("meta.single_param_count", static_cast<float>(net.parameter_count()));
}

template <class T>
void pack_multi(MultiEpochNet<T>& net, NamedTensorMap* map) {
  net.visit_params([map](Param<T>& p) { map->tensors[p.name] = p.value.template cast<float>(); });
  map->put_scalar("meta.multi_param_count", static_cast<float>(net.parameter_count()));
}

namespace detail {

template <class T>
void restore_tensor(const NamedTensorMap& map, const std::string& name, Tensor<T>* dst) {
  const Tensor<float>& src = map.get(name);
  if (src.shape != dst->shape) {
    std::string want, have;
    for (int d : dst->shape) want += std::to_string(d) + " ";
    for (int d : src.shape) have += std::to_string(d) + " ";
    throw DataError("checkpoint tensor " + name + " has shape [ " + have + "], expected [ " +
                    want + "]");
  }
  *dst = src.template cast<T>();
}

}  // namespace detail

// The checkpoint's front end wins: the net is reshaped to match before
// tensors are restored. The stored parameter count guards against silent
// architecture drift between writer and reader builds.
template <class T>
void unpack_single(const NamedTensorMap& map, SingleEpochNet<T>* net) {
  const FrontEnd fe = map.scalar("meta.front_end") == 0.f ? FrontEnd::Gabor
                                                          : FrontEnd::PlainConv200;
  if (fe != net->front_end) *net = SingleEpochNet<T>(fe);
  net->visit_params([&map](Param<T>& p) {
    detail::restore_tensor(map, p.name, &p.value);
    p.grad = Tensor<T>(p.value.shape);
  });
  net->visit_buffers([&map](const std::string& name, Tensor<T>& t) {
    detail::restore_tensor(map, name, &t);
  });
  const long expected = static_cast<long>(map.scalar("meta.single_param_count"));
  if (net->parameter_count() != expected)
    throw DataError("checkpoint parameter count " + std::to_string(expected) +
                    " does not match this architecture (" +
                    std::to_string(net->parameter_count()) + ")");
}

template <class T>
void unpack_multi(const NamedTensorMap& map, MultiEpochNet<T>* net) {
  net->visit_params([&map](Param<T>& p) {
    detail::restore_tensor(map, p.name, &p.value);
    p.grad = Tensor<T>(p.value.shape);
  });
  const long expected = static_cast<long>(map.scalar("meta.multi_param_count"));
  if (net->parameter_count() != expected)
    throw DataError("checkpoint parameter count " + std::to_string(expected) +
                    " does not match this architecture (" +
                    std::to_string(net->parameter_count()) + ")");
}

inline bool checkpoint_has_multi(const NamedTensorMap& map) {
  return map.has("meta.multi_param_count");
}

}  // namespace gaborscope

#endif
