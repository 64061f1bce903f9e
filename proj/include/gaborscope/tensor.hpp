#ifndef GABORSCOPE_TENSOR_HPP
#define GABORSCOPE_TENSOR_HPP

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

namespace gaborscope {

// Dense row-major tensor. The networks only ever need 1-D and 2-D shapes
// (LSTM weights are stored as 2-D, conv weights as [out, in * k]), so this
// stays deliberately small: shape + flat storage + a couple of helpers.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(count(shape), T(0)) {}
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    assert(static_cast<std::int64_t>(data.size()) == count(shape));
  }

  static std::int64_t count(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  // 2-D accessors; row-major.
  T& at(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  const T& at(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

  T* row(int r) { return data.data() + static_cast<std::size_t>(r) * shape[1]; }
  const T* row(int r) const { return data.data() + static_cast<std::size_t>(r) * shape[1]; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

}  // namespace gaborscope

#endif
