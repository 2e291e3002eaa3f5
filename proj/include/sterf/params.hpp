#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "sterf/errors.hpp"

namespace sterf {

// Named weight tensor of arbitrary rank (conv kernels are 4-D, linear maps
// 2-D, BN affine 1-D). Row-major flat storage.
struct ParamTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }
};

// Immutable-after-build collection of network weights. Tapes reference it
// read-only, so concurrent forward/backward passes over distinct tapes can
// share one store.
class ParamStore {
 public:
  int add(std::string name, std::vector<std::size_t> shape,
          std::vector<double> data) {
    ParamTensor p{std::move(name), std::move(shape), std::move(data)};
    if (p.data.size() != p.numel())
      throw ShapeError("ParamStore: data size mismatch for '" + p.name + "'");
    if (index_.count(p.name))
      throw ConfigError("ParamStore: duplicate parameter name '" + p.name + "'");
    index_[p.name] = static_cast<int>(entries_.size());
    entries_.push_back(std::move(p));
    return static_cast<int>(entries_.size()) - 1;
  }

  const ParamTensor& at(int id) const { return entries_.at(static_cast<std::size_t>(id)); }
  ParamTensor& at(int id) { return entries_.at(static_cast<std::size_t>(id)); }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<ParamTensor>& entries() const { return entries_; }
  std::vector<ParamTensor>& entries() { return entries_; }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& p : entries_) n += p.numel();
    return n;
  }

 private:
  std::vector<ParamTensor> entries_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace sterf
