#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "kiwiqe/autodiff.hpp"
#include "kiwiqe/tensor.hpp"

namespace kiwiqe {

// Named model tensors, iterated in lexicographic name order.
class ParameterSet {
 public:
  using Map = std::map<std::string, Tensor, std::less<>>;

  void set(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  std::size_t num_tensors() const { return tensors_.size(); }
  std::size_t num_scalars() const;

  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }
  Map::iterator begin() { return tensors_.begin(); }
  Map::iterator end() { return tensors_.end(); }

  bool operator==(const ParameterSet&) const = default;

 private:
  Map tensors_;
};

// A ParameterSet placed on a tape as leaves.
class Binding {
 public:
  Binding(ad::Tape& tape, const ParameterSet& params, bool requires_grad);

  ad::Var operator[](std::string_view name) const;
  ad::Tape& tape() const { return *tape_; }

  // Gradient for every bound tensor (zeros where backward did not reach).
  ParameterSet gradients() const;

 private:
  ad::Tape* tape_;
  std::map<std::string, ad::Var, std::less<>> vars_;
};

}  // namespace kiwiqe
