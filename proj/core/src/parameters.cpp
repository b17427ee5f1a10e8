#include "kiwiqe/parameters.hpp"

#include "kiwiqe/errors.hpp"

namespace kiwiqe {

void ParameterSet::set(std::string name, Tensor value) {
  tensors_.insert_or_assign(std::move(name), std::move(value));
}

bool ParameterSet::contains(std::string_view name) const { return tensors_.contains(name); }

const Tensor& ParameterSet::at(std::string_view name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

Tensor& ParameterSet::at(std::string_view name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

std::size_t ParameterSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.size();
  return n;
}

Binding::Binding(ad::Tape& tape, const ParameterSet& params, bool requires_grad) : tape_(&tape) {
  for (const auto& [name, value] : params) vars_.emplace(name, tape.leaf(value, requires_grad));
}

ad::Var Binding::operator[](std::string_view name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("parameter '" + std::string(name) + "' not bound");
  return it->second;
}

ParameterSet Binding::gradients() const {
  ParameterSet out;
  for (const auto& [name, var] : vars_) out.set(name, tape_->grad(var));
  return out;
}

}  // namespace kiwiqe
