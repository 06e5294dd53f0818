#include "rla/param_store.hpp"

#include "rla/error.hpp"

namespace rla {

bool is_learnable(ParamRole role) {
  return role != ParamRole::running_mean && role != ParamRole::running_var;
}

bool is_decayed(ParamRole role) {
  return role == ParamRole::conv_weight || role == ParamRole::linear_weight;
}

const char* to_string(ParamRole role) {
  switch (role) {
    case ParamRole::conv_weight: return "conv_weight";
    case ParamRole::linear_weight: return "linear_weight";
    case ParamRole::bias: return "bias";
    case ParamRole::bn_scale: return "bn_scale";
    case ParamRole::bn_shift: return "bn_shift";
    case ParamRole::running_mean: return "running_mean";
    case ParamRole::running_var: return "running_var";
  }
  return "?";
}

template <typename T>
ParamId ParamStore<T>::create(const std::string& name, Tensor<T> init, ParamRole role) {
  if (contains(name)) throw ValueError("duplicate parameter name '" + name + "'");
  const auto g = static_cast<std::int32_t>(groups_.size());
  groups_.push_back(Group{std::move(init), role});
  const auto id = static_cast<std::int32_t>(entries_.size());
  entries_.push_back(Entry{name, g});
  by_name_[name] = id;
  return ParamId{id};
}

template <typename T>
ParamId ParamStore<T>::alias(const std::string& name, ParamId target) {
  if (contains(name)) throw ValueError("duplicate parameter name '" + name + "'");
  const auto g = group_of(target);
  const auto id = static_cast<std::int32_t>(entries_.size());
  entries_.push_back(Entry{name, g});
  by_name_[name] = id;
  return ParamId{id};
}

template <typename T>
void ParamStore<T>::split(const std::string& name) {
  const ParamId id = find(name);
  auto& entry = entries_[static_cast<std::size_t>(id.index)];
  const Group copy = groups_[static_cast<std::size_t>(entry.group)];
  entry.group = static_cast<std::int32_t>(groups_.size());
  groups_.push_back(copy);
}

template <typename T>
ParamId ParamStore<T>::find(const std::string& name) const {
  const auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ValueError("unknown parameter '" + name + "'");
  return ParamId{it->second};
}

template <typename T>
std::int32_t ParamStore<T>::group_of(ParamId id) const {
  if (id.index < 0 || static_cast<std::size_t>(id.index) >= entries_.size()) {
    throw ValueError("invalid parameter id " + std::to_string(id.index));
  }
  return entries_[static_cast<std::size_t>(id.index)].group;
}

template <typename T>
Tensor<T>& ParamStore<T>::tensor(ParamId id) {
  return groups_[static_cast<std::size_t>(group_of(id))].tensor;
}

template <typename T>
const Tensor<T>& ParamStore<T>::tensor(ParamId id) const {
  return groups_[static_cast<std::size_t>(group_of(id))].tensor;
}

template <typename T>
ParamRole ParamStore<T>::role(ParamId id) const {
  return groups_[static_cast<std::size_t>(group_of(id))].role;
}

template <typename T>
const std::string& ParamStore<T>::name(ParamId id) const {
  group_of(id);
  return entries_[static_cast<std::size_t>(id.index)].name;
}

template <typename T>
std::vector<std::string> ParamStore<T>::members(std::int32_t g) const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (e.group == g) out.push_back(e.name);
  }
  return out;
}

template <typename T>
std::int64_t ParamStore<T>::learnable_count() const {
  std::int64_t total = 0;
  for (const auto& g : groups_) {
    if (is_learnable(g.role)) total += g.tensor.numel();
  }
  return total;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& g : groups_) g.tensor.zero_grad();
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace rla
