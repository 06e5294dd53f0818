#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rla/tensor.hpp"

namespace rla {

// What a stored buffer is used for; drives weight decay and accounting.
enum class ParamRole {
  conv_weight,
  linear_weight,
  bias,
  bn_scale,
  bn_shift,
  running_mean,  // state, not learnable
  running_var,   // state, not learnable
};

bool is_learnable(ParamRole role);
bool is_decayed(ParamRole role);
const char* to_string(ParamRole role);

// Handle to a named entry. Several entries may alias one buffer.
struct ParamId {
  std::int32_t index = -1;
  bool valid() const { return index >= 0; }
  friend bool operator==(ParamId, ParamId) = default;
};

// Named parameters and state buffers. Every entry belongs to a share group;
// all entries of a group alias the same tensor (value and gradient), so a
// group used at several graph sites accumulates the sum of the site
// gradients.
template <typename T>
class ParamStore {
 public:
  struct Group {
    Tensor<T> tensor;
    ParamRole role;
  };

  ParamId create(const std::string& name, Tensor<T> init, ParamRole role);
  // Adds `name` as another member of `target`'s share group.
  ParamId alias(const std::string& name, ParamId target);
  // Moves `name` out of its share group into a private copy of the buffer.
  void split(const std::string& name);

  ParamId find(const std::string& name) const;
  bool contains(const std::string& name) const { return by_name_.count(name) != 0; }

  Tensor<T>& tensor(ParamId id);
  const Tensor<T>& tensor(ParamId id) const;
  ParamRole role(ParamId id) const;
  std::int32_t group_of(ParamId id) const;
  const std::string& name(ParamId id) const;

  std::size_t entry_count() const { return entries_.size(); }
  std::size_t group_count() const { return groups_.size(); }
  const Group& group(std::int32_t g) const { return groups_.at(static_cast<std::size_t>(g)); }
  Group& group(std::int32_t g) { return groups_.at(static_cast<std::size_t>(g)); }
  // Entry names belonging to a group, in creation order.
  std::vector<std::string> members(std::int32_t g) const;

  // Learnable scalars, each share group counted once.
  std::int64_t learnable_count() const;

  void zero_grad();

 private:
  struct Entry {
    std::string name;
    std::int32_t group;
  };

  std::vector<Entry> entries_;
  std::vector<Group> groups_;
  std::map<std::string, std::int32_t> by_name_;
};

}  // namespace rla
