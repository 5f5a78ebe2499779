#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "mfblue/errors.hpp"

namespace mfblue {

/// Model index convention: 0 is the high-fidelity model, 1..n are the
/// low-fidelity surrogates.
using ModelIndex = int;

/// An ordered set of model indices, kept sorted ascending so that matrix
/// layouts, hashing, and argmin tie-breaking are deterministic.
class ModelSubset {
 public:
  ModelSubset() = default;

  ModelSubset(std::initializer_list<ModelIndex> indices)
      : ModelSubset(std::vector<ModelIndex>(indices)) {}

  explicit ModelSubset(std::vector<ModelIndex> indices) : members_(std::move(indices)) {
    std::sort(members_.begin(), members_.end());
    members_.erase(std::unique(members_.begin(), members_.end()), members_.end());
    if (!members_.empty() && members_.front() < 0)
      throw OutOfDomain("model indices must be nonnegative");
  }

  /// The contiguous set {lo, lo+1, ..., hi}.
  static ModelSubset range(ModelIndex lo, ModelIndex hi) {
    std::vector<ModelIndex> v;
    for (ModelIndex i = lo; i <= hi; ++i) v.push_back(i);
    return ModelSubset(std::move(v));
  }

  int size() const { return static_cast<int>(members_.size()); }
  bool empty() const { return members_.empty(); }

  ModelIndex operator[](int i) const { return members_[static_cast<std::size_t>(i)]; }

  bool contains(ModelIndex i) const {
    return std::binary_search(members_.begin(), members_.end(), i);
  }

  bool is_subset_of(const ModelSubset& other) const {
    return std::includes(other.members_.begin(), other.members_.end(), members_.begin(),
                         members_.end());
  }

  /// Position of index i within this subset's canonical order.
  int position_of(ModelIndex i) const {
    auto it = std::lower_bound(members_.begin(), members_.end(), i);
    if (it == members_.end() || *it != i)
      throw NotASubset("index " + std::to_string(i) + " not in subset " + to_string());
    return static_cast<int>(it - members_.begin());
  }

  ModelSubset unioned(const ModelSubset& other) const {
    std::vector<ModelIndex> v;
    std::set_union(members_.begin(), members_.end(), other.members_.begin(),
                   other.members_.end(), std::back_inserter(v));
    ModelSubset out;
    out.members_ = std::move(v);
    return out;
  }

  ModelIndex max_index() const {
    if (members_.empty()) throw OutOfDomain("empty subset has no max index");
    return members_.back();
  }

  const std::vector<ModelIndex>& members() const { return members_; }

  auto begin() const { return members_.begin(); }
  auto end() const { return members_.end(); }

  bool operator==(const ModelSubset& other) const { return members_ == other.members_; }
  bool operator!=(const ModelSubset& other) const { return members_ != other.members_; }

  /// Lexicographic order on the sorted member lists.
  bool operator<(const ModelSubset& other) const { return members_ < other.members_; }

  std::string to_string() const {
    std::ostringstream os;
    os << '{';
    for (std::size_t i = 0; i < members_.size(); ++i) {
      if (i) os << ',';
      os << members_[i];
    }
    os << '}';
    return os.str();
  }

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (ModelIndex i : members_) {
      h ^= static_cast<std::uint64_t>(i) + 1;
      h *= 0x100000001b3ull;
    }
    return h;
  }

 private:
  std::vector<ModelIndex> members_;
};

/// Size-then-lexicographic order; the canonical enumeration and
/// tie-breaking order throughout the library.
struct SubsetSizeLexLess {
  bool operator()(const ModelSubset& a, const ModelSubset& b) const {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
  }
};

struct ModelSubsetHash {
  std::size_t operator()(const ModelSubset& s) const { return static_cast<std::size_t>(s.hash()); }
};

/// Selection matrix R with R * v_universe = v_target, one 1 per row.
inline Eigen::MatrixXd restriction_matrix(const ModelSubset& universe,
                                          const ModelSubset& target) {
  if (!target.is_subset_of(universe))
    throw NotASubset("target " + target.to_string() + " is not a subset of universe " +
                     universe.to_string());
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(target.size(), universe.size());
  for (int row = 0; row < target.size(); ++row)
    r(row, universe.position_of(target[row])) = 1.0;
  return r;
}

/// All nonempty subsets of {1..n} with at most max_size elements,
/// ordered by size then lexicographically.
inline std::vector<ModelSubset> enumerate_subsets(int n, int max_size) {
  if (n < 1 || max_size < 1 || max_size > n)
    throw OutOfDomain("enumerate_subsets requires 1 <= max_size <= n");
  std::vector<ModelSubset> out;
  std::vector<ModelIndex> current;
  // Depth-first enumeration emits each size class in lexicographic order.
  auto emit_size = [&](auto&& self, int target_size, ModelIndex next) -> void {
    if (static_cast<int>(current.size()) == target_size) {
      out.emplace_back(current);
      return;
    }
    for (ModelIndex i = next; i <= n; ++i) {
      current.push_back(i);
      self(self, target_size, i + 1);
      current.pop_back();
    }
  };
  for (int size = 1; size <= max_size; ++size) emit_size(emit_size, size, 1);
  return out;
}

}  // namespace mfblue
