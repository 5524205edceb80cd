#pragma once

#include <cstdint>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace rfe {

struct ExemplarEntry {
  Tensor x;
  int task = 0;
  std::int64_t label = 0;
  Tensor feature;  // representation in the entry's native domain, optional

  bool has_feature() const { return feature.defined(); }
};

enum class StorePolicy { SubsetPrevTask, ReservoirAllTasks };

// Reservoir primitive: n is the 1-based index of the item in the stream.
// Slots fill until capacity; afterwards the item replaces a uniform slot
// with probability capacity/n.
void reservoir_insert(std::vector<ExemplarEntry>& slots, std::size_t capacity, ExemplarEntry item,
                      std::uint64_t n, Rng& rng);

// Unified container behind the P-subset and B-buffer strategies. The subset
// policy holds samples of exactly one task (the previous one); the reservoir
// policy keeps a uniform sample of everything seen.
class ExemplarStore {
 public:
  ExemplarStore(StorePolicy policy, std::size_t capacity, std::uint64_t seed);

  // Reservoir policy: stream one item through, advancing the seen counter.
  void stream_insert(ExemplarEntry item);

  // Subset policy: drop everything and adopt the given entries.
  void replace_with(std::vector<ExemplarEntry> entries);

  const std::vector<ExemplarEntry>& entries() const { return entries_; }
  std::vector<ExemplarEntry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t seen() const { return seen_; }
  StorePolicy policy() const { return policy_; }

 private:
  StorePolicy policy_;
  std::size_t capacity_;
  std::uint64_t seen_ = 0;
  std::vector<ExemplarEntry> entries_;
  Rng rng_;
};

}  // namespace rfe
