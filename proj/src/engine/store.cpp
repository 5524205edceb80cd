#include "engine/store.hpp"

#include "core/error.hpp"

namespace rfe {

void reservoir_insert(std::vector<ExemplarEntry>& slots, std::size_t capacity, ExemplarEntry item,
                      std::uint64_t n, Rng& rng) {
  if (capacity == 0) return;
  if (slots.size() < capacity) {
    slots.push_back(std::move(item));
    return;
  }
  // j < capacity with probability capacity/n, uniform over slots.
  std::size_t j = rng.index(static_cast<std::size_t>(n));
  if (j < capacity) slots[j] = std::move(item);
}

ExemplarStore::ExemplarStore(StorePolicy policy, std::size_t capacity, std::uint64_t seed)
    : policy_(policy), capacity_(capacity), rng_(seed) {}

void ExemplarStore::stream_insert(ExemplarEntry item) {
  if (policy_ != StorePolicy::ReservoirAllTasks) {
    throw InvalidArgument("stream_insert requires the reservoir policy");
  }
  ++seen_;
  reservoir_insert(entries_, capacity_, std::move(item), seen_, rng_);
}

void ExemplarStore::replace_with(std::vector<ExemplarEntry> entries) {
  if (entries.size() > capacity_) {
    throw InvalidArgument("store of capacity " + std::to_string(capacity_) + " cannot hold " +
                          std::to_string(entries.size()) + " entries");
  }
  entries_ = std::move(entries);
}

}  // namespace rfe
