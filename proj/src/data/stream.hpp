#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace rfe {

// One task's data: train/validation/test splits plus the global class ids it
// owns. Labels are global; local_class maps them onto head units.
struct TaskDataset {
  int task_id = 0;  // 1-based
  std::vector<Tensor> train_x;
  std::vector<std::int64_t> train_y;
  std::vector<Tensor> val_x;
  std::vector<std::int64_t> val_y;
  std::vector<Tensor> test_x;
  std::vector<std::int64_t> test_y;
  std::vector<std::int64_t> classes;  // sorted, disjoint across tasks

  std::size_t num_classes() const { return classes.size(); }
  std::size_t local_class(std::int64_t global_label) const;
};

struct TaskStream {
  std::vector<TaskDataset> tasks;
  Shape input_shape;

  int num_tasks() const { return static_cast<int>(tasks.size()); }
  const TaskDataset& task(int t) const;  // 1-based
  std::size_t total_classes() const;
  // Offset of task t's class block in the global class vector.
  std::size_t class_offset(int t) const;
  // Global slot index of a label (offset of its task + local index).
  std::size_t global_slot(std::int64_t label) const;
  std::int64_t label_of_slot(std::size_t slot) const;
};

struct BlobStreamConfig {
  int n_tasks = 5;
  int classes_per_task = 2;
  std::size_t dim = 20;
  std::size_t samples_per_class = 200;  // train+validation pool
  std::size_t test_per_class = 50;
  double separation = 6.0;  // class means sampled on a sphere of this radius
  double noise = 1.0;       // isotropic within-class standard deviation
  double drift = 0.5;       // per-task rotation angle and shift factor
};

// Synthetic class-incremental stream. Class means live on a common sphere;
// each later task's inputs pass through an extra application of a fixed
// random rotation plus a shift proportional to drift, so the input
// statistics move between tasks and the extractor is forced to drift.
TaskStream make_blob_stream(const BlobStreamConfig& cfg, std::uint64_t seed);

// Loads an RFED1 container and partitions its classes into n_tasks
// contiguous blocks by sorted class id. File order is preserved; the last
// tenth of each task's train block becomes the validation split.
TaskStream split_labeled_file(const std::string& path, int n_tasks, std::uint64_t seed);

// Writes a stream as RFED1: magic, header (sample count, input rank,
// extents, class count; u64 LE), then per sample: label u64, split flag u8
// (0=train, 1=test), values f64 LE. Train and validation are written as
// flag 0, train first, so a reload reproduces the stream bit for bit.
void write_stream(const std::string& path, const TaskStream& stream);

// Per-feature standardization, fit once on task-1 train data and then
// frozen; later tasks are transformed with the same statistics.
struct Standardizer {
  Tensor mean;
  Tensor stddev;

  static Standardizer fit(const std::vector<Tensor>& samples);
  void apply(Tensor& x) const;
  void apply_in_place(TaskStream& stream) const;
};

}  // namespace rfe
