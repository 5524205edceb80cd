#include <cmath>
#include <filesystem>
#include <fstream>

#include "data/stream.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace rfe;

namespace {

BlobStreamConfig small_blob() {
  BlobStreamConfig cfg;
  cfg.n_tasks = 5;
  cfg.classes_per_task = 2;
  cfg.dim = 12;
  cfg.samples_per_class = 30;
  cfg.test_per_class = 8;
  cfg.separation = 6.0;
  cfg.noise = 1.0;
  cfg.drift = 0.5;
  return cfg;
}

bool streams_identical(const TaskStream& a, const TaskStream& b) {
  if (a.input_shape != b.input_shape || a.tasks.size() != b.tasks.size()) return false;
  for (std::size_t t = 0; t < a.tasks.size(); ++t) {
    const TaskDataset &ta = a.tasks[t], &tb = b.tasks[t];
    if (ta.classes != tb.classes || ta.train_y != tb.train_y || ta.val_y != tb.val_y ||
        ta.test_y != tb.test_y) {
      return false;
    }
    auto same = [](const std::vector<Tensor>& u, const std::vector<Tensor>& v) {
      if (u.size() != v.size()) return false;
      for (std::size_t i = 0; i < u.size(); ++i) {
        if (u[i].shape != v[i].shape || u[i].data != v[i].data) return false;
      }
      return true;
    };
    if (!same(ta.train_x, tb.train_x) || !same(ta.val_x, tb.val_x) ||
        !same(ta.test_x, tb.test_x)) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("blob stream structure: disjoint contiguous classes and 90/10 split") {
  TaskStream s = make_blob_stream(small_blob(), 42);
  REQUIRE(s.num_tasks() == 5);
  CHECK(s.total_classes() == 10);
  CHECK(s.input_shape == Shape{12});
  std::vector<std::int64_t> seen;
  for (const TaskDataset& t : s.tasks) {
    CHECK(t.num_classes() == 2);
    for (std::int64_t c : t.classes) seen.push_back(c);
    // 60-sample pool per task: 54 train, 6 validation
    CHECK(t.train_x.size() == 54);
    CHECK(t.val_x.size() == 6);
    CHECK(t.test_x.size() == 16);
    for (std::int64_t y : t.train_y) CHECK(t.local_class(y) < 2);
  }
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < seen.size(); ++i) CHECK(seen[i] == static_cast<std::int64_t>(i));

  CHECK(s.global_slot(7) == 7);
  CHECK(s.label_of_slot(3) == 3);
  CHECK_THROWS_AS(s.global_slot(10), InvalidArgument);
}

TEST_CASE("blob stream is a pure function of its seed") {
  TaskStream a = make_blob_stream(small_blob(), 9);
  TaskStream b = make_blob_stream(small_blob(), 9);
  TaskStream c = make_blob_stream(small_blob(), 10);
  CHECK(streams_identical(a, b));
  CHECK_FALSE(streams_identical(a, c));
}

TEST_CASE("blob stream rejects invalid parameters") {
  BlobStreamConfig bad = small_blob();
  bad.separation = 0.0;
  CHECK_THROWS_AS(make_blob_stream(bad, 1), ConfigError);
  bad = small_blob();
  bad.n_tasks = 0;
  CHECK_THROWS_AS(make_blob_stream(bad, 1), ConfigError);
}

TEST_CASE("drift moves later tasks' input statistics") {
  BlobStreamConfig cfg = small_blob();
  cfg.drift = 0.8;
  TaskStream s = make_blob_stream(cfg, 11);
  // mean input norm grows with the task index because of the shift component
  auto mean_norm = [](const TaskDataset& t) {
    double acc = 0.0;
    for (const Tensor& x : t.train_x) {
      double n = 0.0;
      for (double v : x.data) n += v * v;
      acc += std::sqrt(n);
    }
    return acc / static_cast<double>(t.train_x.size());
  };
  CHECK(mean_norm(s.tasks[4]) > mean_norm(s.tasks[0]));
}

TEST_CASE("container round trip reproduces the stream bit-exactly") {
  TaskStream s = make_blob_stream(small_blob(), 77);
  auto path = std::filesystem::temp_directory_path() / "rfe_stream_roundtrip.rfed";
  write_stream(path.string(), s);
  TaskStream back = split_labeled_file(path.string(), 5, 0);
  CHECK(streams_identical(s, back));
  std::filesystem::remove(path);
}

TEST_CASE("contiguous class split: 10 classes over 5 tasks") {
  TaskStream s = make_blob_stream(small_blob(), 3);
  auto path = std::filesystem::temp_directory_path() / "rfe_stream_split.rfed";
  write_stream(path.string(), s);
  TaskStream two = split_labeled_file(path.string(), 2, 0);
  REQUIRE(two.num_tasks() == 2);
  CHECK(two.tasks[0].classes == std::vector<std::int64_t>{0, 1, 2, 3, 4});
  CHECK(two.tasks[1].classes == std::vector<std::int64_t>{5, 6, 7, 8, 9});
  CHECK_THROWS_AS(split_labeled_file(path.string(), 3, 0), ConfigError);
  std::filesystem::remove(path);
}

TEST_CASE("100-class file over 5 tasks yields 20 classes each") {
  TaskStream big;
  big.input_shape = {4};
  Rng rng(5);
  for (int t = 1; t <= 4; ++t) {
    TaskDataset ds;
    ds.task_id = t;
    for (int c = 0; c < 25; ++c) {
      std::int64_t label = (t - 1) * 25 + c;
      ds.classes.push_back(label);
      ds.train_x.push_back(test::random_tensor({4}, rng));
      ds.train_y.push_back(label);
      ds.test_x.push_back(test::random_tensor({4}, rng));
      ds.test_y.push_back(label);
    }
    big.tasks.push_back(std::move(ds));
  }
  auto path = std::filesystem::temp_directory_path() / "rfe_stream_100.rfed";
  write_stream(path.string(), big);
  TaskStream five = split_labeled_file(path.string(), 5, 0);
  REQUIRE(five.num_tasks() == 5);
  for (const TaskDataset& t : five.tasks) CHECK(t.num_classes() == 20);
  CHECK(five.total_classes() == 100);
  std::filesystem::remove(path);
}

TEST_CASE("malformed containers report the byte offset") {
  auto path = std::filesystem::temp_directory_path() / "rfe_stream_bad.rfed";
  {
    std::ofstream os(path, std::ios::binary);
    os << "RFED1";
    std::uint64_t v = 1;  // sample count
    os.write(reinterpret_cast<char*>(&v), 8);
    v = 1;  // rank
    os.write(reinterpret_cast<char*>(&v), 8);
    v = 4;  // extent
    os.write(reinterpret_cast<char*>(&v), 8);
    v = 2;  // classes
    os.write(reinterpret_cast<char*>(&v), 8);
    // record truncated after the label
    v = 0;
    os.write(reinterpret_cast<char*>(&v), 8);
  }
  CHECK_THROWS_WITH_AS(split_labeled_file(path.string(), 1, 0), doctest::Contains("at byte"),
                       ParseError);

  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "WRONG";
  }
  CHECK_THROWS_AS(split_labeled_file(path.string(), 1, 0), ParseError);
  std::filesystem::remove(path);
}

TEST_CASE("standardizer freezes task-1 statistics") {
  TaskStream s = make_blob_stream(small_blob(), 13);
  Standardizer std_ = Standardizer::fit(s.task(1).train_x);
  std_.apply_in_place(s);

  // task-1 train data is now zero-mean unit-variance per feature
  std::size_t dim = s.input_shape[0];
  std::vector<double> mean(dim, 0.0), var(dim, 0.0);
  for (const Tensor& x : s.task(1).train_x) {
    for (std::size_t i = 0; i < dim; ++i) mean[i] += x[i];
  }
  for (double& m : mean) m /= static_cast<double>(s.task(1).train_x.size());
  for (const Tensor& x : s.task(1).train_x) {
    for (std::size_t i = 0; i < dim; ++i) var[i] += (x[i] - mean[i]) * (x[i] - mean[i]);
  }
  for (std::size_t i = 0; i < dim; ++i) {
    CHECK(std::abs(mean[i]) < 1e-9);
    CHECK(std::sqrt(var[i] / static_cast<double>(s.task(1).train_x.size())) ==
          doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("blob train/val/test splits are disjoint") {
  // With continuous noise, duplicated tensors across splits would indicate
  // that a sample leaked between them.
  TaskStream s = make_blob_stream(small_blob(), 21);
  for (const TaskDataset& t : s.tasks) {
    auto overlaps = [](const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
      for (const Tensor& u : a) {
        for (const Tensor& v : b) {
          if (u.data == v.data) return true;
        }
      }
      return false;
    };
    CHECK_FALSE(overlaps(t.train_x, t.val_x));
    CHECK_FALSE(overlaps(t.train_x, t.test_x));
    CHECK_FALSE(overlaps(t.val_x, t.test_x));
  }
}
