#include "data/stream.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "core/error.hpp"

namespace rfe {

std::size_t TaskDataset::local_class(std::int64_t global_label) const {
  auto it = std::lower_bound(classes.begin(), classes.end(), global_label);
  if (it == classes.end() || *it != global_label) {
    throw InvalidArgument("label " + std::to_string(global_label) + " is not owned by task " +
                          std::to_string(task_id));
  }
  return static_cast<std::size_t>(it - classes.begin());
}

const TaskDataset& TaskStream::task(int t) const {
  if (t < 1 || t > num_tasks()) {
    throw InvalidArgument("task " + std::to_string(t) + " out of range 1.." +
                          std::to_string(num_tasks()));
  }
  return tasks[static_cast<std::size_t>(t) - 1];
}

std::size_t TaskStream::total_classes() const {
  std::size_t n = 0;
  for (const TaskDataset& t : tasks) n += t.num_classes();
  return n;
}

std::size_t TaskStream::class_offset(int t) const {
  std::size_t off = 0;
  for (int i = 1; i < t; ++i) off += task(i).num_classes();
  return off;
}

std::size_t TaskStream::global_slot(std::int64_t label) const {
  std::size_t off = 0;
  for (const TaskDataset& t : tasks) {
    auto it = std::lower_bound(t.classes.begin(), t.classes.end(), label);
    if (it != t.classes.end() && *it == label) {
      return off + static_cast<std::size_t>(it - t.classes.begin());
    }
    off += t.num_classes();
  }
  throw InvalidArgument("label " + std::to_string(label) + " not owned by any task");
}

std::int64_t TaskStream::label_of_slot(std::size_t slot) const {
  for (const TaskDataset& t : tasks) {
    if (slot < t.num_classes()) return t.classes[slot];
    slot -= t.num_classes();
  }
  throw InvalidArgument("class slot out of range");
}

namespace {

// Fixed rotation built from disjoint coordinate-plane rotations; applying it
// k times realizes the per-task drift of the input statistics.
struct DriftTransform {
  std::vector<std::pair<std::size_t, std::size_t>> planes;
  double angle = 0.0;
  std::vector<double> shift;  // added once per task step

  void apply(Tensor& x, int steps) const {
    double c = std::cos(angle), s = std::sin(angle);
    for (int k = 0; k < steps; ++k) {
      for (auto [i, j] : planes) {
        double xi = x[i], xj = x[j];
        x[i] = c * xi - s * xj;
        x[j] = s * xi + c * xj;
      }
    }
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += steps * shift[i];
  }
};

DriftTransform make_drift(const BlobStreamConfig& cfg, Rng& rng) {
  DriftTransform d;
  d.angle = cfg.drift;
  std::vector<std::size_t> idx(cfg.dim);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(idx);
  for (std::size_t i = 0; i + 1 < cfg.dim; i += 2) d.planes.emplace_back(idx[i], idx[i + 1]);
  d.shift.resize(cfg.dim);
  double norm = 0.0;
  for (double& v : d.shift) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  double mag = 0.5 * cfg.drift * cfg.separation;
  for (double& v : d.shift) v = v / norm * mag;
  return d;
}

}  // namespace

TaskStream make_blob_stream(const BlobStreamConfig& cfg, std::uint64_t seed) {
  if (cfg.n_tasks < 1 || cfg.classes_per_task < 1 || cfg.dim < 1 || cfg.samples_per_class < 1 ||
      cfg.test_per_class < 1) {
    throw ConfigError("blob stream: all counts must be positive");
  }
  if (cfg.separation <= 0.0) throw ConfigError("blob stream: separation must be > 0");
  Rng rng(derive_seed(seed, "blob-stream"));
  std::size_t n_classes =
      static_cast<std::size_t>(cfg.n_tasks) * static_cast<std::size_t>(cfg.classes_per_task);

  std::vector<Tensor> means;
  means.reserve(n_classes);
  for (std::size_t k = 0; k < n_classes; ++k) {
    Tensor m({cfg.dim});
    double norm = 0.0;
    for (double& v : m.data) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : m.data) v = v / norm * cfg.separation;
    means.push_back(std::move(m));
  }
  DriftTransform drift = make_drift(cfg, rng);

  TaskStream stream;
  stream.input_shape = {cfg.dim};
  for (int t = 1; t <= cfg.n_tasks; ++t) {
    TaskDataset ds;
    ds.task_id = t;
    for (int c = 0; c < cfg.classes_per_task; ++c) {
      ds.classes.push_back(static_cast<std::int64_t>((t - 1) * cfg.classes_per_task + c));
    }
    auto draw = [&](std::int64_t label) {
      Tensor x = means[static_cast<std::size_t>(label)];
      for (double& v : x.data) v += cfg.noise * rng.normal();
      drift.apply(x, t - 1);
      return x;
    };
    std::vector<Tensor> pool_x;
    std::vector<std::int64_t> pool_y;
    for (std::int64_t label : ds.classes) {
      for (std::size_t i = 0; i < cfg.samples_per_class; ++i) {
        pool_x.push_back(draw(label));
        pool_y.push_back(label);
      }
      for (std::size_t i = 0; i < cfg.test_per_class; ++i) {
        ds.test_x.push_back(draw(label));
        ds.test_y.push_back(label);
      }
    }
    std::vector<std::size_t> order(pool_x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::size_t val_n = pool_x.size() / 10;
    std::size_t train_n = pool_x.size() - val_n;
    for (std::size_t i = 0; i < pool_x.size(); ++i) {
      std::size_t src = order[i];
      if (i < train_n) {
        ds.train_x.push_back(std::move(pool_x[src]));
        ds.train_y.push_back(pool_y[src]);
      } else {
        ds.val_x.push_back(std::move(pool_x[src]));
        ds.val_y.push_back(pool_y[src]);
      }
    }
    stream.tasks.push_back(std::move(ds));
  }
  return stream;
}

namespace {

class StreamReader {
 public:
  StreamReader(std::istream& is, const std::string& path) : is_(is), path_(path) {}

  std::uint64_t u64() {
    std::uint64_t v = 0;
    read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  }
  std::uint8_t u8() {
    std::uint8_t v = 0;
    read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  }
  void f64(double* out, std::size_t n) {
    read(reinterpret_cast<char*>(out), n * sizeof(double));
  }
  void bytes(char* out, std::size_t n) { read(out, n); }
  std::size_t offset() const { return offset_; }

 private:
  void read(char* out, std::size_t n) {
    is_.read(out, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw ParseError("truncated dataset container '" + path_ + "'", offset_);
    }
    offset_ += n;
  }
  std::istream& is_;
  std::string path_;
  std::size_t offset_ = 0;
};

constexpr char kStreamMagic[] = {'R', 'F', 'E', 'D', '1'};

}  // namespace

TaskStream split_labeled_file(const std::string& path, int n_tasks, std::uint64_t /*seed*/) {
  if (n_tasks < 1) throw ConfigError("split_labeled_file: n_tasks must be >= 1");
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset '" + path + "'");
  StreamReader r(is, path);
  char magic[sizeof(kStreamMagic)];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kStreamMagic, sizeof(kStreamMagic)) != 0) {
    throw ParseError("bad magic in dataset container '" + path + "'", 0);
  }
  std::uint64_t sample_count = r.u64();
  std::uint64_t rank = r.u64();
  if (rank < 1 || rank > 3) {
    throw ParseError("unsupported input rank " + std::to_string(rank) + " in '" + path + "'",
                     r.offset() - 8);
  }
  Shape input_shape(rank);
  for (std::uint64_t i = 0; i < rank; ++i) input_shape[i] = static_cast<std::size_t>(r.u64());
  std::uint64_t class_count = r.u64();
  if (class_count == 0 || class_count % static_cast<std::uint64_t>(n_tasks) != 0) {
    throw ConfigError("dataset has " + std::to_string(class_count) +
                      " classes, not divisible into " + std::to_string(n_tasks) + " tasks");
  }
  std::size_t numel = shape_numel(input_shape);
  std::size_t per_task = static_cast<std::size_t>(class_count) / static_cast<std::size_t>(n_tasks);

  TaskStream stream;
  stream.input_shape = input_shape;
  for (int t = 1; t <= n_tasks; ++t) {
    TaskDataset ds;
    ds.task_id = t;
    for (std::size_t c = 0; c < per_task; ++c) {
      ds.classes.push_back(static_cast<std::int64_t>((t - 1) * per_task + c));
    }
    stream.tasks.push_back(std::move(ds));
  }

  for (std::uint64_t i = 0; i < sample_count; ++i) {
    std::size_t label_off = r.offset();
    std::uint64_t label = r.u64();
    std::uint8_t flag = r.u8();
    if (label >= class_count) {
      throw ParseError("label " + std::to_string(label) + " out of range in '" + path + "'",
                       label_off);
    }
    if (flag > 1) {
      throw ParseError("invalid split flag " + std::to_string(flag) + " in '" + path + "'",
                       label_off + 8);
    }
    Tensor x(input_shape);
    r.f64(x.data.data(), numel);
    TaskDataset& ds = stream.tasks[static_cast<std::size_t>(label) / per_task];
    if (flag == 0) {
      ds.train_x.push_back(std::move(x));
      ds.train_y.push_back(static_cast<std::int64_t>(label));
    } else {
      ds.test_x.push_back(std::move(x));
      ds.test_y.push_back(static_cast<std::int64_t>(label));
    }
  }

  // Carve the validation split off the tail of each task's train block.
  for (TaskDataset& ds : stream.tasks) {
    std::size_t val_n = ds.train_x.size() / 10;
    std::size_t train_n = ds.train_x.size() - val_n;
    ds.val_x.assign(std::make_move_iterator(ds.train_x.begin() + train_n),
                    std::make_move_iterator(ds.train_x.end()));
    ds.val_y.assign(ds.train_y.begin() + train_n, ds.train_y.end());
    ds.train_x.resize(train_n);
    ds.train_y.resize(train_n);
  }
  return stream;
}

void write_stream(const std::string& path, const TaskStream& stream) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  auto w_u64 = [&](std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  auto w_u8 = [&](std::uint8_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  auto w_sample = [&](const Tensor& x, std::int64_t label, std::uint8_t flag) {
    w_u64(static_cast<std::uint64_t>(label));
    w_u8(flag);
    os.write(reinterpret_cast<const char*>(x.data.data()),
             static_cast<std::streamsize>(x.size() * sizeof(double)));
  };
  std::uint64_t total = 0;
  for (const TaskDataset& t : stream.tasks) {
    total += t.train_x.size() + t.val_x.size() + t.test_x.size();
  }
  os.write(kStreamMagic, sizeof(kStreamMagic));
  w_u64(total);
  w_u64(stream.input_shape.size());
  for (std::size_t e : stream.input_shape) w_u64(e);
  w_u64(stream.total_classes());
  for (const TaskDataset& t : stream.tasks) {
    for (std::size_t i = 0; i < t.train_x.size(); ++i) w_sample(t.train_x[i], t.train_y[i], 0);
    for (std::size_t i = 0; i < t.val_x.size(); ++i) w_sample(t.val_x[i], t.val_y[i], 0);
    for (std::size_t i = 0; i < t.test_x.size(); ++i) w_sample(t.test_x[i], t.test_y[i], 1);
  }
  os.flush();
  if (!os) throw IoError("failed writing '" + path + "'");
}

Standardizer Standardizer::fit(const std::vector<Tensor>& samples) {
  if (samples.empty()) throw InvalidArgument("standardizer: no samples");
  std::size_t n = samples[0].size();
  Standardizer s;
  s.mean = Tensor(samples[0].shape);
  s.stddev = Tensor(samples[0].shape);
  for (const Tensor& x : samples) {
    for (std::size_t i = 0; i < n; ++i) s.mean[i] += x[i];
  }
  for (std::size_t i = 0; i < n; ++i) s.mean[i] /= static_cast<double>(samples.size());
  for (const Tensor& x : samples) {
    for (std::size_t i = 0; i < n; ++i) {
      double d = x[i] - s.mean[i];
      s.stddev[i] += d * d;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    s.stddev[i] = std::sqrt(s.stddev[i] / static_cast<double>(samples.size()));
    if (s.stddev[i] < 1e-12) s.stddev[i] = 1.0;
  }
  return s;
}

void Standardizer::apply(Tensor& x) const {
  require_same_shape(x, mean, "standardize");
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - mean[i]) / stddev[i];
}

void Standardizer::apply_in_place(TaskStream& stream) const {
  for (TaskDataset& t : stream.tasks) {
    for (Tensor& x : t.train_x) apply(x);
    for (Tensor& x : t.val_x) apply(x);
    for (Tensor& x : t.test_x) apply(x);
  }
}

}  // namespace rfe
