#include "metrics/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "core/error.hpp"

namespace rfe {

void AccuracyMatrix::add_row(std::vector<double> row) {
  if (row.size() != rows.size() + 1) {
    throw InvalidArgument("accuracy row " + std::to_string(rows.size() + 1) + " needs " +
                          std::to_string(rows.size() + 1) + " entries, got " +
                          std::to_string(row.size()));
  }
  rows.push_back(std::move(row));
}

double average_accuracy(const AccuracyMatrix& m, int after_task) {
  if (after_task < 1 || static_cast<std::size_t>(after_task) > m.rows.size()) {
    throw InvalidArgument("no accuracy row for task " + std::to_string(after_task));
  }
  const std::vector<double>& row = m.rows[static_cast<std::size_t>(after_task) - 1];
  if (row.size() != static_cast<std::size_t>(after_task)) {
    throw InvalidArgument("accuracy row for task " + std::to_string(after_task) +
                          " is incomplete");
  }
  double sum = 0.0;
  for (double v : row) sum += v;
  return sum / static_cast<double>(row.size());
}

std::vector<double> feature_rmse_row(
    const ContinualModel& model, const std::vector<std::unique_ptr<FeatureExtractor>>& snapshots,
    const TaskStream& stream, int trained_task, bool use_rectification) {
  if (trained_task < 1 || trained_task > model.tasks_learned) {
    throw InvalidArgument("feature_rmse_row: invalid trained task " +
                          std::to_string(trained_task));
  }
  std::vector<double> row;
  for (int j = 1; j <= trained_task; ++j) {
    if (static_cast<std::size_t>(j) > snapshots.size() || !snapshots[j - 1]) {
      throw InvalidArgument("missing extractor snapshot for task " + std::to_string(j));
    }
    const TaskDataset& ds = stream.task(j);
    double acc = 0.0;
    std::size_t count = 0;
    for (const Tensor& x : ds.test_x) {
      Tensor original;
      {
        Tape tape(false);
        original = tape.value(snapshots[j - 1]->forward(tape, x));
      }
      Tensor rep;
      if (use_rectification) {
        rep = rectify_chain(model, x, j).features.back();
      } else {
        Tape tape(false);
        rep = tape.value(model.extract(tape, x));
      }
      for (std::size_t d = 0; d < rep.size(); ++d) {
        double diff = rep[d] - original[d];
        acc += diff * diff;
      }
      count += rep.size();
    }
    row.push_back(count ? std::sqrt(acc / static_cast<double>(count)) : 0.0);
  }
  return row;
}

PcaResult pca_project(const std::vector<const Tensor*>& vectors, std::size_t k,
                      std::uint64_t seed) {
  if (k < 1) throw InvalidArgument("pca: k must be >= 1");
  if (vectors.size() < k + 1) {
    throw InvalidArgument("pca: need at least " + std::to_string(k + 1) + " vectors, got " +
                          std::to_string(vectors.size()));
  }
  std::size_t dim = vectors[0]->size();
  for (const Tensor* v : vectors) {
    if (v->size() != dim || v->rank() != 1) {
      throw DimensionError("pca: all vectors must be 1-D of length " + std::to_string(dim));
    }
  }
  std::size_t n = vectors.size();

  std::vector<double> mean(dim, 0.0);
  for (const Tensor* v : vectors) {
    for (std::size_t i = 0; i < dim; ++i) mean[i] += (*v)[i];
  }
  for (double& m : mean) m /= static_cast<double>(n);

  // Sample covariance of the centered data.
  std::vector<double> cov(dim * dim, 0.0);
  std::vector<double> c(dim);
  for (const Tensor* v : vectors) {
    for (std::size_t i = 0; i < dim; ++i) c[i] = (*v)[i] - mean[i];
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = i; j < dim; ++j) cov[i * dim + j] += c[i] * c[j];
    }
  }
  double scale = 1.0 / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = i; j < dim; ++j) {
      cov[i * dim + j] *= scale;
      cov[j * dim + i] = cov[i * dim + j];
    }
  }
  double trace = 0.0;
  for (std::size_t i = 0; i < dim; ++i) trace += cov[i * dim + i];
  if (trace <= 0.0) throw InvalidArgument("pca: degenerate spectrum, zero total variance");

  Rng rng(derive_seed(seed, "pca-start"));
  PcaResult out;
  std::vector<double> v(dim), w(dim);
  for (std::size_t comp = 0; comp < k; ++comp) {
    double norm = 0.0;
    for (double& vi : v) {
      vi = rng.normal();
      norm += vi * vi;
    }
    norm = std::sqrt(norm);
    for (double& vi : v) vi /= norm;

    double lambda = 0.0;
    for (int iter = 0; iter < 10000; ++iter) {
      for (std::size_t i = 0; i < dim; ++i) {
        double s = 0.0;
        const double* row = cov.data() + i * dim;
        for (std::size_t j = 0; j < dim; ++j) s += row[j] * v[j];
        w[i] = s;
      }
      double wnorm = 0.0, dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        wnorm += w[i] * w[i];
        dot += w[i] * v[i];
      }
      wnorm = std::sqrt(wnorm);
      if (wnorm == 0.0) break;
      for (std::size_t i = 0; i < dim; ++i) v[i] = w[i] / wnorm;
      double rel = std::abs(dot - lambda) / std::max(std::abs(dot), 1e-300);
      lambda = dot;
      if (iter > 0 && rel < 1e-10) break;
    }
    if (lambda <= trace * 1e-12) {
      throw InvalidArgument("pca: degenerate spectrum, rank below " + std::to_string(k));
    }
    out.eigenvalues.push_back(lambda);
    out.explained_ratio.push_back(lambda / trace);
    Tensor component({dim});
    component.data.assign(v.begin(), v.end());
    out.components.push_back(std::move(component));
    // Deflate: cov -= lambda v v^T.
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = 0; j < dim; ++j) cov[i * dim + j] -= lambda * v[i] * v[j];
    }
  }

  out.coords.reserve(n);
  for (const Tensor* x : vectors) {
    std::vector<double> coord(k, 0.0);
    for (std::size_t comp = 0; comp < k; ++comp) {
      double s = 0.0;
      for (std::size_t i = 0; i < dim; ++i) s += ((*x)[i] - mean[i]) * out.components[comp][i];
      coord[comp] = s;
    }
    out.coords.push_back(std::move(coord));
  }
  return out;
}

std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

std::ofstream open_csv(const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  return os;
}

}  // namespace

void write_accuracy_csv(const std::string& path, const std::vector<const AccuracyMatrix*>& mats) {
  std::ofstream os = open_csv(path);
  os << "trained_task,eval_task,setting,accuracy\n";
  for (const AccuracyMatrix* m : mats) {
    for (std::size_t i = 0; i < m->rows.size(); ++i) {
      for (std::size_t j = 0; j < m->rows[i].size(); ++j) {
        os << (i + 1) << ',' << (j + 1) << ',' << m->setting << ','
           << format_g17(m->rows[i][j]) << '\n';
      }
    }
  }
  if (!os) throw IoError("failed writing '" + path + "'");
}

void write_rmse_csv(const std::string& path, const std::vector<const RmseMatrix*>& mats) {
  std::ofstream os = open_csv(path);
  os << "trained_task,eval_task,representation,rmse\n";
  for (const RmseMatrix* m : mats) {
    for (std::size_t i = 0; i < m->rows.size(); ++i) {
      for (std::size_t j = 0; j < m->rows[i].size(); ++j) {
        os << (i + 1) << ',' << (j + 1) << ',' << m->representation << ','
           << format_g17(m->rows[i][j]) << '\n';
      }
    }
  }
  if (!os) throw IoError("failed writing '" + path + "'");
}

void write_pca_csv(const std::string& path, const std::vector<std::string>& sources,
                   const PcaResult& pca) {
  if (sources.size() != pca.coords.size()) {
    throw InvalidArgument("pca csv: source tags do not match coordinates");
  }
  std::ofstream os = open_csv(path);
  os << "source,sample_index,pc1,pc2\n";
  for (std::size_t i = 0; i < pca.coords.size(); ++i) {
    os << sources[i] << ',' << i << ',' << format_g17(pca.coords[i][0]) << ','
       << format_g17(pca.coords[i].size() > 1 ? pca.coords[i][1] : 0.0) << '\n';
  }
  if (!os) throw IoError("failed writing '" + path + "'");
}

}  // namespace rfe
