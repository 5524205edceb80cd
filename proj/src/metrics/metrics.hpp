#pragma once

#include <memory>
#include <string>

#include "infer/inference.hpp"

namespace rfe {

// Lower-triangular accuracy record: rows[i-1][j-1] is the accuracy on task j
// after training through task i (j <= i).
struct AccuracyMatrix {
  std::string setting;  // "TIL" or "CIL"
  std::vector<std::vector<double>> rows;

  void add_row(std::vector<double> row);
};

// Mean of row `after_task`; the row must be complete.
double average_accuracy(const AccuracyMatrix& m, int after_task);

struct RmseMatrix {
  std::string representation;  // "drifted" or "rectified"
  std::vector<std::vector<double>> rows;
};

// Row `trained_task` of the feature-RMSE matrix under the current model
// state. Entry j pools (rep(x) - f_j(x))^2 over task-j test samples and all
// feature coordinates; rep is the current raw feature when
// use_rectification=false, else the chain-rectified estimate of f_j.
std::vector<double> feature_rmse_row(
    const ContinualModel& model, const std::vector<std::unique_ptr<FeatureExtractor>>& snapshots,
    const TaskStream& stream, int trained_task, bool use_rectification);

struct PcaResult {
  std::vector<std::vector<double>> coords;  // one k-vector per input
  std::vector<double> explained_ratio;      // eigenvalue / total variance
  std::vector<double> eigenvalues;
  std::vector<Tensor> components;  // unit-norm, mutually orthogonal
};

// PCA via iterated deflated power method on the mean-centered sample
// covariance. Converges when the eigenvalue's relative change drops below
// 1e-10 (or after 10,000 iterations); the start vector is drawn from `seed`.
// Throws when fewer than k+1 vectors are given or the spectrum has rank < k.
PcaResult pca_project(const std::vector<const Tensor*>& vectors, std::size_t k,
                      std::uint64_t seed);

// CSV exports, 17 significant digits per number.
std::string format_g17(double v);
void write_accuracy_csv(const std::string& path, const std::vector<const AccuracyMatrix*>& mats);
void write_rmse_csv(const std::string& path, const std::vector<const RmseMatrix*>& mats);
void write_pca_csv(const std::string& path, const std::vector<std::string>& sources,
                   const PcaResult& pca);

}  // namespace rfe
