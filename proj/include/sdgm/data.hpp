#ifndef SDGM_DATA_HPP
#define SDGM_DATA_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace sdgm {

// Labeled sample matrix with one-hot targets. Immutable after load.
struct Dataset {
  Eigen::MatrixXd X;       // N x D
  Eigen::VectorXi labels;  // entries in [0, C)
  Eigen::MatrixXd T;       // N x C one-hot
  std::string name;

  int n() const { return static_cast<int>(X.rows()); }
  int dim() const { return static_cast<int>(X.cols()); }
  int num_classes() const { return static_cast<int>(T.cols()); }
  void validate() const;
};

Dataset make_dataset(Eigen::MatrixXd x, Eigen::VectorXi labels,
                     int num_classes = -1, std::string name = "");

// Which CSV column holds the label.
struct LabelColumn {
  enum class Kind { First, Last, Index };
  Kind kind = Kind::Last;
  int index = -1;  // used when kind == Index

  static LabelColumn parse(const std::string& s);
};

// Loads a numeric CSV. A leading row with any non-numeric cell is treated
// as a header and skipped. Labels are mapped to 0..C-1 in sorted order of
// their distinct values; pass `label_map` to pin an existing mapping.
Dataset load_csv(const std::string& path, LabelColumn label = {},
                 const std::map<double, int>* label_map = nullptr);

void save_csv(const std::string& path, const Dataset& data,
              const std::vector<double>* label_values = nullptr);

// Loads `<name>_train_<i>.csv` / `<name>_test_<i>.csv` from a split
// directory with a label mapping shared across the pair.
std::pair<Dataset, Dataset> load_splits(const std::string& dir, int split_index,
                                        LabelColumn label = {});

// Ground-truth Gaussian mixture used by the synthetic generator.
struct GmmSpec {
  struct Component {
    int cls = 0;
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    double weight = 1.0;  // mixing weight within its class
  };
  std::vector<Component> components;

  int num_classes() const;
  int dim() const;
  void validate() const;

  nlohmann::json to_json() const;
  static GmmSpec from_json(const nlohmann::json& j);
  static GmmSpec load(const std::string& path);

  // Two classes of eight components each, means on interleaved rings,
  // isotropic covariance 0.04*I, uniform mixing.
  static GmmSpec default_synthetic();

  // The generating mixture of Ripley's synthetic two-class data: two
  // components per class, covariance 0.03*I, equal mixing.
  static GmmSpec ripley();
};

// Samples train/test datasets: class uniform, component by mixing weight,
// point from that component's Gaussian. Deterministic per seed.
std::pair<Dataset, Dataset> synth_gmm(const GmmSpec& spec, int n_train,
                                      int n_test, std::uint64_t seed);

// Per-dimension z-scoring with statistics from the training split only.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;
  std::vector<int> constant_columns;  // forced to stddev 1

  static Standardizer fit(const Dataset& train);
  Dataset apply(const Dataset& data) const;
  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::VectorXd unapply(const Eigen::Ref<const Eigen::VectorXd>& z) const;
};

}  // namespace sdgm

#endif  // SDGM_DATA_HPP
