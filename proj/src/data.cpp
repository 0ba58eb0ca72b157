#include "sdgm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace sdgm {

void Dataset::validate() const {
  if (X.rows() < 1 || X.cols() < 1)
    throw std::invalid_argument("dataset must have N >= 1 and D >= 1");
  if (labels.size() != X.rows() || T.rows() != X.rows())
    throw std::invalid_argument("dataset label/target row count mismatch");
  for (int i = 0; i < n(); ++i) {
    if (labels(i) < 0 || labels(i) >= num_classes())
      throw std::invalid_argument("label out of range at row " + std::to_string(i));
    if (std::abs(T.row(i).sum() - 1.0) > 1e-12)
      throw std::invalid_argument("one-hot row does not sum to 1");
  }
}

Dataset make_dataset(Eigen::MatrixXd x, Eigen::VectorXi labels, int num_classes,
                     std::string name) {
  Dataset d;
  d.X = std::move(x);
  d.labels = std::move(labels);
  d.name = std::move(name);
  int c = num_classes;
  if (c < 0) c = d.labels.size() > 0 ? d.labels.maxCoeff() + 1 : 0;
  d.T = Eigen::MatrixXd::Zero(d.X.rows(), c);
  for (int i = 0; i < d.n(); ++i) d.T(i, d.labels(i)) = 1.0;
  d.validate();
  return d;
}

LabelColumn LabelColumn::parse(const std::string& s) {
  LabelColumn lc;
  if (s == "first") {
    lc.kind = Kind::First;
  } else if (s == "last") {
    lc.kind = Kind::Last;
  } else {
    try {
      lc.index = std::stoi(s);
    } catch (const std::exception&) {
      throw std::invalid_argument("label column must be first|last|<index>, got '" + s + "'");
    }
    lc.kind = Kind::Index;
  }
  return lc;
}

namespace {

bool parse_double(const std::string& cell, double* out) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(begin, &end);
  if (end == begin) return false;
  while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
  if (*end != '\0') return false;
  *out = v;
  return true;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

struct RawCsv {
  std::vector<std::vector<double>> features;
  std::vector<double> label_values;
};

RawCsv parse_csv(const std::string& path, LabelColumn label) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  RawCsv raw;
  std::string line;
  int line_no = 0;
  size_t width = 0;
  bool first_data_row = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    std::vector<double> row(cells.size());
    bool numeric = true;
    for (size_t i = 0; i < cells.size(); ++i)
      if (!parse_double(cells[i], &row[i])) {
        numeric = false;
        break;
      }
    if (!numeric) {
      if (first_data_row) continue;  // header row
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": non-numeric cell");
    }
    if (first_data_row) {
      width = row.size();
      if (width < 2)
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": need at least one feature and a label");
      first_data_row = false;
    } else if (row.size() != width) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": ragged row (expected " + std::to_string(width) +
                               " cells, got " + std::to_string(row.size()) + ")");
    }
    int li;
    switch (label.kind) {
      case LabelColumn::Kind::First: li = 0; break;
      case LabelColumn::Kind::Last: li = static_cast<int>(width) - 1; break;
      default: li = label.index; break;
    }
    if (li < 0 || li >= static_cast<int>(width))
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": label column out of range");
    raw.label_values.push_back(row[li]);
    row.erase(row.begin() + li);
    raw.features.push_back(std::move(row));
  }
  if (raw.features.empty()) throw std::runtime_error(path + ": no data rows");
  return raw;
}

Dataset dataset_from_raw(const RawCsv& raw, const std::map<double, int>& map,
                         int num_classes, const std::string& path,
                         std::string name) {
  const int n = static_cast<int>(raw.features.size());
  const int d = static_cast<int>(raw.features[0].size());
  Eigen::MatrixXd x(n, d);
  Eigen::VectorXi labels(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) x(i, j) = raw.features[i][j];
    auto it = map.find(raw.label_values[i]);
    if (it == map.end())
      throw std::runtime_error(path + ": unknown label value " +
                               std::to_string(raw.label_values[i]));
    labels(i) = it->second;
  }
  return make_dataset(std::move(x), std::move(labels), num_classes, std::move(name));
}

std::map<double, int> build_label_map(const std::vector<double>& values) {
  std::set<double> distinct(values.begin(), values.end());
  std::map<double, int> map;
  int next = 0;
  for (double v : distinct) map[v] = next++;
  return map;
}

}  // namespace

Dataset load_csv(const std::string& path, LabelColumn label,
                 const std::map<double, int>* label_map) {
  RawCsv raw = parse_csv(path, label);
  std::map<double, int> map =
      label_map ? *label_map : build_label_map(raw.label_values);
  int c = 0;
  for (const auto& [v, idx] : map) c = std::max(c, idx + 1);
  return dataset_from_raw(raw, map, c, path, fs::path(path).stem().string());
}

void save_csv(const std::string& path, const Dataset& data,
              const std::vector<double>* label_values) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  char buf[64];
  for (int i = 0; i < data.n(); ++i) {
    for (int j = 0; j < data.dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", data.X(i, j));
      out << buf << ',';
    }
    double lv = label_values ? (*label_values)[data.labels(i)]
                             : static_cast<double>(data.labels(i));
    std::snprintf(buf, sizeof(buf), "%.17g", lv);
    out << buf << '\n';
  }
}

std::pair<Dataset, Dataset> load_splits(const std::string& dir, int split_index,
                                        LabelColumn label) {
  const std::string train_suffix = "_train_" + std::to_string(split_index) + ".csv";
  std::string train_path, test_path, base;
  std::set<int> available;
  const std::regex pat("(.*)_train_([0-9]+)\\.csv");
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string fname = entry.path().filename().string();
    std::smatch m;
    if (std::regex_match(fname, m, pat)) {
      available.insert(std::stoi(m[2].str()));
      if (fname.size() >= train_suffix.size() &&
          fname.compare(fname.size() - train_suffix.size(), train_suffix.size(),
                        train_suffix) == 0) {
        base = m[1].str();
        train_path = entry.path().string();
      }
    }
  }
  if (train_path.empty()) {
    std::string avail;
    for (int i : available) avail += (avail.empty() ? "" : ", ") + std::to_string(i);
    throw std::runtime_error("split " + std::to_string(split_index) +
                             " not found in '" + dir + "' (available: " +
                             (avail.empty() ? "none" : avail) + ")");
  }
  test_path = (fs::path(dir) / (base + "_test_" + std::to_string(split_index) + ".csv")).string();
  if (!fs::exists(test_path))
    throw std::runtime_error("missing test file '" + test_path + "'");

  RawCsv train_raw = parse_csv(train_path, label);
  RawCsv test_raw = parse_csv(test_path, label);
  if (train_raw.features[0].size() != test_raw.features[0].size())
    throw std::runtime_error("train/test feature dimension mismatch in split " +
                             std::to_string(split_index));
  std::vector<double> all = train_raw.label_values;
  all.insert(all.end(), test_raw.label_values.begin(), test_raw.label_values.end());
  const auto map = build_label_map(all);
  const int c = static_cast<int>(map.size());
  return {dataset_from_raw(train_raw, map, c, train_path, base + "_train_" + std::to_string(split_index)),
          dataset_from_raw(test_raw, map, c, test_path, base + "_test_" + std::to_string(split_index))};
}

int GmmSpec::num_classes() const {
  int c = 0;
  for (const auto& comp : components) c = std::max(c, comp.cls + 1);
  return c;
}

int GmmSpec::dim() const {
  return components.empty() ? 0 : static_cast<int>(components[0].mean.size());
}

void GmmSpec::validate() const {
  if (components.empty()) throw std::invalid_argument("empty mixture spec");
  const int d = dim();
  const int c = num_classes();
  std::vector<double> class_weight(c, 0.0);
  std::vector<int> class_count(c, 0);
  for (const auto& comp : components) {
    if (comp.cls < 0) throw std::invalid_argument("negative class index in spec");
    if (comp.mean.size() != d || comp.cov.rows() != d || comp.cov.cols() != d)
      throw std::invalid_argument("inconsistent dimensions in mixture spec");
    if (!(comp.weight > 0.0))
      throw std::invalid_argument("mixing weights must be positive");
    if ((comp.cov - comp.cov.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw std::invalid_argument("covariance not symmetric in mixture spec");
    Eigen::LLT<Eigen::MatrixXd> llt(comp.cov);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("covariance not positive definite in mixture spec");
    class_weight[comp.cls] += comp.weight;
    class_count[comp.cls] += 1;
  }
  for (int k = 0; k < c; ++k) {
    if (class_count[k] == 0)
      throw std::invalid_argument("class " + std::to_string(k) + " has no components");
    if (std::abs(class_weight[k] - 1.0) > 1e-9)
      throw std::invalid_argument("mixing weights of class " + std::to_string(k) +
                                  " do not sum to 1");
  }
}

nlohmann::json GmmSpec::to_json() const {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& comp : components) {
    nlohmann::json jc;
    jc["class"] = comp.cls;
    jc["mean"] = std::vector<double>(comp.mean.data(), comp.mean.data() + comp.mean.size());
    nlohmann::json cov = nlohmann::json::array();
    for (int i = 0; i < comp.cov.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (int j = 0; j < comp.cov.cols(); ++j) row.push_back(comp.cov(i, j));
      cov.push_back(row);
    }
    jc["cov"] = cov;
    jc["weight"] = comp.weight;
    comps.push_back(jc);
  }
  return nlohmann::json{{"version", 1}, {"components", comps}};
}

GmmSpec GmmSpec::from_json(const nlohmann::json& j) {
  GmmSpec spec;
  for (const auto& jc : j.at("components")) {
    Component comp;
    comp.cls = jc.at("class").get<int>();
    const auto mean = jc.at("mean").get<std::vector<double>>();
    comp.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), mean.size());
    const auto& cov = jc.at("cov");
    const int d = static_cast<int>(cov.size());
    comp.cov.resize(d, d);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) comp.cov(r, c) = cov.at(r).at(c).get<double>();
    comp.weight = jc.at("weight").get<double>();
    spec.components.push_back(std::move(comp));
  }
  spec.validate();
  return spec;
}

GmmSpec GmmSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

GmmSpec GmmSpec::default_synthetic() {
  GmmSpec spec;
  const Eigen::MatrixXd cov = 0.04 * Eigen::MatrixXd::Identity(2, 2);
  for (int cls = 0; cls < 2; ++cls) {
    const double radius = cls == 0 ? 1.0 : 2.0;
    const double offset = cls == 0 ? 0.0 : std::numbers::pi / 8.0;
    for (int k = 0; k < 8; ++k) {
      Component comp;
      comp.cls = cls;
      const double angle = offset + 2.0 * std::numbers::pi * k / 8.0;
      comp.mean = Eigen::Vector2d(radius * std::cos(angle), radius * std::sin(angle));
      comp.cov = cov;
      comp.weight = 1.0 / 8.0;
      spec.components.push_back(std::move(comp));
    }
  }
  spec.validate();
  return spec;
}

GmmSpec GmmSpec::ripley() {
  GmmSpec spec;
  const Eigen::MatrixXd cov = 0.03 * Eigen::MatrixXd::Identity(2, 2);
  const double means[2][2][2] = {{{-0.7, 0.3}, {0.3, 0.3}},
                                 {{-0.3, 0.7}, {0.4, 0.7}}};
  for (int cls = 0; cls < 2; ++cls)
    for (int k = 0; k < 2; ++k) {
      Component comp;
      comp.cls = cls;
      comp.mean = Eigen::Vector2d(means[cls][k][0], means[cls][k][1]);
      comp.cov = cov;
      comp.weight = 0.5;
      spec.components.push_back(std::move(comp));
    }
  spec.validate();
  return spec;
}

namespace {

Dataset sample_gmm(const GmmSpec& spec, int n, std::mt19937_64& rng,
                   const std::vector<Eigen::MatrixXd>& chol, std::string name) {
  const int c = spec.num_classes();
  const int d = spec.dim();
  std::vector<std::vector<int>> by_class(c);
  for (int i = 0; i < static_cast<int>(spec.components.size()); ++i)
    by_class[spec.components[i].cls].push_back(i);

  Eigen::MatrixXd x(n, d);
  Eigen::VectorXi labels(n);
  std::uniform_int_distribution<int> class_dist(0, c - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const int cls = class_dist(rng);
    const auto& comps = by_class[cls];
    double u = unit(rng);
    int pick = comps.back();
    double acc = 0.0;
    for (int idx : comps) {
      acc += spec.components[idx].weight;
      if (u <= acc) {
        pick = idx;
        break;
      }
    }
    Eigen::VectorXd z(d);
    for (int j = 0; j < d; ++j) z(j) = gauss(rng);
    x.row(i) = (spec.components[pick].mean + chol[pick] * z).transpose();
    labels(i) = cls;
  }
  return make_dataset(std::move(x), std::move(labels), c, std::move(name));
}

}  // namespace

std::pair<Dataset, Dataset> synth_gmm(const GmmSpec& spec, int n_train, int n_test,
                                      std::uint64_t seed) {
  spec.validate();
  if (n_train < 1 || n_test < 1)
    throw std::invalid_argument("sample counts must be >= 1");
  std::vector<Eigen::MatrixXd> chol;
  for (const auto& comp : spec.components) {
    Eigen::LLT<Eigen::MatrixXd> llt(comp.cov);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("covariance not positive definite in mixture spec");
    chol.push_back(llt.matrixL());
  }
  std::mt19937_64 rng(seed);
  Dataset train = sample_gmm(spec, n_train, rng, chol, "synth_train");
  Dataset test = sample_gmm(spec, n_test, rng, chol, "synth_test");
  return {std::move(train), std::move(test)};
}

Standardizer Standardizer::fit(const Dataset& train) {
  Standardizer s;
  const int d = train.dim();
  const int n = train.n();
  s.mean = train.X.colwise().mean();
  s.stddev.resize(d);
  for (int j = 0; j < d; ++j) {
    const double ss = (train.X.col(j).array() - s.mean(j)).square().sum();
    const double var = n > 1 ? ss / (n - 1) : 0.0;
    if (var <= 0.0) {
      s.stddev(j) = 1.0;
      s.constant_columns.push_back(j);
    } else {
      s.stddev(j) = std::sqrt(var);
    }
  }
  return s;
}

Dataset Standardizer::apply(const Dataset& data) const {
  Dataset out = data;
  out.X = (data.X.rowwise() - mean.transpose()).array().rowwise() /
          stddev.transpose().array();
  return out;
}

Eigen::VectorXd Standardizer::apply(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return (x - mean).cwiseQuotient(stddev);
}

Eigen::VectorXd Standardizer::unapply(const Eigen::Ref<const Eigen::VectorXd>& z) const {
  return z.cwiseProduct(stddev) + mean;
}

}  // namespace sdgm
