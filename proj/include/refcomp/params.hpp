#pragma once

#include <map>
#include <string>
#include <vector>

#include "refcomp/autograd.hpp"
#include "refcomp/rng.hpp"

namespace refcomp::nn {

/// Named, ordered weight arrays. Ids are insertion indices and stay stable.
class ParameterStore {
 public:
  int add(std::string name, Mat init, bool trainable = true);

  int size() const { return static_cast<int>(values_.size()); }
  const std::string& name(int id) const { return names_.at(static_cast<size_t>(id)); }
  const Mat& value(int id) const { return values_.at(static_cast<size_t>(id)); }
  Mat& value(int id) { return values_.at(static_cast<size_t>(id)); }
  int find(const std::string& name) const;  // -1 if absent
  int id(const std::string& name) const;    // throws if absent

  bool trainable(int id) const { return trainable_.at(static_cast<size_t>(id)) != 0; }
  void set_trainable(int id, bool on) { trainable_.at(static_cast<size_t>(id)) = on ? 1 : 0; }

  Var bind(Graph& g, int id) const { return g.param(id, value(id), trainable(id)); }

  std::size_t scalar_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
  std::vector<char> trainable_;
  std::map<std::string, int> index_;
};

/// N(0, std^2) fill from a seeded stream.
Mat random_normal(Eigen::Index rows, Eigen::Index cols, double std, Rng& rng);

/// First-order adaptive-moment optimizer state.
struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(const ParameterStore& store, AdamConfig cfg);

  /// grads[id] may be empty (no gradient this step). Frozen parameters are
  /// never written.
  void step(ParameterStore& store, const std::vector<Mat>& grads);
  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<Mat> m_, v_;
  long t_ = 0;
};

}  // namespace refcomp::nn
