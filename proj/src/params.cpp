#include "refcomp/params.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace refcomp::nn {

int ParameterStore::add(std::string name, Mat init, bool trainable) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
  const int id = static_cast<int>(values_.size());
  index_.emplace(name, id);
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  trainable_.push_back(trainable ? 1 : 0);
  return id;
}

int ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

int ParameterStore::id(const std::string& name) const {
  const int i = find(name);
  if (i < 0) throw std::out_of_range("no parameter named " + name);
  return i;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

Mat random_normal(Eigen::Index rows, Eigen::Index cols, double std, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Adam::Adam(const ParameterStore& store, AdamConfig cfg) : cfg_(cfg) {
  for (int i = 0; i < store.size(); ++i) {
    m_.push_back(Mat::Zero(store.value(i).rows(), store.value(i).cols()));
    v_.push_back(Mat::Zero(store.value(i).rows(), store.value(i).cols()));
  }
}

void Adam::step(ParameterStore& store, const std::vector<Mat>& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (int i = 0; i < store.size(); ++i) {
    const auto& g = grads[static_cast<size_t>(i)];
    if (!store.trainable(i) || g.size() == 0) continue;
    auto& m = m_[static_cast<size_t>(i)];
    auto& v = v_[static_cast<size_t>(i)];
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    if (cfg_.learning_rate == 0.0) continue;
    store.value(i).array() -=
        cfg_.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.epsilon);
  }
}

}  // namespace refcomp::nn
