#include "popgcn/optim.hpp"

#include "popgcn/error.hpp"

#include <string>

namespace popgcn {

Adam::Adam(Eigen::Index size, Options options)
    : options_(options), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

void Adam::step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad) {
    if (params.size() != m_.size() || grad.size() != m_.size())
        throw ShapeError("Adam::step: expected " + std::to_string(m_.size()) + " parameters");
    ++steps_;
    beta1_power_ *= options_.beta1;
    beta2_power_ *= options_.beta2;
    m_ = options_.beta1 * m_ + (1.0 - options_.beta1) * grad;
    v_ = options_.beta2 * v_ + (1.0 - options_.beta2) * grad.cwiseAbs2();
    const double lr = options_.learning_rate;
    const double c1 = 1.0 - beta1_power_;
    const double c2 = 1.0 - beta2_power_;
    params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + options_.epsilon);
}

}  // namespace popgcn
