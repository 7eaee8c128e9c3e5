#pragma once

#include <Eigen/Dense>

namespace popgcn {

/// Adam over a flat parameter vector. One instance per parameter group so
/// groups that start training late get their own bias correction.
class Adam {
public:
    struct Options {
        double learning_rate = 0.01;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
    };

    Adam(Eigen::Index size, Options options);

    void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad);

    long steps() const { return steps_; }

private:
    Options options_;
    Eigen::VectorXd m_;
    Eigen::VectorXd v_;
    long steps_ = 0;
    double beta1_power_ = 1.0;
    double beta2_power_ = 1.0;
};

}  // namespace popgcn
