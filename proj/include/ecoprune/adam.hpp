#ifndef ECOPRUNE_ADAM_HPP
#define ECOPRUNE_ADAM_HPP

#include <cmath>
#include <map>
#include <string>

#include "tensor.hpp"

namespace ecoprune {

// Adam with decoupled weight decay; moments keyed by parameter name.
class Adam {
public:
    explicit Adam(double lr = 1e-2, double weight_decay = 0.0, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

    void begin_step() { ++t_; }

    void update(const std::string& name, Tensor& param, const Tensor& grad,
                double lr_override = -1.0) {
        check_same_shape("adam update", param, grad);
        double lr = lr_override >= 0.0 ? lr_override : lr_;
        auto& st = slots_[name];
        if (st.m.data.empty()) {
            st.m = Tensor::zeros(param.shape);
            st.v = Tensor::zeros(param.shape);
        }
        double c1 = 1.0 - std::pow(b1_, t_);
        double c2 = 1.0 - std::pow(b2_, t_);
        for (std::size_t i = 0; i < param.numel(); ++i) {
            double g = grad.data[i];
            st.m.data[i] = b1_ * st.m.data[i] + (1.0 - b1_) * g;
            st.v.data[i] = b2_ * st.v.data[i] + (1.0 - b2_) * g * g;
            double mh = st.m.data[i] / c1;
            double vh = st.v.data[i] / c2;
            param.data[i] -= lr * (mh / (std::sqrt(vh) + eps_) + wd_ * param.data[i]);
        }
    }

private:
    struct Slot {
        Tensor m, v;
    };
    double lr_, wd_, b1_, b2_, eps_;
    long t_ = 0;
    std::map<std::string, Slot> slots_;
};

}  // namespace ecoprune

#endif
