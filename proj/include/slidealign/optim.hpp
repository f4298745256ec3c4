#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "slidealign/mat.hpp"

namespace slidealign {

/// Decoupled-weight-decay adaptive moments optimizer. Betas and epsilon are
/// fixed; decay applies only to tensors flagged for it (weight matrices, not
/// norms/biases/embeddings/eta).
template <typename Real>
class AdamW {
public:
    explicit AdamW(double lr = 3e-4, double weight_decay = 0.01)
        : lr_(lr), weight_decay_(weight_decay) {}

    struct Update {
        std::string name;
        Mat<Real>* master;
        const Mat<Real>* grad;
        bool decay;
    };

    void step(const std::vector<Update>& updates) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (const auto& u : updates) {
            Slot& slot = slots_[u.name];
            if (slot.m.size() != u.master->size()) {
                slot.m = Mat<Real>(u.master->rows, u.master->cols, Real(0));
                slot.v = Mat<Real>(u.master->rows, u.master->cols, Real(0));
            }
            for (std::size_t i = 0; i < u.master->size(); ++i) {
                const double g = static_cast<double>(u.grad->a[i]);
                double m = beta1_ * static_cast<double>(slot.m.a[i]) + (1.0 - beta1_) * g;
                double v = beta2_ * static_cast<double>(slot.v.a[i]) + (1.0 - beta2_) * g * g;
                slot.m.a[i] = static_cast<Real>(m);
                slot.v.a[i] = static_cast<Real>(v);
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                double w = static_cast<double>(u.master->a[i]);
                w -= lr_ * mhat / (std::sqrt(vhat) + eps_);
                if (u.decay) w -= lr_ * weight_decay_ * w;
                u.master->a[i] = static_cast<Real>(w);
            }
        }
    }

    long long step_count() const { return t_; }
    double learning_rate() const { return lr_; }

    struct Slot {
        Mat<Real> m, v;
    };

    // Serialized into checkpoints; keyed by parameter name, map order fixed.
    std::map<std::string, Slot>& slots() { return slots_; }
    const std::map<std::string, Slot>& slots() const { return slots_; }
    void set_step_count(long long t) { t_ = t; }

private:
    double lr_;
    double weight_decay_;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    long long t_ = 0;
    std::map<std::string, Slot> slots_;
};

}  // namespace slidealign
