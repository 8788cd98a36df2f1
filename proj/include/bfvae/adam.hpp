// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "bfvae/autograd.hpp"

namespace bfvae {

// Adam with bias correction. One instance per parameter group (the trainer
// keeps separate optimizers for the model side and the discriminator).
class Adam {
 public:
  explicit Adam(std::vector<ad::Parameter*> params, double lr = 1e-4,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  void step();

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  std::vector<ad::Parameter*> params_;
  std::vector<ad::Mat> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace bfvae
