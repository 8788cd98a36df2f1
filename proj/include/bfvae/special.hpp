// SPDX-License-Identifier: Apache-2.0
//
// Special functions used by the closed-form divergences. Thin wrappers so
// the rest of the library has a single place to swap implementations.
#pragma once

namespace bfvae {

// psi(x), accurate to ~1e-14 relative for x in [1e-3, 1e6].
double digamma(double x);

// psi'(x), same domain.
double trigamma(double x);

// log Gamma(x), x > 0.
double log_gamma(double x);

// log(1 + e^x) without overflow.
double softplus(double x);

// d/dx softplus = logistic sigmoid.
double sigmoid(double x);

}  // namespace bfvae
