#pragma once

namespace tmur {

// psi(x) = d/dx ln Gamma(x). Uses psi(x) = psi(x + 1) - 1/x to lift the
// argument to x >= 6, then the asymptotic series. Throws DomainError for x <= 0.
double digamma(double x);

// psi'(x), same lifting with psi'(x) = psi'(x + 1) + 1/x^2.
double trigamma(double x);

}  // namespace tmur
