"""Convexification primitives shared by both subproblems.

Three bounds, each tight at its expansion point:

* an affine global minorant of the square (first-order expansion),
* a lower bound on ln(1 + x) that is convex in x via a -c/x term,
* an upper bound on a product of positives via weighted AM-GM.

The first two restrict ">= constant" constraints involving squares and
logs; the third restricts "product <= constant" constraints. Used with a
refreshed expansion point they give the usual monotone inner-approximation
scheme.
"""

from __future__ import annotations

import math

__all__ = ["taylor_lower_square", "log_lower_bound", "amgm_upper_bilinear"]


def taylor_lower_square(u: float, u_i: float) -> float:
    """Affine minorant of u^2 expanded at u_i: u_i^2 + 2 u_i (u - u_i).

    Equals u^2 at u = u_i and never exceeds it (gap (u - u_i)^2 >= 0).
    """
    return u_i * u_i + 2.0 * u_i * (u - u_i)


def log_lower_bound(theta: float, theta_i: float) -> float:
    """Lower bound on ln(1 + theta), convex in theta, tight at theta_i.

    ln(1 + theta) >= ln(1 + theta_i) + theta_i/(1 + theta_i)
                     - theta_i^2 / ((1 + theta_i) * theta)
    """
    if theta <= 0 or theta_i <= 0:
        raise ValueError("log_lower_bound requires strictly positive arguments")
    a = math.log1p(theta_i) + theta_i / (1.0 + theta_i)
    c = theta_i * theta_i / (1.0 + theta_i)
    return a - c / theta


def amgm_upper_bilinear(eta: float, lam: float, eta_i: float, lam_i: float) -> float:
    """Convex upper bound on eta*lam: (lam_i/eta_i) eta^2/2 + (eta_i/lam_i) lam^2/2.

    Weighted AM-GM; equals eta*lam on the ray eta/eta_i == lam/lam_i, in
    particular at the expansion point itself.
    """
    if min(eta, lam, eta_i, lam_i) <= 0:
        raise ValueError("amgm_upper_bilinear requires strictly positive arguments")
    return 0.5 * (lam_i / eta_i) * eta * eta + 0.5 * (eta_i / lam_i) * lam * lam
