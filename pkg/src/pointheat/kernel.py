"""The attractive point-interaction heat kernel and its mass function.

The kernel splits into the free Gaussian part plus an interaction part
that depends on the two radii only:

    P^b_t(x, y) = P_t(x, y) + W_t(|x|, |y|),
    W_t(a, r)   = (2t/(a r)) P_t(a + r) + (8 pi b t/(a r)) J_t(a + r),
    J_t(R)      = int_0^inf e^{4 pi b u} P_t(u + R) du,

with J_t available in closed form through exp_erfc.  The closed form is
always used at runtime; the raw integral survives only as a test oracle.

The excess-mass function Q_t (total kernel mass minus one) is provided in
its closed form, its integral representation, and the dimensionless
rescaling, together with the explicit bound constant C_L and the exact
radial derivative.  Q_0 := 0 for x != 0, so the Doob factor at the
terminal time is exactly one; Q at the origin is +inf (a distinguished
value, not an error).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .quadrature import QuadratureSpec, integrate_semiinfinite
from .special import erfc, exp_erfc, gauss_kernel

FOUR_PI = 4.0 * math.pi


@dataclass(frozen=True)
class ModelParams:
    """Horizon, coupling, and puncture radius, with derived constants.

    L = beta sqrt(T); C_L = e^{16 pi^2 L^2} (2 + 4/sqrt(pi) + 16 pi L) is
    the explicit constant of the excess-mass upper bound.
    """

    T: float
    beta: float
    eps: float
    L: float = field(init=False)
    C_L: float = field(init=False)

    def __post_init__(self):
        for name in ("T", "beta", "eps"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be a positive finite number, got {v!r}")
        object.__setattr__(self, "L", self.beta * math.sqrt(self.T))
        object.__setattr__(
            self,
            "C_L",
            math.exp(16.0 * math.pi**2 * self.L**2)
            * (2.0 + 4.0 / math.sqrt(math.pi) + 16.0 * math.pi * self.L),
        )


@dataclass(frozen=True)
class Cemetery:
    """Absorbing cemetery state adjoined to the punctured domain."""

    def __repr__(self):
        return "CEMETERY"


CEMETERY = Cemetery()


def is_cemetery(state):
    return isinstance(state, Cemetery)


def as_point(x):
    """Validate and return a finite 3-vector."""
    p = np.asarray(x, dtype=float)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise DomainError(f"expected a finite 3-vector, got {x!r}")
    return p


def norm3(x):
    return float(np.linalg.norm(as_point(x)))


def _radius(x):
    """Radius of a point or a bare radius."""
    if np.ndim(x) == 0:
        return float(x)
    return norm3(x)


def interaction_radial(t, a, r, beta):
    """Interaction part W_t(a, r) of the kernel, radii only, closed form.

    Vectorized over broadcastable (a, r).
    """
    a = np.asarray(a, dtype=float)
    r = np.asarray(r, dtype=float)
    R = a + r
    pref = (4.0 * math.pi * t) ** (-1.5)
    gamma = FOUR_PI * beta
    j = pref * math.sqrt(math.pi * t) * exp_erfc(
        -gamma * R + gamma * gamma * t,
        R / (2.0 * math.sqrt(t)) - gamma * math.sqrt(t),
    )
    w = (2.0 * t / (a * r)) * pref * np.exp(-(R * R) / (4.0 * t)) + (2.0 * gamma * t / (a * r)) * j
    return w if np.ndim(w) else float(w)


def interaction_tail_integrand(t, u, R, beta):
    """Integrand e^{4 pi b u} P_t(u + R) of the raw interaction integral.

    Kept as the quadrature oracle for the closed-form third kernel term.
    """
    u = np.asarray(u, dtype=float)
    return np.exp(FOUR_PI * beta * u) * (4.0 * math.pi * t) ** (-1.5) * np.exp(
        -((u + R) ** 2) / (4.0 * t)
    )


def point_kernel(t, x, y, p: ModelParams):
    """P^b_t(x, y): free kernel plus the radii-only interaction part."""
    if not (t > 0.0):
        raise DomainError(f"time must be positive, got {t}")
    x = as_point(x)
    y = as_point(y)
    a = float(np.linalg.norm(x))
    r = float(np.linalg.norm(y))
    if a == 0.0 or r == 0.0:
        raise DomainError("point_kernel is undefined at the origin")
    return gauss_kernel(t, x, y) + interaction_radial(t, a, r, p.beta)


def point_kernel_radii(t, a, r, u, beta):
    """Kernel value from radii a = |x|, r = |y|, and u = cos(angle(x, y)).

    Vectorized over broadcastable (a, r, u); the workhorse of the
    quadrature and Monte Carlo layers.
    """
    a = np.asarray(a, dtype=float)
    r = np.asarray(r, dtype=float)
    u = np.asarray(u, dtype=float)
    d2 = a * a + r * r - 2.0 * a * r * u
    free = (4.0 * math.pi * t) ** (-1.5) * np.exp(-np.maximum(d2, 0.0) / (4.0 * t))
    return free + interaction_radial(t, a, r, beta)


def _expm1_gauss(gamma, w, a, t):
    """(e^{gamma w} - 1) e^{-(a+w)^2/(4t)} without overflow.

    For large gamma*w the product is evaluated in log space (the combined
    exponent is always <= 0 in the regimes integrated here); for small
    gamma*w the expm1 form avoids cancellation.
    """
    w = np.asarray(w, dtype=float)
    z = ((a + w) ** 2) / (4.0 * t)
    gw = gamma * w
    small = gw < 50.0
    with np.errstate(over="ignore", invalid="ignore"):
        direct = np.expm1(np.where(small, gw, 0.0)) * np.exp(-z)
        logged = np.exp(gw - z) - np.exp(-z)
    return np.where(small, direct, logged)


def _q_closed_radius(t, a, beta):
    a = np.asarray(a, dtype=float)
    gamma = FOUR_PI * beta
    alpha = a / (2.0 * math.sqrt(t))
    e = exp_erfc(-gamma * a + gamma * gamma * t, alpha - gamma * math.sqrt(t))
    out = (e - erfc(alpha)) / (gamma * a)
    out = np.maximum(out, 0.0)
    return out if np.ndim(out) else float(out)


def q_closed(t, x, p: ModelParams):
    """Excess mass Q_t at x, closed form; 0 at t = 0, +inf at the origin."""
    if not (t >= 0.0):
        raise DomainError(f"time must be nonnegative, got {t}")
    a = _radius(x)
    if a < 0.0:
        raise DomainError("radius must be nonnegative")
    if a == 0.0:
        return math.inf
    if t == 0.0:
        return 0.0
    return float(_q_closed_radius(t, a, p.beta))


def q_profile(t, r, p: ModelParams):
    """Vectorized Q_t over an array of radii (+inf at zero entries)."""
    r = np.asarray(r, dtype=float)
    if t == 0.0:
        return np.zeros_like(r)
    out = np.full(r.shape, math.inf)
    pos = r > 0.0
    if np.any(pos):
        out[pos] = _q_closed_radius(t, r[pos], p.beta)
    return out


def q_dimensionless(xx, bb):
    """Q in rescaled variables xx = |x|/(2 sqrt t), bb = 4 pi beta sqrt t."""
    if xx <= 0.0 or bb <= 0.0:
        raise DomainError("dimensionless form requires positive arguments")
    return (exp_erfc(bb * bb - 2.0 * bb * xx, xx - bb) - erfc(xx)) / (2.0 * bb * xx)


def q_integral(t, x, p: ModelParams, spec: QuadratureSpec = None):
    """Q_t via its integral representation (independent quadrature route)."""
    if not (t > 0.0):
        raise DomainError(f"time must be positive, got {t}")
    a = _radius(x)
    if a <= 0.0:
        raise DomainError("q_integral requires x != 0")
    spec = spec or QuadratureSpec()
    gamma = FOUR_PI * p.beta

    def integrand(w):
        return _expm1_gauss(gamma, w, a, t)

    peak = max(0.0, 2.0 * gamma * t - a)
    res = integrate_semiinfinite(
        integrand, 0.0, spec, scale=2.0 * math.sqrt(t), peaks=(peak,), peak_width=math.sqrt(2.0 * t)
    )
    return res.value / (gamma * a * math.sqrt(math.pi * t))


def mass(t, x, p: ModelParams):
    """Total kernel mass 1 + Q_t(x) = int P^b_t(x, y) dy."""
    return 1.0 + q_closed(t, x, p)


def q_gradient_radial(t, x, p: ModelParams, spec: QuadratureSpec = None):
    """|grad Q_t|(x): exact radial derivative via the integral form."""
    if not (t > 0.0):
        raise DomainError(f"time must be positive, got {t}")
    a = _radius(x)
    if a <= 0.0:
        raise DomainError("q_gradient_radial requires x != 0")
    spec = spec or QuadratureSpec()
    gamma = FOUR_PI * p.beta

    def integrand(w):
        return _expm1_gauss(gamma, w, a, t) * ((a + w) / (2.0 * t))

    peak = max(0.0, 2.0 * gamma * t - a)
    res = integrate_semiinfinite(
        integrand, 0.0, spec, scale=2.0 * math.sqrt(t), peaks=(peak,), peak_width=math.sqrt(2.0 * t)
    )
    q = q_closed(t, a, p)
    return q / a + res.value / (gamma * a * math.sqrt(math.pi * t))


def q_gradient_closed(t, x, p: ModelParams):
    """|grad Q_t|(x) in closed form: (Q + E)/|x| with E the exp_erfc term.

    Algebraically equivalent to the integral route; kept as a cross-check.
    """
    if not (t > 0.0):
        raise DomainError(f"time must be positive, got {t}")
    a = _radius(x)
    if a <= 0.0:
        raise DomainError("q_gradient_closed requires x != 0")
    gamma = FOUR_PI * p.beta
    e = exp_erfc(-gamma * a + gamma * gamma * t, a / (2.0 * math.sqrt(t)) - gamma * math.sqrt(t))
    return (q_closed(t, a, p) + e) / a


def d_eps_distance(x, y, p: ModelParams):
    """Complete metric on the punctured domain.

    Euclidean distance plus the boundary-blowup term
    |1/(|x| - eps) - 1/(|y| - eps)|.
    """
    x = as_point(x)
    y = as_point(y)
    rx = float(np.linalg.norm(x))
    ry = float(np.linalg.norm(y))
    if rx <= p.eps or ry <= p.eps:
        raise DomainError("d_eps_distance requires both points strictly outside the puncture")
    return float(np.linalg.norm(x - y)) + abs(1.0 / (rx - p.eps) - 1.0 / (ry - p.eps))


def rho_distance(a, b, p: ModelParams):
    """Bounded metric on the domain with cemetery adjoined; values in [0, 1]."""
    a_cem = is_cemetery(a)
    b_cem = is_cemetery(b)
    if a_cem and b_cem:
        return 0.0
    if a_cem or b_cem:
        return 1.0
    return min(1.0, d_eps_distance(a, b, p))
