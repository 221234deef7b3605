"""Doob-transformed transition densities and their quantitative checks.

The transition density over [s, t] inside horizon T is

    p_{s,t}(x, y) = (1 + Q_{T-t}(y)) / (1 + Q_{T-s}(x)) * P^b_{t-s}(x, y).

Because the density depends on y only through |y| and the angle to x, the
angular integral has a closed form, giving the radial transition profile
used by the tail, boundary, and integrability checks as well as by the
samplers.  The normalization and Chapman-Kolmogorov checks deliberately
stay on the honest spherical-quadrature route.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .kernel import FOUR_PI, ModelParams, as_point, interaction_radial, q_closed, q_profile
from .quadrature import (
    QuadratureSpec,
    integrate_interval,
    integrate_semiinfinite,
    integrate_sphere3d,
)

_COLINEAR_TOL = 1e-12


@dataclass(frozen=True)
class TimePair:
    """Ordered pair 0 <= s < t <= T."""

    s: float
    t: float

    def __post_init__(self):
        if not (0.0 <= self.s < self.t):
            raise DomainError(f"need 0 <= s < t, got ({self.s}, {self.t})")

    def validate(self, p: ModelParams):
        if self.t > p.T + 1e-12 * p.T:
            raise DomainError(f"t={self.t} exceeds the horizon T={p.T}")
        return self


def _times(tp_or_s, t=None):
    if isinstance(tp_or_s, TimePair):
        return tp_or_s.s, tp_or_s.t
    return TimePair(float(tp_or_s), float(t)).s, float(t)


def doob_density(tp_or_s, t_or_x, x_or_y=None, y_or_p=None, p=None):
    """Transition density p_{s,t}(x, y); accepts (TimePair, x, y, p) or (s, t, x, y, p)."""
    if isinstance(tp_or_s, TimePair):
        s, t = tp_or_s.s, tp_or_s.t
        x, y, p = t_or_x, x_or_y, y_or_p
    else:
        s, t = float(tp_or_s), float(t_or_x)
        x, y = x_or_y, y_or_p
    TimePair(s, t).validate(p)
    x = as_point(x)
    y = as_point(y)
    a = float(np.linalg.norm(x))
    r = float(np.linalg.norm(y))
    if a == 0.0 or r == 0.0:
        raise DomainError("doob_density is undefined at the origin")
    from .kernel import point_kernel

    num = 1.0 + q_closed(p.T - t, r, p)
    den = 1.0 + q_closed(p.T - s, a, p)
    return (num / den) * point_kernel(t - s, x, y, p)


def free_radial_marginal(tau, a, r):
    """Radial density of |y| under the free kernel started from radius a.

    Equals r^2 times the angular integral of P_tau(x, y); integrates to 1.
    """
    r = np.asarray(r, dtype=float)
    pref = (4.0 * math.pi * tau) ** (-1.5) * (4.0 * math.pi * tau) / a
    return pref * r * (np.exp(-((r - a) ** 2) / (4.0 * tau)) - np.exp(-((r + a) ** 2) / (4.0 * tau)))


def kernel_radial_marginal(tau, a, r, beta):
    """Radial density of |y| under P^b_tau from radius a (mass 1 + Q_tau(a))."""
    r = np.asarray(r, dtype=float)
    return free_radial_marginal(tau, a, r) + FOUR_PI * r * r * interaction_radial(tau, a, r, beta)


def doob_radial_marginal(s, t, a, r, p: ModelParams):
    """Radial density of |Y_t| given |Y_s| = a under the Doob transition.

    Integrates to 1 over r in (0, inf).  Broadcastable in (a, r).
    """
    tau = t - s
    weight = 1.0 + q_profile(p.T - t, np.asarray(r, dtype=float), p)
    if np.ndim(a) == 0:
        norm = 1.0 + q_closed(p.T - s, float(a), p)
    else:
        norm = 1.0 + q_profile(p.T - s, np.asarray(a, dtype=float), p)
    return kernel_radial_marginal(tau, a, r, p.beta) * weight / norm


@dataclass(frozen=True)
class ResidualReport:
    lhs: float
    rhs: float
    abs_residual: float
    rel_residual: float
    quad_error: float
    geometry: str


def _orthonormal_frame(x):
    e3 = x / np.linalg.norm(x)
    helper = np.array([1.0, 0.0, 0.0]) if abs(e3[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = helper - e3 * (helper @ e3)
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(e3, e1)
    return e1, e2, e3


def check_chapman_kolmogorov(r_time, s_time, t_time, x, z, p: ModelParams, spec=None):
    """Residual of int p_{r,s}(x, y) p_{s,t}(y, z) dy against p_{r,t}(x, z).

    Both Doob factors are evaluated as written (the middle 1 + Q(|y|)
    appears in numerator and denominator); colinear (x, z) pairs take the
    azimuthally symmetric 2-D fast path automatically.
    """
    if not (0.0 <= r_time < s_time < t_time <= p.T):
        raise DomainError("need 0 <= r < s < t <= T")
    spec = spec or QuadratureSpec(abs_tol=1e-14, rel_tol=1e-9)
    x = as_point(x)
    z = as_point(z)
    a = float(np.linalg.norm(x))
    az = float(np.linalg.norm(z))
    if a == 0.0 or az == 0.0:
        raise DomainError("origin arguments are not allowed")
    tau1 = s_time - r_time
    tau2 = t_time - s_time
    e1, e2, e3 = _orthonormal_frame(x)
    z1, z2, z3 = z @ e1, z @ e2, z @ e3
    perp = math.hypot(z1, z2)
    colinear = perp <= _COLINEAR_TOL * az

    den = 1.0 + q_closed(p.T - r_time, a, p)
    wz = 1.0 + q_closed(p.T - t_time, az, p)
    c1 = (4.0 * math.pi * tau1) ** (-1.5)
    c2 = (4.0 * math.pi * tau2) ** (-1.5)

    def integrand(r, u, phi):
        su = np.sqrt(np.maximum(1.0 - u * u, 0.0))
        d_xy2 = a * a + r * r - 2.0 * a * r * u
        ydotz = r * (z3 * u + su * (z1 * np.cos(phi) + z2 * np.sin(phi)))
        d_yz2 = r * r + az * az - 2.0 * ydotz
        k1 = c1 * np.exp(-d_xy2 / (4.0 * tau1)) + interaction_radial(tau1, a, r, p.beta)
        k2 = c2 * np.exp(-np.maximum(d_yz2, 0.0) / (4.0 * tau2)) + interaction_radial(tau2, r, az, p.beta)
        qmid = 1.0 + q_profile(p.T - s_time, r, p)
        return (qmid / den) * k1 * (wz / qmid) * k2

    res = integrate_sphere3d(
        integrand,
        spec,
        azimuthal=colinear,
        r_scale=min(math.sqrt(tau1), math.sqrt(tau2), a, az),
        r_peaks=(a, az),
    )
    from .kernel import point_kernel

    rhs = (wz / den) * point_kernel(t_time - r_time, x, z, p)
    absres = abs(res.value - rhs)
    return ResidualReport(
        lhs=res.value,
        rhs=rhs,
        abs_residual=absres,
        rel_residual=absres / abs(rhs),
        quad_error=res.error_estimate,
        geometry="colinear" if colinear else "generic",
    )


def normalization(s, t, x, p: ModelParams, spec=None):
    """int p_{s,t}(x, y) dy by honest spherical quadrature (should be 1)."""
    TimePair(s, t).validate(p)
    spec = spec or QuadratureSpec(abs_tol=1e-13, rel_tol=1e-10)
    x = as_point(x)
    a = float(np.linalg.norm(x))
    tau = t - s
    den = 1.0 + q_closed(p.T - s, a, p)
    c = (4.0 * math.pi * tau) ** (-1.5)

    def integrand(r, u, phi):
        d2 = a * a + r * r - 2.0 * a * r * u
        k = c * np.exp(-d2 / (4.0 * tau)) + interaction_radial(tau, a, r, p.beta)
        w = 1.0 + q_profile(p.T - t, r, p)
        return (w / den) * k * np.ones_like(phi)

    res = integrate_sphere3d(
        integrand, spec, azimuthal=True, r_scale=min(math.sqrt(tau), a), r_peaks=(a,)
    )
    return res


@dataclass(frozen=True)
class MomentReport:
    m: int
    gaps: tuple
    moments: tuple
    slope: float
    fitted_constant: float
    bound_holds: bool


def moment_bound_check(m, x, p: ModelParams, spec=None, s=0.0, ladder=None):
    """2m-th centered moment of the one-step density over a gap ladder.

    Fits the log-log slope of the moment against the gap (expected m) and
    verifies moment <= C (t-s)^m / |x| with C fitted on the coarsest rung
    and doubled for headroom (finite-gap corrections are not monotone).
    """
    if m < 1 or int(m) != m:
        raise DomainError("moment order must be a positive integer")
    spec = spec or QuadratureSpec(abs_tol=1e-13, rel_tol=1e-9)
    x = as_point(x)
    a = float(np.linalg.norm(x))
    if ladder is None:
        ladder = tuple(p.T * 2.0 ** (-k) for k in range(3, 9))
    moments = []
    for gap in ladder:
        t = s + gap
        if t > p.T:
            raise DomainError("ladder exceeds the horizon")
        tau = gap
        den = 1.0 + q_closed(p.T - s, a, p)
        c = (4.0 * math.pi * tau) ** (-1.5)

        def integrand(r, u, phi):
            d2 = np.maximum(a * a + r * r - 2.0 * a * r * u, 0.0)
            k = c * np.exp(-d2 / (4.0 * tau)) + interaction_radial(tau, a, r, p.beta)
            w = 1.0 + q_profile(p.T - t, r, p)
            return (w / den) * k * d2**m * np.ones_like(phi)

        res = integrate_sphere3d(
            integrand,
            spec,
            azimuthal=True,
            r_scale=min(math.sqrt(tau * (1.0 + 2.0 * m)), a),
            r_peaks=(a, a + 2.0 * math.sqrt(2.0 * m * tau)),
        )
        moments.append(res.value)
    logg = np.log(np.asarray(ladder))
    logm = np.log(np.asarray(moments))
    slope = float(np.polyfit(logg, logm, 1)[0])
    c_fit = 2.0 * moments[0] * a / ladder[0] ** m
    holds = all(mom <= c_fit * g**m / a for g, mom in zip(ladder, moments))
    return MomentReport(m, tuple(ladder), tuple(moments), slope, c_fit, holds)


def tail_mass(s, t, x, R, p: ModelParams, spec=None):
    """Mass of {|y| > R} under p_{s,t}(x, .), via the radial profile."""
    TimePair(s, t).validate(p)
    x = as_point(x)
    a = float(np.linalg.norm(x))
    if R < a:
        raise DomainError("tail_mass requires R >= |x|")
    spec = spec or QuadratureSpec(abs_tol=1e-16, rel_tol=1e-9)
    tau = t - s

    def profile(r):
        return doob_radial_marginal(s, t, a, r, p)

    res = integrate_semiinfinite(
        profile, R, spec, scale=2.0 * math.sqrt(tau), peaks=(a,), peak_width=math.sqrt(tau)
    )
    return min(max(res.value, 0.0), 1.0)


def boundary_mass(s, t, x, p: ModelParams, spec=None):
    """Mass of the killing ball {|y| <= eps} under p_{s,t}(x, .)."""
    TimePair(s, t).validate(p)
    x = as_point(x)
    a = float(np.linalg.norm(x))
    if a <= p.eps:
        raise DomainError("starting point must lie outside the killing ball")
    spec = spec or QuadratureSpec(abs_tol=1e-300, rel_tol=1e-9)

    def profile(r):
        return doob_radial_marginal(s, t, a, r, p)

    res = integrate_interval(profile, 1e-9 * p.eps, p.eps, spec)
    return max(res.value, 0.0)


def two_step_boundary_mass(r_time, s_time, t_time, x, delta, p: ModelParams, spec=None):
    """Annulus-then-inside mass: through (eps, eps + delta] at time s, killed by t."""
    if not (0.0 <= r_time < s_time < t_time <= p.T):
        raise DomainError("need 0 <= r < s < t <= T")
    x = as_point(x)
    a = float(np.linalg.norm(x))
    spec = spec or QuadratureSpec(abs_tol=1e-300, rel_tol=1e-8)

    # inner boundary mass as a function of the intermediate radius, on a
    # fixed Gauss grid (smooth integrand, no adaptivity needed)
    nodes, weights = np.polynomial.legendre.leggauss(96)
    lo = 1e-9 * p.eps
    rr = 0.5 * (p.eps - lo) * (nodes + 1.0) + lo
    ww = 0.5 * (p.eps - lo) * weights

    def inner(b):
        b = np.asarray(b, dtype=float)
        prof = doob_radial_marginal(s_time, t_time, b[:, None], rr[None, :], p)
        return prof @ ww

    def outer(b):
        return doob_radial_marginal(r_time, s_time, a, b, p) * inner(b)

    res = integrate_interval(outer, p.eps, p.eps + delta, spec)
    return max(res.value, 0.0)


@dataclass(frozen=True)
class IntegrabilityReport:
    free_part: float
    interaction_part: float
    total: float
    expected: float
    rel_residual: float
    finite: bool


def integrability_check(s, t, x, p: ModelParams, spec=None):
    """int P^b_{t-s}(x, y) (1 + Q_{T-t}(y)) dy, compared with 1 + Q_{T-s}(x).

    Reports the free-kernel and interaction contributions separately.
    """
    TimePair(s, t).validate(p)
    spec = spec or QuadratureSpec(abs_tol=1e-13, rel_tol=1e-9)
    x = as_point(x)
    a = float(np.linalg.norm(x))
    if a == 0.0:
        raise DomainError("x must be nonzero")
    tau = t - s

    def f_free(r):
        return free_radial_marginal(tau, a, r) * (1.0 + q_profile(p.T - t, r, p))

    def f_int(r):
        w = FOUR_PI * r * r * interaction_radial(tau, a, r, p.beta)
        return w * (1.0 + q_profile(p.T - t, r, p))

    scale = min(2.0 * math.sqrt(tau), max(a, p.eps))
    lo = 1e-12 * min(a, 1.0)
    i1 = integrate_semiinfinite(f_free, lo, spec, scale=scale, peaks=(a,), peak_width=math.sqrt(tau))
    i2 = integrate_semiinfinite(f_int, lo, spec, scale=scale, peaks=(a,), peak_width=math.sqrt(tau))
    total = i1.value + i2.value
    expected = 1.0 + q_closed(p.T - s, a, p)
    return IntegrabilityReport(
        free_part=i1.value,
        interaction_part=i2.value,
        total=total,
        expected=expected,
        rel_residual=abs(total - expected) / expected,
        finite=math.isfinite(total),
    )
