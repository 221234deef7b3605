"""Adaptive quadrature for the integrals behind the kernel identities.

A single engine serves three entry points:

* ``integrate_interval``     -- finite interval, adaptive bisection;
* ``integrate_semiinfinite`` -- [lower, inf), geometric panel sweep
  (uniform panels in log(1 + (u - lower)/scale), i.e. an exponential map)
  with adaptive bisection inside each panel;
* ``integrate_sphere3d``     -- spherical integrals with an adaptive radial
  sweep and a tensor angular rule refined by node doubling, plus a 2-D
  fast path for azimuthally symmetric integrands.

Panels are estimated with embedded Gauss-Legendre rules (10 vs 20 nodes);
the difference is the (conservative) panel error.  Nodes come from
numpy.polynomial.legendre at machine precision, so no tabulated constants
are involved.  Integrands must accept numpy arrays; they may return an
extra trailing value axis (vector-valued integrands), in which case the
max-norm drives refinement.

Everything is sequential and deterministic: for a fixed spec the same
call produces bit-identical results.
"""

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .errors import NotConvergedError

_GL_CACHE = {}


def _gl(n):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and budgets for one quadrature call."""

    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_subdivisions: int = 4000
    tail_cutoff_multiplier: float = 10.0

    def __post_init__(self):
        if not (self.abs_tol > 0.0 and self.rel_tol > 0.0):
            raise ValueError("tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be at least 1")
        if self.tail_cutoff_multiplier < 6.0:
            raise ValueError("tail_cutoff_multiplier must be at least 6")

    def tightened(self, factor):
        return QuadratureSpec(
            abs_tol=self.abs_tol * factor,
            rel_tol=self.rel_tol * factor,
            max_subdivisions=self.max_subdivisions,
            tail_cutoff_multiplier=self.tail_cutoff_multiplier,
        )


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    error_estimate: float
    evaluations: int
    converged: bool


def _panel(f, a, b):
    """Embedded GL10/GL20 estimate of int_a^b f.

    Returns (value20, err, evaluations) where value may be an ndarray for
    vector-valued integrands.
    """
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    x10, w10 = _gl(10)
    x20, w20 = _gl(20)
    nodes = np.concatenate([mid + half * x10, mid + half * x20])
    vals = np.asarray(f(nodes), dtype=float)
    i10 = half * np.tensordot(w10, vals[:10], axes=(0, 0))
    i20 = half * np.tensordot(w20, vals[10:], axes=(0, 0))
    err = float(np.max(np.abs(i20 - i10)))
    return i20, err, 30


class _Budget:
    """Shared subdivision budget across the panels of one public call."""

    def __init__(self, spec):
        self.left = spec.max_subdivisions

    def take(self):
        if self.left <= 0:
            return False
        self.left -= 1
        return True


def _adapt(f, a, b, abs_tol, rel_tol, budget):
    """Adaptive bisection on [a, b]; returns (value, err, evals, ok)."""
    value, err, evals = _panel(f, a, b)
    segments = [(-err, 0, a, b, value, err)]
    seq = 1
    total_val = value
    total_err = err
    ok = True
    while True:
        tol = max(abs_tol, rel_tol * float(np.max(np.abs(total_val))))
        if total_err <= tol:
            break
        neg_err, _, sa, sb, sval, serr = heapq.heappop(segments)
        width = sb - sa
        if serr <= 1e-3 * tol / max(len(segments) + 1, 1) or width <= 1e-15 * max(abs(sa), abs(sb), 1.0):
            # dominant segment cannot be improved further
            heapq.heappush(segments, (neg_err, seq, sa, sb, sval, serr))
            seq += 1
            ok = False
            break
        if not budget.take():
            heapq.heappush(segments, (neg_err, seq, sa, sb, sval, serr))
            seq += 1
            ok = False
            break
        smid = 0.5 * (sa + sb)
        lval, lerr, le = _panel(f, sa, smid)
        rval, rerr, re = _panel(f, smid, sb)
        evals += le + re
        total_val = total_val - sval + lval + rval
        total_err = total_err - serr + lerr + rerr
        heapq.heappush(segments, (-lerr, seq, sa, smid, lval, lerr))
        heapq.heappush(segments, (-rerr, seq + 1, smid, sb, rval, rerr))
        seq += 2
    # re-sum in spatial order so the result does not depend on heap history
    ordered = sorted(segments, key=lambda s: s[2])
    total_val = ordered[0][4]
    total_err = ordered[0][5]
    for s in ordered[1:]:
        total_val = total_val + s[4]
        total_err += s[5]
    return total_val, total_err, evals, ok


def integrate_interval(f, a, b, spec=None, strict=True):
    """Integrate a (possibly vector-valued) integrand over [a, b]."""
    spec = spec or QuadratureSpec()
    budget = _Budget(spec)
    value, err, evals, _ = _adapt(f, a, b, spec.abs_tol, spec.rel_tol, budget)
    ok = err <= max(spec.abs_tol, spec.rel_tol * float(np.max(np.abs(value))))
    scalar = np.ndim(value) == 0
    out = QuadratureResult(float(value) if scalar else value, err, evals, ok)
    if strict and not ok:
        raise NotConvergedError(
            f"interval quadrature did not converge (err~{err:.3e})",
            value=out.value,
            error_estimate=err,
        )
    return out


def _sweep_edges(lower, s0, peaks, peak_width):
    """Panel edges for a semi-infinite sweep: hint edges then geometric.

    Edges are placed at each peak hint and around it (peak +- width), so a
    narrow spike far from ``lower`` sits on a panel boundary instead of
    hiding inside a wide panel.  Returns (fixed_edges, tail_start).
    """
    edges = {lower}
    w = peak_width if (peak_width and peak_width > 0.0) else s0
    for c in peaks or ():
        if c > lower:
            for e in (c - 4.0 * w, c - w, c, c + w, c + 4.0 * w):
                if e > lower:
                    edges.add(e)
            mid = lower + 0.5 * (c - lower)
            if mid > lower:
                edges.add(mid)
    fixed = sorted(edges)
    return fixed, fixed[-1]


def integrate_semiinfinite(f, lower, spec=None, scale=None, peaks=(), peak_width=None, strict=True):
    """Integrate f over [lower, inf) for integrands with decaying tails.

    After any peak-hint edges, panels are geometric in (u - lower): the
    k-th tail panel doubles in width (uniform panels under the exponential
    map), each refined by adaptive bisection.  The sweep stops once two
    consecutive panels contribute less than tol * 2^-cutoff with cutoff =
    spec.tail_cutoff_multiplier, so enlarging the cutoff can only extend
    the sweep (and by construction changes the result by less than
    abs_tol).  ``peaks`` lists locations where the integrand is known to
    concentrate (e.g. a Gaussian factor's center); hint edges make the
    sweep robust against spikes far from ``lower``.
    """
    spec = spec or QuadratureSpec()
    s0 = float(scale) if scale else 1.0
    if not (s0 > 0.0 and math.isfinite(s0)):
        raise ValueError("scale must be positive and finite")
    budget = _Budget(spec)
    tail_factor = 2.0 ** (-spec.tail_cutoff_multiplier)

    fixed, tail_start = _sweep_edges(lower, s0, peaks, peak_width)
    panels = list(zip(fixed, fixed[1:]))

    total = None
    total_err = 0.0
    evals = 0
    quiet = 0
    tail_done = False
    max_tail_panels = 100
    k = 0
    while True:
        if panels:
            a, b = panels.pop(0)
            in_tail = False
        else:
            a = tail_start + s0 * (2.0**k - 1.0)
            b = tail_start + s0 * (2.0 ** (k + 1) - 1.0)
            k += 1
            in_tail = True
            if k > max_tail_panels:
                break
        ref = 0.0 if total is None else float(np.max(np.abs(total)))
        panel_abs = max(spec.abs_tol, spec.rel_tol * ref) / 8.0
        val, err, ev, _ = _adapt(f, a, b, panel_abs, spec.rel_tol / 8.0, budget)
        total = val if total is None else total + val
        total_err += err
        evals += ev
        if in_tail:
            tol_now = max(spec.abs_tol, spec.rel_tol * float(np.max(np.abs(total))))
            if float(np.max(np.abs(val))) <= tol_now * tail_factor:
                quiet += 1
                if quiet >= 2 and k >= 3:
                    tail_done = True
                    break
            else:
                quiet = 0

    final_tol = max(spec.abs_tol, spec.rel_tol * float(np.max(np.abs(total))))
    converged = tail_done and total_err <= final_tol
    scalar = np.ndim(total) == 0
    out = QuadratureResult(float(total) if scalar else total, total_err, evals, converged)
    if strict and not converged:
        raise NotConvergedError(
            f"semi-infinite quadrature did not converge (err~{total_err:.3e})",
            value=out.value,
            error_estimate=total_err,
        )
    return out


def integrate_two_sided(f, center, spec=None, scale=None, strict=True):
    """Integrate f over the whole real line around a given center."""
    spec = spec or QuadratureSpec()
    right = integrate_semiinfinite(lambda u: f(u), center, spec, scale, strict)
    left = integrate_semiinfinite(lambda u: f(2.0 * center - u), center, spec, scale, strict)
    return QuadratureResult(
        right.value + left.value,
        right.error_estimate + left.error_estimate,
        right.evaluations + left.evaluations,
        right.converged and left.converged,
    )


def integrate_radial_against_kernel(s, x, F, spec=None, strict=True):
    """Integral of P_s(x, y) F(|y|)/|y| over R^3 via the 1-D reduction.

    Uses the exact identity
        (4 pi s / |x|) * int_0^inf (P_s(r - |x|) - P_s(r + |x|)) F(r) dr,
    where P_s is the radial free kernel, so only a single radial
    quadrature is needed.
    """
    from .special import gauss_radial  # local import to avoid cycles

    spec = spec or QuadratureSpec()
    x = np.asarray(x, dtype=float)
    a = float(np.linalg.norm(x)) if x.ndim else float(abs(x))
    if not (s > 0.0):
        raise ValueError("time must be positive")
    if a <= 0.0:
        raise ValueError("radial reduction requires x != 0")

    def integrand(r):
        return (gauss_radial(s, np.abs(r - a)) - gauss_radial(s, r + a)) * F(r)

    res = integrate_semiinfinite(integrand, 0.0, spec, scale=min(2.0 * math.sqrt(s), a + 2.0 * math.sqrt(s)), strict=strict)
    factor = 4.0 * math.pi * s / a
    return QuadratureResult(factor * res.value, factor * res.error_estimate, res.evaluations, res.converged)


_ANGULAR_LEVELS = (12, 24, 48, 96, 192, 384)


def _angular_integral(g, r_nodes, level, azimuthal):
    """Tensor angular rule at a refinement level for fixed radii.

    Gauss-Legendre in cos(theta); midpoint (periodic trapezoid) in phi.
    Returns sum over angles of g * r^2 for each radius.
    """
    n_u = _ANGULAR_LEVELS[level]
    u, wu = _gl(n_u)
    r = np.asarray(r_nodes, dtype=float)
    if azimuthal:
        vals = g(r[:, None], u[None, :], np.zeros((1, 1)))
        ang = 2.0 * math.pi * np.tensordot(vals, wu, axes=(1, 0))
    else:
        n_phi = n_u
        phi = 2.0 * math.pi * (np.arange(n_phi) + 0.5) / n_phi
        vals = g(r[:, None, None], u[None, :, None], phi[None, None, :])
        ang = (2.0 * math.pi / n_phi) * np.tensordot(np.sum(vals, axis=2), wu, axes=(1, 0))
    return ang * r * r


def integrate_sphere3d(g, spec=None, azimuthal=False, r_scale=1.0, r_peaks=(), strict=True):
    """Spherical integral int g(r, cos t, phi) r^2 dphi dcos(t) dr.

    The radial direction is a semi-infinite sweep from 0 (hint edges at
    ``r_peaks``, then geometric panels, adaptive bisection inside each);
    within each radial panel the tensor angular rule is refined by node
    doubling until the panel value is stable.  ``azimuthal=True``
    activates the 2-D fast path for integrands that do not depend on phi.
    ``r_scale`` sets the initial tail panel width and the hint-edge
    spacing around each peak.
    """
    spec = spec or QuadratureSpec()
    budget = _Budget(spec)
    tail_factor = 2.0 ** (-spec.tail_cutoff_multiplier)
    s0 = max(float(r_scale), 1e-8)

    level_state = {"level": 0}

    def refined_f(r_nodes):
        level = level_state["level"]
        coarse = _angular_integral(g, r_nodes, level, azimuthal)
        while level + 1 < len(_ANGULAR_LEVELS):
            fine = _angular_integral(g, r_nodes, level + 1, azimuthal)
            gap = float(np.max(np.abs(fine - coarse)))
            ref = float(np.max(np.abs(fine))) + 1e-300
            if gap <= max(spec.abs_tol * 1e-2, spec.rel_tol * 1e-2 * ref):
                level_state["level"] = level
                return fine
            level += 1
            coarse = fine
        level_state["level"] = level
        return coarse

    fixed, tail_start = _sweep_edges(0.0, s0, r_peaks, r_scale)
    panels = list(zip(fixed, fixed[1:]))

    total = 0.0
    total_err = 0.0
    evals = 0
    quiet = 0
    tail_done = False
    max_tail_panels = 90
    k = 0
    while True:
        if panels:
            a, b = panels.pop(0)
            in_tail = False
        else:
            a = tail_start + s0 * (2.0**k - 1.0)
            b = tail_start + s0 * (2.0 ** (k + 1) - 1.0)
            k += 1
            in_tail = True
            if k > max_tail_panels:
                break
        panel_abs = max(spec.abs_tol, spec.rel_tol * abs(total)) / 8.0
        val, err, ev, _ = _adapt(refined_f, a, b, panel_abs, spec.rel_tol / 8.0, budget)
        total += float(val)
        total_err += err
        evals += ev
        if in_tail:
            tol_now = max(spec.abs_tol, spec.rel_tol * abs(total))
            if abs(float(val)) <= tol_now * tail_factor:
                quiet += 1
                if quiet >= 2 and k >= 3:
                    tail_done = True
                    break
            else:
                quiet = 0

    converged = tail_done and total_err <= max(spec.abs_tol, spec.rel_tol * abs(total))
    out = QuadratureResult(total, total_err, evals, converged)
    if strict and not converged:
        raise NotConvergedError(
            f"spherical quadrature did not converge (err~{total_err:.3e})",
            value=total,
            error_estimate=total_err,
        )
    return out
