"""Dyadic-skeleton path sampling, step interpolations, and tightness tables.

Paths are unweighted: each step draws the next state directly from the
Doob transition of the level-m interval and kills the draw if it lands in
the closed ball of radius eps.  The radius comes from a tabulated inverse
CDF of the closed-form radial marginal (alpha-lattice interpolated, see
tables.py); the polar angle is drawn by exact Newton inversion of its
closed-form conditional CDF, and the azimuth is uniform.  The only
path-law bias is therefore the radial-table discretization, whose bound
is reported in the run metadata.

Randomness is counter-based per (seed, salt, block, step left endpoint),
so runs are reproducible bit-for-bit regardless of worker count, and a
level-(m+1) run shares draws with a level-m run on the steps whose left
endpoints coincide.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dyadic import DyadicGrid, left_projection_index
from .errors import DomainError
from .kernel import CEMETERY, FOUR_PI, ModelParams, as_point, interaction_radial, is_cemetery, rho_distance
from .doob import kernel_radial_marginal
from .kernel import q_profile
from .tables import ALPHA_REL_WIDTH, LatticeSampler

BLOCK_SIZE = 16384

_MARGINAL_SAMPLERS = {}


def _marginal_sampler(tau, t_left_to_horizon, p: ModelParams):
    """Lattice sampler of the scaled radius under the Doob step marginal.

    Keyed by the exact bit patterns of (tau, T - t_next, beta, eps).
    """
    key = (
        np.float64(tau).tobytes(),
        np.float64(t_left_to_horizon).tobytes(),
        np.float64(p.beta).tobytes(),
    )
    sampler = _MARGINAL_SAMPLERS.get(key)
    if sampler is None:
        sq2 = 2.0 * math.sqrt(tau)
        bb = FOUR_PI * p.beta * math.sqrt(tau)

        def family_pdf(alpha_col, rho_row):
            r = sq2 * rho_row
            w = 1.0 + q_profile(t_left_to_horizon, r, p)
            return kernel_radial_marginal(tau, sq2 * alpha_col, r, p.beta) * w * sq2

        def hi_fn(alpha):
            return alpha + bb + 14.0

        sampler = LatticeSampler(family_pdf, hi_fn)
        _MARGINAL_SAMPLERS[key] = sampler
    return sampler


def _sample_costheta(a, r, tau, beta, v):
    """Invert the conditional CDF of cos(theta) given both radii.

    The conditional density is c e^{-(a^2+r^2-2 a r u)/(4 tau)} + W with
    W the angle-free interaction part; its CDF is elementary, and the
    cumulative function is convex in u, so Newton from u = 1 converges
    monotonically.  Vectorized; fixed iteration cap with bisection-free
    clipping.
    """
    c = (4.0 * math.pi * tau) ** (-1.5)
    w = interaction_radial(tau, a, r, beta)
    kf = a * r / (2.0 * tau)
    base = a * a + r * r

    def e_term(u):
        return np.exp(-(base - 2.0 * a * r * u) / (4.0 * tau))

    e_lo = e_term(-1.0)
    pref = c / np.maximum(kf, 1e-300) * 0.5 * 2.0  # c * (2 tau)/(a r)

    def cum(u):
        return pref * (e_term(u) - e_lo) + w * (u + 1.0)

    z = cum(1.0)
    target = v * z
    u = np.ones_like(np.asarray(a, dtype=float))
    for _ in range(60):
        g = cum(u) - target
        gp = c * e_term(u) + w
        step = g / np.maximum(gp, 1e-300)
        u_new = np.clip(u - step, -1.0, 1.0)
        if float(np.max(np.abs(u_new - u))) < 1e-13:
            u = u_new
            break
        u = u_new
    return np.clip(u, -1.0, 1.0)


def _orthonormal_frames(e):
    """Per-row orthonormal complements of unit vectors e (n, 3)."""
    helper = np.where(np.abs(e[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    e1 = helper - e * np.sum(helper * e, axis=1, keepdims=True)
    e1 = e1 / np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(e, e1)
    return e1, e2


def _step_generator(seed, salt, block_idx, left_time):
    left_bits = int(np.float64(left_time).view(np.uint64))
    ss = np.random.SeedSequence(entropy=(int(seed), int(salt), int(block_idx), left_bits, 0x5E))
    return np.random.Generator(np.random.Philox(ss))


def _advance_skeleton_block(pos, alive, times, p, seed, salt, block_idx, record=None, stats=None):
    beta = p.beta
    for j in range(1, len(times)):
        t0, t1 = times[j - 1], times[j]
        tau = t1 - t0
        gen = _step_generator(seed, salt, block_idx, t0)
        u3 = gen.random((pos.shape[0], 3))
        if np.any(alive):
            idx = np.nonzero(alive)[0]
            cur = pos[idx]
            a = np.linalg.norm(cur, axis=1)
            sq2 = 2.0 * math.sqrt(tau)
            alpha = a / sq2
            sampler = _marginal_sampler(tau, p.T - t1, p)
            rho = sampler.sample(alpha, u3[idx, 0])
            r = sq2 * np.maximum(rho, 0.0)
            if stats is not None:
                stats["alpha_max"] = max(stats.get("alpha_max", 0.0), float(np.max(alpha)))
                stats["tau_min"] = min(stats.get("tau_min", math.inf), tau)
            u = _sample_costheta(a, np.maximum(r, 1e-300), tau, beta, u3[idx, 1])
            phi = 2.0 * math.pi * u3[idx, 2]
            e = cur / a[:, None]
            e1, e2 = _orthonormal_frames(e)
            su = np.sqrt(np.maximum(1.0 - u * u, 0.0))
            newpos = r[:, None] * (
                u[:, None] * e + su[:, None] * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
            )
            killed = r <= p.eps
            pos[idx] = newpos
            alive[idx[killed]] = False
        if record is not None:
            record.append((pos.copy(), alive.copy()))
    return pos, alive


def _marginal_block_task(args):
    (block_idx, nb, times, record_step, x0, p_fields, seed, salt) = args
    p = ModelParams(*p_fields)
    pos = np.tile(np.asarray(x0, dtype=float), (nb, 1))
    alive = np.ones(nb, dtype=bool)
    _advance_skeleton_block(pos, alive, times[: record_step + 1], p, seed, salt, block_idx)
    return block_idx, np.linalg.norm(pos, axis=1), alive


@dataclass
class SkeletonPath:
    """States of one sampled dyadic skeleton at the level-m grid times."""

    m: int
    times: tuple
    states: list
    seed: int
    path_index: int = 0

    def killing_record(self):
        for t, st in zip(self.times, self.states):
            if is_cemetery(st):
                return KillingRecord(tau=t)
        return KillingRecord(tau=None)


@dataclass(frozen=True)
class KillingRecord:
    """First dyadic time in the cemetery, or None if the path survived."""

    tau: object


@dataclass
class StepPath:
    """Right-continuous step function on [0, T] with jumps on grid times."""

    jump_times: tuple
    values: list
    T: float

    @staticmethod
    def from_skeleton(sp: SkeletonPath, T):
        jumps = [sp.times[0]]
        vals = [sp.states[0]]
        for t, st in zip(sp.times[1:], sp.states[1:]):
            prev = vals[-1]
            same = (is_cemetery(prev) and is_cemetery(st)) or (
                not is_cemetery(prev) and not is_cemetery(st) and np.array_equal(prev, st)
            )
            if not same:
                jumps.append(t)
                vals.append(st)
        return StepPath(tuple(jumps), vals, T)

    def value_at(self, t):
        if not (0.0 <= t <= self.T):
            raise DomainError("time outside [0, T]")
        i = int(np.searchsorted(np.asarray(self.jump_times), t, side="right")) - 1
        return self.values[max(i, 0)]


def sample_skeleton(m, x0, p: ModelParams, seed, path_index=0):
    """One skeleton path at level m started from x0 (interior or cemetery)."""
    grid = DyadicGrid(m, p.T)
    times = tuple(grid.times())
    if is_cemetery(x0):
        return SkeletonPath(m, times, [CEMETERY] * len(times), seed, path_index)
    x0 = as_point(x0)
    block_idx, offset = divmod(path_index, BLOCK_SIZE)
    nb = offset + 1
    pos = np.tile(x0, (nb, 1))
    alive = np.ones(nb, dtype=bool)
    record = []
    _advance_skeleton_block(pos, alive, times, p, seed, 0, block_idx, record=record)
    states = [x0]
    for step_pos, step_alive in record:
        states.append(step_pos[offset].copy() if step_alive[offset] else CEMETERY)
    return SkeletonPath(m, times, states, seed, path_index)


def sample_skeleton_batch(m, x0, p: ModelParams, n_paths, seed):
    """Full paths for moderate n (path export, coupling studies)."""
    grid = DyadicGrid(m, p.T)
    times = tuple(grid.times())
    x0 = as_point(x0)
    paths = []
    for b in range(0, n_paths, BLOCK_SIZE):
        nb = min(BLOCK_SIZE, n_paths - b)
        pos = np.tile(x0, (nb, 1))
        alive = np.ones(nb, dtype=bool)
        record = []
        _advance_skeleton_block(pos, alive, times, p, seed, 0, b // BLOCK_SIZE, record=record)
        for i in range(nb):
            states = [x0]
            for step_pos, step_alive in record:
                states.append(step_pos[i].copy() if step_alive[i] else CEMETERY)
            paths.append(SkeletonPath(m, times, states, seed, b + i))
    return paths


def marginal_radii(m, t, x0, p: ModelParams, n_paths, seed, workers=1):
    """Radii (and alive flags) of |X_t^{(m)}| for n paths; t in [0, T].

    X^{(m)} at t equals the skeleton at the left projection of t, so only
    the steps up to that grid index are simulated.
    """
    grid = DyadicGrid(m, p.T)
    times = tuple(grid.times())
    k = left_projection_index(m, t, p.T)
    x0 = as_point(x0)
    if float(np.linalg.norm(x0)) <= p.eps:
        raise DomainError("start lies inside the killing ball")
    n_blocks = (n_paths + BLOCK_SIZE - 1) // BLOCK_SIZE
    tasks = [
        (
            b,
            min(BLOCK_SIZE, n_paths - b * BLOCK_SIZE),
            times,
            k,
            tuple(x0),
            (p.T, p.beta, p.eps),
            seed,
            0,
        )
        for b in range(n_blocks)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = sorted(ex.map(_marginal_block_task, tasks), key=lambda r: r[0])
    else:
        results = [_marginal_block_task(t_) for t_ in tasks]
    radii = np.concatenate([r[1] for r in results])
    alive = np.concatenate([r[2] for r in results])
    return radii, alive


def interpolate_step(sp: SkeletonPath, t):
    """Value of the step interpolation X^{(m)} at any t in [0, T]."""
    k = left_projection_index(sp.m, t, sp.times[-1])
    return sp.states[k]


def table_bias_bound(stats):
    """Crude upper bound on the path-law bias from radial-table bucketing."""
    amax = stats.get("alpha_max", 0.0)
    return 0.5 * ALPHA_REL_WIDTH**2 * (2.0 * amax * amax + 1.0)


@dataclass(frozen=True)
class DiagnosticTable:
    """Rows (m, threshold, estimate, std_error) plus the sup-over-m column."""

    kind: str
    thresholds: tuple
    rows: tuple                # ((m, threshold, estimate, std_error), ...)
    sup_over_m: tuple          # per threshold

    def monotone(self):
        vals = list(self.sup_over_m)
        return all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


def marginal_tail_diagnostic(t, x0, p: ModelParams, m_range, R_range, n_paths, seed, workers=1):
    """Empirical sup_m P(|Y_t| > R) per R; decreasing to 0 in R."""
    R_range = tuple(sorted(R_range))
    rows = []
    sup = np.zeros(len(R_range))
    for m in m_range:
        radii, alive = marginal_radii(m, t, x0, p, n_paths, seed, workers)
        for i, R in enumerate(R_range):
            hits = alive & (radii > R)
            est = float(np.mean(hits))
            std = math.sqrt(max(est * (1.0 - est), 1e-300) / n_paths)
            rows.append((m, R, est, std))
            sup[i] = max(sup[i], est)
    return DiagnosticTable("tail", R_range, tuple(rows), tuple(sup))


def boundary_approach_diagnostic(t, x0, p: ModelParams, m_range, delta_range, n_paths, seed, workers=1):
    """Empirical sup_m P(eps < |Y_t| <= eps + delta) per delta; to 0 as delta drops."""
    deltas = tuple(sorted(delta_range, reverse=True))
    rows = []
    sup = np.zeros(len(deltas))
    for m in m_range:
        radii, alive = marginal_radii(m, t, x0, p, n_paths, seed, workers)
        for i, d in enumerate(deltas):
            hits = alive & (radii > p.eps) & (radii <= p.eps + d)
            est = float(np.mean(hits))
            std = math.sqrt(max(est * (1.0 - est), 1e-300) / n_paths)
            rows.append((m, d, est, std))
            sup[i] = max(sup[i], est)
    return DiagnosticTable("boundary", deltas, tuple(rows), tuple(sup))


def coupled_interpolations(m, x0, p: ModelParams, seed, path_index=0):
    """Level-(m+1) path and its level-m restriction, as step functions.

    Both are functions of the same underlying skeleton, the natural
    coupling for studying refinement in the Skorokhod metric.
    """
    fine = sample_skeleton(m + 1, x0, p, seed, path_index)
    coarse_states = [fine.states[i] for i in range(0, len(fine.states), 2)]
    coarse_times = tuple(fine.times[i] for i in range(0, len(fine.times), 2))
    coarse = SkeletonPath(m, coarse_times, coarse_states, seed, path_index)
    return StepPath.from_skeleton(coarse, p.T), StepPath.from_skeleton(fine, p.T)


@dataclass(frozen=True)
class J1Bound:
    bound: float
    identity_bound: float
    time_distortion: float
    state_sup: float


def j1_upper_bound(p1: StepPath, p2: StepPath, p: ModelParams):
    """Upper bound on the Skorokhod J1 distance between two step paths.

    Evaluates the identity time change (sup of the state distance over
    the merged jump grid) and, when both paths have the same number of
    jumps, the piecewise-linear change matching jump times; returns the
    smaller bound together with its ingredients.
    """
    merged = sorted(set(p1.jump_times) | set(p2.jump_times))
    sup_id = 0.0
    for u in merged:
        sup_id = max(sup_id, rho_distance(p1.value_at(u), p2.value_at(u), p))
    best = sup_id
    distortion = 0.0
    sup_matched = math.inf
    if len(p1.jump_times) == len(p2.jump_times):
        distortion = max(abs(a - b) for a, b in zip(p1.jump_times, p2.jump_times))
        sup_matched = 0.0
        for v1, v2 in zip(p1.values, p2.values):
            sup_matched = max(sup_matched, rho_distance(v1, v2, p))
        best = min(best, max(distortion, sup_matched))
    return J1Bound(best, sup_id, distortion, 0.0 if math.isinf(sup_matched) else sup_matched)
