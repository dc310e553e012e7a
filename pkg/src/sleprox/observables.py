"""Boundary observables of the flow.

M^x_t = (g'_t(x) / (g_t(x) - W_t))^s with s = 8/kappa - 1 is a local
martingale; x belongs to C_eps when M^x reaches eps^-s before x is
swallowed.  For a pair x < y, u(Z) M^x M^y with Z = X_x / X_y is the
two-point observable, and integrals of M^x against a weight give the
supermartingale Z_t and the statistic Q_a.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from . import specfun
from .streams import u64
from .loewner import (ClockParams, Observer, SimParams, StateError, TrackedPoint,
                      capacity_checkpoints, capacity_hits, cut_levels, evolve, swallow_tol)


class Outcome(enum.Enum):
    RUNNING = "running"
    HIT = "hit"
    SWALLOWED_FIRST = "swallowed_first"
    HORIZON = "horizon"
    MISS = "miss"


def compute_M(point: TrackedPoint, w: float, s_kappa: float) -> float:
    if not point.alive:
        raise StateError(f"M is defined only before swallowing (x0={point.x0})")
    d = point.g - w
    if not (d > 0 and point.gprime > 0):
        raise StateError(f"degenerate state for x0={point.x0}: g-w={d}, g'={point.gprime}")
    return (point.gprime / d) ** s_kappa


@dataclass
class MartingaleTracker(Observer):
    """Follows M^x for the point at `index` of an `evolve` run."""

    x: float
    epsilon: float
    kappa: float
    index: int = 0
    current_M: float = field(init=False)
    tau_step: int | None = field(default=None, init=False)
    outcome: Outcome = field(default=Outcome.RUNNING, init=False)

    def __post_init__(self):
        self.current_M = self.x ** (-self.s)
        if self.current_M >= self.threshold:
            self.tau_step = 0
            self.outcome = Outcome.HIT

    @property
    def s(self):
        return 8.0 / self.kappa - 1.0

    @property
    def threshold(self):
        return self.epsilon ** (-self.s)

    def on_step(self, state):
        if self.outcome is not Outcome.RUNNING:
            return True
        p = state.point(self.index)
        if not p.alive:
            self.current_M = 0.0
            self.outcome = Outcome.SWALLOWED_FIRST
            return True
        self.current_M = compute_M(p, state.w, self.s)
        if self.current_M >= self.threshold:
            self.tau_step = state.step
            self.outcome = Outcome.HIT
            return True
        return False

    def finish(self):
        if self.outcome is Outcome.RUNNING:
            self.outcome = Outcome.HORIZON
        return self.outcome

    def result(self):
        return self.finish()


def u_of_z(z, kappa):
    """u(z) = (1-z)^-s 2F1(1-8/k, 4/k; 8/k; 1-z) for z in (0, 1)."""
    z = float(z)
    if not 0.0 < z < 1.0:
        raise specfun.SpecfunDomainError(f"u(z) needs z in (0, 1), got {z}")
    return _u_of_w(1.0 - z, kappa)


def _u_of_w(w, kappa):
    s = 8.0 / kappa - 1.0
    if w <= 0.5:
        f = specfun.hyp2f1_series(1.0 - 8.0 / kappa, 4.0 / kappa, 8.0 / kappa, w)
    else:
        f = specfun.hyp2f1(specfun.HypParams.for_kappa(kappa, w))
    return w ** (-s) * f


def u_limits(kappa):
    """(lim_{z->0} u, lim_{z->1} u); u blows up like (1-z)^-s at 1 when s > 0."""
    s = 8.0 / kappa - 1.0
    return specfun.hyp2f1_at_one(kappa), (math.inf if s > 0 else 1.0)


@dataclass
class PairTracker(Observer):
    """Joint trackers for x < y and the product u(Z) M^x M^y."""

    tx: MartingaleTracker
    ty: MartingaleTracker
    Z: float = field(init=False)
    value: float = field(init=False)

    def __post_init__(self):
        if not self.tx.x < self.ty.x:
            raise ValueError("pair trackers need x < y")
        self.Z = self.tx.x / self.ty.x
        self.value = self._product()

    def _product(self):
        if self.tx.current_M == 0.0 or self.ty.current_M == 0.0:
            return 0.0
        return u_of_z(self.Z, self.tx.kappa) * self.tx.current_M * self.ty.current_M

    def on_step(self, state):
        a = self.tx.on_step(state)
        b = self.ty.on_step(state)
        px, py = state.point(self.tx.index), state.point(self.ty.index)
        if px.alive and py.alive:
            self.Z = (px.g - state.w) / (py.g - state.w)
        self.value = self._product()
        return a and b

    def result(self):
        return self.tx.finish(), self.ty.finish()


def pair_product(xx, yx, xy, yy, kappa, gap=None):
    """u(Z) M^x M^y from distances X and Y = X/g' of both points (arrays ok).

    gap is X^y - X^x when it is tracked separately from the two distances;
    otherwise it is their difference.
    """
    s = 8.0 / kappa - 1.0
    if gap is None:
        gap = np.asarray(xy, float) - np.asarray(xx, float)
    xx, yx, xy, yy, gap = np.broadcast_arrays(*(np.asarray(v, float) for v in (xx, yx, xy, yy, gap)))
    out = np.zeros(xx.shape)
    for idx in np.ndindex(xx.shape):
        if not (np.isfinite(yx[idx]) and np.isfinite(yy[idx])) or xx[idx] <= 0 or xy[idx] <= 0:
            continue
        # 1 - Z from the gap itself, which avoids cancellation as the points merge
        w = gap[idx] / xy[idx]
        u = _u_of_w(w, kappa) if w > 0.0 else math.inf
        out[idx] = u * (yx[idx] * yy[idx]) ** (-s)
    return out if out.ndim else float(out)


def _golden(f, a, b, tol=1e-10, maximize=False):
    sign = -1.0 if maximize else 1.0
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = sign * f(c), sign * f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = sign * f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = sign * f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def _extremum(f, lim0, lim1, n, maximize):
    zs = (np.arange(n) + 0.5) / n
    vals = np.array([f(z) for z in zs])
    j = int(np.argmax(vals) if maximize else np.argmin(vals))
    lo, hi = zs[max(j - 1, 0)] if j else 0.0, zs[j + 1] if j + 1 < n else 1.0
    lo, hi = max(lo, 1e-12), min(hi, 1 - 1e-12)
    _, v = _golden(f, lo, hi, maximize=maximize)
    cands = [v, lim0, lim1]
    return max(cands) if maximize else min(cands)


def q1_q2(kappa, n=64):
    """q1 = inf u(z) and q2 = sup (1-z)^s u(z) over (0, 1).

    A coarse grid of n points locates the extremum, golden-section search
    refines it, and the analytic endpoint limits are included.
    """
    s = 8.0 / kappa - 1.0
    u0, u1 = u_limits(kappa)
    q1 = _extremum(lambda z: u_of_z(z, kappa), u0, u1, n, maximize=False)
    # (1-z)^s u(z) = 2F1(..; 1-z) tends to the Gamma ratio at 0 and to 1 at 1
    q2 = _extremum(lambda z: (1.0 - z) ** s * u_of_z(z, kappa), u0, 1.0, n, maximize=True)
    if not (0 < q1 < math.inf and 0 < q2 < math.inf):
        raise ArithmeticError(f"q1/q2 search failed for kappa={kappa}: q1={q1}, q2={q2}")
    return q1, q2


def run_C_eps_trial(params: SimParams, x, epsilon, clock: ClockParams | None = None,
                    scheme="capacity", miss_factor=1e-4) -> Outcome:
    """One trial of {x in C_eps}; returns Outcome.HIT or Outcome.MISS.

    scheme "capacity" (default) uses the capacity-clock engine with its
    relative cutoff; scheme "uniform" runs the reference grid of `params`
    with swallow tolerance 4 sqrt(dt) and, for kappa <= 4, the miss cutoff
    M < eps^-s * miss_factor.
    """
    if not (x > 0 and epsilon > 0):
        raise ValueError("x and epsilon must be positive")
    if epsilon >= x:
        return Outcome.HIT
    if scheme == "capacity":
        clock = clock or ClockParams()
        _, st, _, _ = capacity_hits(params.kappa, [x], [epsilon], clock, params.seed, params.run_index)
        return Outcome.HIT if st[0] == K.HIT else Outcome.MISS
    if scheme == "uniform":
        s = params.s_kappa
        m_cut = epsilon ** (-s) * miss_factor if params.kappa <= 4 else 0.0
        r = K.uniform_hit_trial(params.kappa, float(x), float(epsilon), params.dt, params.n_steps,
                                swallow_tol(params.dt), m_cut, u64(params.seed), u64(params.run_index))
        return Outcome.HIT if r else Outcome.MISS
    raise ValueError(f"unknown scheme {scheme!r}")


def run_pair_trial(params: SimParams, x, y, eps_x, eps_y, clock: ClockParams | None = None):
    """Joint indicators (x in C_eps_x, y in C_eps_y) from one driving path."""
    if not 0 < x < y:
        raise ValueError("pair trials need 0 < x < y")
    clock = clock or ClockParams()
    ymin, st, _, _ = capacity_hits(params.kappa, [x, y], [eps_x, eps_y], clock,
                                   params.seed, params.run_index)
    return bool(st[0] == K.HIT), bool(st[1] == K.HIT)


def geometric_cells(lo, hi, ratio=1.05):
    """Cells of a geometric grid on [lo, hi] (last cell truncated): (mid, width)."""
    if not 0 < lo < hi:
        raise ValueError("need 0 < lo < hi")
    n = max(1, math.ceil(math.log(hi / lo) / math.log(ratio) - 1e-12))
    edges = lo * ratio ** np.arange(n + 1)
    edges[-1] = hi
    return 0.5 * (edges[:-1] + edges[1:]), np.diff(edges)


@dataclass
class IntegralObservable:
    """Z = sum_j rho(x_j) M^{x_j} w_j over a midpoint grid."""

    rho: object
    x: np.ndarray
    weights: np.ndarray

    @classmethod
    def geometric(cls, rho, lo, hi, ratio=1.05):
        x, w = geometric_cells(lo, hi, ratio)
        return cls(rho, x, w)

    @property
    def rho_values(self):
        return np.asarray([self.rho(v) for v in self.x], dtype=float)

    def value(self, m):
        return float(np.sum(self.rho_values * self.weights * np.asarray(m, float)))

    def initial(self, kappa):
        s = 8.0 / kappa - 1.0
        return self.value(self.x ** (-s))


class _ZObserver(Observer):
    def __init__(self, obs, s):
        self.obs, self.s, self.series = obs, s, []
        self.rw = obs.rho_values * obs.weights

    def on_step(self, state):
        d = state.g - state.w
        m = np.where(state.alive_mask() & (d > 0), (state.gprime / np.where(d > 0, d, 1.0)) ** self.s, 0.0)
        self.series.append(float(np.sum(self.rw * m)))
        return False

    def result(self):
        return np.array(self.series)


def track_Z_supermartingale(params: SimParams, obs: IntegralObservable, tcheck=None,
                            clock: ClockParams | None = None, eta=1e-8):
    """Series of Z_t for one run.

    Without tcheck: the uniform grid of `params`, one value per step
    (starting with Z_0).  With tcheck: capacity-clock snapshots at those
    times, each M^x stopped once it falls below eta M^x_0 (a stopped
    supermartingale is still one).  Swallowed points contribute 0.
    """
    s = params.s_kappa
    z0 = obs.initial(params.kappa)
    if tcheck is None:
        zo = _ZObserver(obs, s)
        evolve(params, list(obs.x), [zo])
        return np.concatenate([[z0], zo.result()])
    clock = clock or ClockParams()
    cut = cut_levels(obs.x, params.kappa, eta) if eta else np.inf
    _, ys, _, _ = capacity_checkpoints(params.kappa, obs.x, tcheck, ycut=cut, clock=clock,
                                       seed=params.seed, run=params.run_index)
    m = np.where(np.isfinite(ys), ys, np.inf) ** (-s)
    return (obs.rho_values * obs.weights) @ m


def q_weight(h, kappa, x):
    """rho = Lambda_kappa^h for kappa <= 4 and h^(s-1) (same formula) above 4."""
    from .criterion import lambda_eval
    if kappa <= 4:
        return lambda_eval(h, kappa, x)
    return h(x) ** (8.0 / kappa - 2.0)


def _mass_cells(x, w, h, kappa):
    s = 8.0 / kappa - 1.0
    return np.array([q_weight(h, kappa, v) * v ** (-s) for v in x]) * w


class RangeError(ValueError):
    pass


def solve_b(h, kappa, a, ratio=1.05, x_max=1e8, rtol=1e-12):
    """b with sum over the geometric midpoint grid of rho(x) x^-s dx = 1 on [a, b]."""
    edge = a
    mass = 0.0
    while True:
        nxt = edge * ratio
        cell = q_weight(h, kappa, 0.5 * (edge + nxt)) * (0.5 * (edge + nxt)) ** (-(8.0 / kappa - 1.0)) * (nxt - edge)
        if mass + cell >= 1.0:
            break
        mass += cell
        edge = nxt
        if edge > x_max:
            raise RangeError(f"normalization mass only {mass:.6g} by x_max={x_max:g}")
    lo, hi = edge, edge * ratio
    s = 8.0 / kappa - 1.0

    def part(b):
        m = 0.5 * (edge + b)
        return mass + q_weight(h, kappa, m) * m ** (-s) * (b - edge)

    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if part(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class QStatistic:
    """Q_a = sum_j rho(x_j) h(x_j)^-s 1{x_j in C_h(x_j)} w_j on [a, b]."""

    kappa: float
    a: float
    b: float
    x: np.ndarray
    weights: np.ndarray
    rho: np.ndarray
    hx: np.ndarray

    @classmethod
    def build(cls, h, kappa, a, ratio=1.05, x_max=1e8):
        b = solve_b(h, kappa, a, ratio, x_max)
        x, w = geometric_cells(a, b, ratio)
        rho = np.array([q_weight(h, kappa, v) for v in x])
        hx = np.array([h(v) for v in x], dtype=float)
        return cls(kappa, a, b, x, w, rho, hx)

    @property
    def coeff(self):
        return self.rho * self.hx ** (-(8.0 / self.kappa - 1.0)) * self.weights

    def normalization(self):
        s = 8.0 / self.kappa - 1.0
        return float(np.sum(self.rho * self.x ** (-s) * self.weights))

    def value(self, hit):
        return float(np.sum(self.coeff * np.asarray(hit, bool)))


def compute_Q(params: SimParams, h, a, clock: ClockParams | None = None, qs: QStatistic | None = None):
    """Q_a on the run of `params` (capacity clock)."""
    qs = qs or QStatistic.build(h, params.kappa, a)
    clock = clock or ClockParams()
    _, st, _, _ = capacity_hits(params.kappa, qs.x, qs.hx, clock, params.seed, params.run_index)
    return qs.value(st == K.HIT)
