"""Monte Carlo experiments.

Every run r of an experiment uses the streams of (seed, r), so results do
not depend on how runs are sharded across threads.  Shards are merged in
run order through `EstimatorAccumulator`, whose sums are exact (Shewchuk
partials), so merging is associative and commutative bit for bit.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats
from scipy.special import gammaincc

from . import _kernels as K
from . import criterion, observables, specfun
from .loewner import (ClockParams, SimParams, capacity_checkpoints, capacity_gaps,
                      capacity_hits, cut_levels)
from .streams import check_seed

# ----------------------------------------------------------------------
# accumulators


def _grow(partials, x):
    # Shewchuk: keep a list of non-overlapping floats whose sum is exact
    i = 0
    for y in partials:
        if abs(x) < abs(y):
            x, y = y, x
        hi = x + y
        lo = y - (hi - x)
        if lo:
            partials[i] = lo
            i += 1
        x = hi
    partials[i:] = [x]


@dataclass
class EstimatorAccumulator:
    n: int = 0
    _s: list = field(default_factory=list)
    _q: list = field(default_factory=list)
    lineage: tuple = ()  # ((seed, start, stop), ...) with merged adjacent ranges

    def add(self, v):
        v = float(v)
        self.n += 1
        _grow(self._s, v)
        _grow(self._q, v * v)
        return self

    def extend(self, values):
        for v in np.asarray(values, dtype=float).ravel():
            self.add(v)
        return self

    def merge(self, other: "EstimatorAccumulator") -> "EstimatorAccumulator":
        out = EstimatorAccumulator(self.n + other.n, list(self._s), list(self._q),
                                   _merge_lineage(self.lineage, other.lineage))
        for p in other._s:
            _grow(out._s, p)
        for p in other._q:
            _grow(out._q, p)
        return out

    @property
    def sum(self):
        return math.fsum(self._s)

    @property
    def sum_sq(self):
        return math.fsum(self._q)

    @property
    def mean(self):
        return self.sum / self.n if self.n else math.nan

    @property
    def variance(self):
        """Population variance sum_sq/n - mean^2 (clipped at 0)."""
        if not self.n:
            return math.nan
        m = self.mean
        return max(self.sum_sq / self.n - m * m, 0.0)

    @property
    def stderr(self):
        return math.sqrt(self.variance / self.n) if self.n else math.nan

    @classmethod
    def of(cls, values, seed=None, start=0):
        acc = cls().extend(values)
        if seed is not None:
            acc.lineage = ((int(seed), start, start + acc.n),)
        return acc


def _merge_lineage(a, b):
    spans = sorted(set(a) | set(b))
    out = []
    for sd, lo, hi in spans:
        if out and out[-1][0] == sd and out[-1][2] == lo:
            out[-1] = (sd, out[-1][1], hi)
        else:
            out.append((sd, lo, hi))
    return tuple(out)


def run_map(fn, n, threads=1, start=0):
    """[fn(r) for r in range(start, start+n)], sharded over threads, in run order.

    The capacity-clock kernels release the GIL, so threads run them in
    parallel; the result never depends on the thread count.
    """
    threads = max(1, int(threads))
    if threads == 1 or n < 2 * threads:
        return [fn(r) for r in range(start, start + n)]
    bounds = np.linspace(start, start + n, threads + 1).astype(int)

    def shard(i):
        return [fn(r) for r in range(bounds[i], bounds[i + 1])]

    with ThreadPoolExecutor(threads) as ex:
        parts = list(ex.map(shard, range(threads)))
    return [v for p in parts for v in p]


# ----------------------------------------------------------------------
# experiment description

KINDS = ("point_prob", "pair_prob", "interval_hit", "strip_hit", "graph_hit",
         "dimension", "energy", "q_statistic", "drift")


@dataclass
class ExperimentSpec:
    kind: str
    kappa: float
    n: int = 10_000
    seed: int = 0
    params: dict = field(default_factory=dict)
    clock: ClockParams = field(default_factory=ClockParams)
    threads: int = 1

    def __post_init__(self):
        if self.kind not in KINDS and self.kind != "criterion":
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.kind != "criterion" and self.n < 100:
            raise ValueError("experiments need N >= 100")
        check_seed(self.seed)
        eps = self.params.get("eps_grid")
        if eps is not None and np.any(np.diff(np.asarray(eps, float)) >= 0):
            raise ValueError("eps grid must be strictly decreasing")


@dataclass
class Estimate:
    estimate: float
    stderr: float
    exact: float = math.nan
    n: int = 0
    acc: EstimatorAccumulator | None = None

    @property
    def z(self):
        if self.stderr > 0:
            return (self.estimate - self.exact) / self.stderr
        return 0.0 if self.estimate == self.exact else math.inf

    def within(self, k=3.0):
        return abs(self.estimate - self.exact) <= k * self.stderr


def _estimate(values, seed, exact=math.nan):
    acc = EstimatorAccumulator.of(values, seed)
    return Estimate(acc.mean, acc.stderr, exact, acc.n, acc)


# ----------------------------------------------------------------------
# point, pair, interval


def estimate_point_prob(kappa, x, eps, n=10_000, seed=0, clock=None, threads=1,
                        scheme="capacity", dt=1e-3, t_max=None):
    """P(x in C_eps) against (eps/x)^s ^ 1.

    scheme="uniform" runs the reference uniform grid (step dt, horizon
    t_max, default 400 x^2) for sensitivity reports.
    """
    clock = clock or ClockParams()
    exact = specfun.exact_point_prob(x, eps, kappa)
    if scheme == "capacity":
        def one(r):
            return float(capacity_hits(kappa, [x], [eps], clock, seed, r)[1][0] == K.HIT)
    else:
        base = SimParams(kappa, dt, 400.0 * x * x if t_max is None else t_max, seed)

        def one(r):
            out = observables.run_C_eps_trial(base.with_run(r), x, eps, scheme="uniform")
            return float(out is observables.Outcome.HIT)
    return _estimate(run_map(one, n, threads), seed, exact)


def pair_bound(kappa, x, y, eps_x, eps_y):
    """(eps_x eps_y)^s x^-s (y-x)^-s."""
    s = 8.0 / kappa - 1.0
    return (eps_x * eps_y) ** s * x ** (-s) * (y - x) ** (-s)


@dataclass
class PairResult:
    x: float
    y: float
    joint: Estimate
    marg_x: float
    marg_y: float
    bound: float

    @property
    def ratio(self):
        return self.joint.estimate / self.bound


def estimate_pair_prob(kappa, x, y, eps_x, eps_y, n=10_000, seed=0, clock=None, threads=1):
    clock = clock or ClockParams()

    def one(r):
        _, st, _, _ = capacity_hits(kappa, [x, y], [eps_x, eps_y], clock, seed, r)
        return st[0] == K.HIT, st[1] == K.HIT

    res = np.array(run_map(one, n, threads), dtype=float).reshape(-1, 2)
    joint = _estimate(res[:, 0] * res[:, 1], seed, math.nan)
    return PairResult(x, y, joint, float(res[:, 0].mean()), float(res[:, 1].mean()),
                      pair_bound(kappa, x, y, eps_x, eps_y))


def fit_pair_constant(results):
    """Smallest c with joint <= c * bound on every grid cell."""
    return max(r.joint.estimate / r.bound for r in results)


def interval_thresholds(kappa, eta):
    """(z_lo, w_lo): Z = X_x / X_{x+eps} below z_lo means the interval is hit with
    conditional probability >= 1-eta; 1-Z below w_lo means it is missed with
    probability >= 1-eta."""
    a, b = 1.0 - 4.0 / kappa, 8.0 / kappa - 1.0
    return specfun.incomplete_beta_inv(eta, a, b), specfun.incomplete_beta_inv(eta, b, a)


def estimate_interval_hit(kappa, x, eps, n=10_000, seed=0, clock=None, eta=1e-4, threads=1):
    """Trace meets [x, x+eps] iff x and x+eps are swallowed at different times."""
    if not 4 < kappa < 8:
        raise specfun.SpecfunDomainError("interval hitting needs 4 < kappa < 8")
    clock = clock or ClockParams(c=0.01)
    exact = specfun.exact_interval_hit_prob(x, eps, kappa) if (x >= 1 and 0 < eps < 1) else \
        specfun.incomplete_beta_reg(eps / (x + eps), 8.0 / kappa - 1.0, 1.0 - 4.0 / kappa)
    zlo, wlo = interval_thresholds(kappa, eta)

    def one(r):
        return float(capacity_gaps(kappa, [x, x + eps], zlo, wlo, clock, seed, r)[0][0] == K.OCCUPIED)
    return _estimate(run_map(one, n, threads), seed, exact)


# ----------------------------------------------------------------------
# strip and graph


@dataclass
class StripResult:
    kappa: float
    eps: np.ndarray
    prob: np.ndarray
    stderr: np.ndarray
    n: int
    slope: float = math.nan
    slope_se: float = math.nan
    band: float = math.nan  # max/min of P log(1/eps) (kappa = 4)
    dropped: tuple = ()


def strip_grid(eps_min):
    """Points of [1, 2] with spacing eps_min / 2 (a dyadic eps_min keeps grids nested)."""
    m = int(round(2.0 / eps_min))
    return 1.0 + np.arange(m + 1) / m


def estimate_strip_hit(kappa, eps_grid=tuple(2.0 ** -k for k in range(3, 8)), n=10_000, seed=0,
                       clock=None, threads=1, min_hits=10, max_n=None):
    """P(A_eps hit) through the proxy: some grid point (spacing eps/2) lies in C_eps.

    One run evaluates all eps at once from the running minima of Y on the
    finest grid; the grid for eps is every (eps/eps_min)-th point.  If the
    smallest eps has fewer than min_hits hits, N is doubled up to max_n and
    eps values still short are dropped with a warning.
    """
    if kappa > 4:
        raise ValueError("strip experiment is for kappa <= 4")
    eps = np.asarray(eps_grid, float)
    if np.any(np.diff(eps) >= 0):
        raise ValueError("eps grid must be strictly decreasing")
    clock = clock or ClockParams()
    xs = strip_grid(eps[-1])
    strides = [int(round(e / eps[-1])) for e in eps]

    def one(r):
        ymin, _, _, _ = capacity_hits(kappa, xs, eps[-1], clock, seed, r)
        return [bool(np.any(ymin[::st] <= e)) for e, st in zip(eps, strides)]

    rows = run_map(one, n, threads)
    total = n
    max_n = max_n or n
    while sum(r[-1] for r in rows) < min_hits and total < max_n:
        more = min(total, max_n - total)
        rows += run_map(one, more, threads, start=total)
        total += more
    hits = np.array(rows, dtype=float)
    p = hits.mean(axis=0)
    se = np.sqrt(np.maximum(p * (1 - p), 0) / total)
    res = StripResult(kappa, eps, p, se, total)
    keep = hits.sum(axis=0) >= min_hits
    if not keep.all():
        res.dropped = tuple(eps[~keep])
        warnings.warn(f"dropping eps {res.dropped}: fewer than {min_hits} hits in {total} runs")
    e, pk = eps[keep], p[keep]
    if len(e) >= 2:
        fit = stats.linregress(np.log(e), np.log(pk))
        res.slope, res.slope_se = float(fit.slope), float(fit.stderr)
        if kappa == 4:
            v = pk * np.log(1.0 / e)
            res.band = float(v.max() / v.min())
    return res


def graph_integral(h, kappa, r=None):
    """int_r^oo Lambda(x) x^-s dx by quadrature in log x."""
    r = h.r if r is None else r
    s = 8.0 / kappa - 1.0

    def f(y):
        x = math.exp(y)
        return math.exp(criterion.log_lambda(h, kappa, x) + (1.0 - s) * y)

    val, _ = integrate.quad(f, math.log(r), math.inf, limit=500, epsrel=1e-9)
    return val


def graph_grid(h, r, x_max, max_ratio=1.05):
    """Geometric-ish grid on [r, x_max] with spacing at most h(x)/2."""
    xs = [r]
    while xs[-1] < x_max:
        x = xs[-1]
        xs.append(x + min(0.5 * h(x), (max_ratio - 1.0) * x))
    return np.array(xs)


@dataclass
class GraphResult:
    hit: Estimate
    integral: float
    ratio: float
    r: float
    points: int


def estimate_graph_hit(kappa, h, r=None, n=10_000, seed=0, clock=None, x_max_factor=1e3, threads=1):
    """P(some grid x >= r lies in C_h(x)) and its ratio to 1 ^ integral."""
    if kappa > 4:
        raise ValueError("graph experiment is for kappa <= 4")
    from dataclasses import replace
    r = h.r if r is None else float(r)
    h = replace(h, r=r)
    clock = clock or ClockParams()
    xs = graph_grid(h, r, r * x_max_factor)
    hx = np.array([h(v) for v in xs])

    def one(rr):
        _, st, _, _ = capacity_hits(kappa, xs, hx, clock, seed, rr, stop_first=True)
        return float(np.any(st == K.HIT))

    est = _estimate(run_map(one, n, threads), seed)
    integ = graph_integral(h, kappa, r)
    est.exact = min(1.0, integ)
    return GraphResult(est, integ, est.estimate / min(1.0, integ), r, len(xs))


# ----------------------------------------------------------------------
# dimension and Frostman measures


@dataclass
class DimensionResult:
    kappa: float
    dim: float
    ci: tuple
    levels: np.ndarray
    mean_counts: np.ndarray
    count_se: np.ndarray
    n: int
    undecided: int = 0
    dropped: tuple = ()

    @property
    def exact(self):
        return 2.0 - 8.0 / self.kappa


def box_counts(codes, levels):
    """Occupied dyadic boxes of [1, 2] at each level from finest-pair codes."""
    occ = codes == K.OCCUPIED
    fine = int(round(math.log2(len(occ))))
    out = []
    for j in levels:
        block = 2 ** (fine - j)
        out.append(int(occ.reshape(-1, block).any(axis=1).sum()))
    return out


def estimate_dimension(kappa, n=500, seed=0, levels=tuple(range(4, 11)), clock=None,
                       eta_occ=1e-2, eta_empty=1e-3, threads=1, min_total=30):
    """Box-counting dimension of the trace on [1, 2] (4 < kappa < 8).

    A dyadic box at scale 2^-j counts as occupied iff its endpoints are
    swallowed at different times; that holds iff one of its finest
    sub-intervals is occupied, so a single classification of the finest
    pairs per run serves every scale.
    """
    if not 4 < kappa < 8:
        raise ValueError("dimension experiment needs 4 < kappa < 8")
    clock = clock or ClockParams(c=0.02)
    levels = np.asarray(levels, int)
    fine = int(levels.max())
    xs = 1.0 + np.arange(2 ** fine + 1) / 2.0 ** fine
    zlo, _ = interval_thresholds(kappa, eta_occ)
    _, wlo = interval_thresholds(kappa, eta_empty)

    def one(r):
        codes, _ = capacity_gaps(kappa, xs, zlo, wlo, clock, seed, r)
        return box_counts(codes, levels), int(np.sum(codes == K.UNDECIDED))

    rows = run_map(one, n, threads)
    counts = np.array([c for c, _ in rows], dtype=float)
    undecided = sum(u for _, u in rows)
    mean = counts.mean(axis=0)
    se = counts.std(axis=0) / math.sqrt(n)
    keep = counts.sum(axis=0) >= min_total
    res = DimensionResult(kappa, math.nan, (math.nan, math.nan), levels, mean, se, n, undecided)
    if not keep.all():
        res.dropped = tuple(int(j) for j in levels[~keep])
        warnings.warn(f"too few occupied boxes at levels {res.dropped}; truncating the scale range")
    lv, mv = levels[keep], mean[keep]
    if len(lv) >= 3:
        res.dim, res.ci = ols_slope(lv * math.log(2.0), np.log(mv))
    return res


def ols_slope(x, y, level=0.95):
    """OLS slope and its t-interval from the regression residuals."""
    fit = stats.linregress(x, y)
    t = stats.t.ppf(0.5 + level / 2.0, len(x) - 2)
    return float(fit.slope), (float(fit.slope - t * fit.stderr), float(fit.slope + t * fit.stderr))


@dataclass
class FrostmanMeasure:
    epsilon: float
    kappa: float
    x: np.ndarray
    weights: np.ndarray
    inside: np.ndarray

    @property
    def density(self):
        return self.epsilon ** (-(8.0 / self.kappa - 1.0)) * self.inside

    @property
    def mass(self):
        return float(np.sum(self.weights * self.density))

    def energy(self, delta):
        """(1-s-delta)-energy by double quadrature, band |x-y| < grid step excluded."""
        s = 8.0 / self.kappa - 1.0
        beta = 1.0 - s - delta
        idx = np.nonzero(self.inside)[0]
        if idx.size < 2:
            return 0.0
        m = self.weights[idx] * self.density[idx]
        d = np.abs(self.x[idx, None] - self.x[None, idx])
        step = float(np.min(np.diff(self.x)))
        with np.errstate(divide="ignore"):
            kern = np.where(d >= step * (1 - 1e-9), d ** (-beta), 0.0)
        return float(m @ kern @ m)


def frostman_grid(points):
    xs = np.linspace(1.0, 2.0, points)
    w = np.full(points, 1.0 / (points - 1))
    w[0] = w[-1] = 0.5 / (points - 1)
    return xs, w


@dataclass
class FrostmanResult:
    epsilon: float
    mass: Estimate
    energy: Estimate
    delta: float


def frostman_stats(kappa, eps, n=2000, seed=0, delta=None, points=513, clock=None, threads=1):
    """Mean mass and energy of mu_eps(dx) = eps^-s 1{x in C_eps} dx on [1, 2]."""
    if not 4 < kappa < 8:
        raise ValueError("Frostman statistics need 4 < kappa < 8")
    s = 8.0 / kappa - 1.0
    delta = (1.0 - s) / 4.0 if delta is None else delta
    if not 0 < delta < 1 - s:
        raise ValueError("delta must lie in (0, 1-s)")
    clock = clock or ClockParams(c=0.02)
    xs, w = frostman_grid(points)

    def one(r):
        _, st, _, _ = capacity_hits(kappa, xs, eps, clock, seed, r)
        fm = FrostmanMeasure(eps, kappa, xs, w, (st == K.HIT).astype(float))
        return fm.mass, fm.energy(delta)

    rows = np.array(run_map(one, n, threads))
    exact = specfun.exact_mean_mass(kappa)
    return FrostmanResult(eps, _estimate(rows[:, 0], seed, exact), _estimate(rows[:, 1], seed), delta)


# ----------------------------------------------------------------------
# Q statistic and drift suites


@dataclass
class QResult:
    a: float
    b: float
    q: Estimate
    q2: Estimate
    points: int


def estimate_q(kappa, h, a, n=10_000, seed=0, clock=None, threads=1):
    clock = clock or ClockParams()
    qs = observables.QStatistic.build(h, kappa, a)

    def one(r):
        return observables.compute_Q(SimParams(kappa, 1.0, 1.0, seed, r), h, a, clock, qs)

    vals = np.array(run_map(one, n, threads))
    return QResult(a, qs.b, _estimate(vals, seed, 1.0), _estimate(vals ** 2, seed), len(qs.x))


@dataclass
class DriftResult:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    initial: float

    def nonincreasing(self, k=3.0):
        """Each checkpoint mean stays below the previous one (and the start) within k stderr."""
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.stderr))):
            return False
        prev_m, prev_s = self.initial, 0.0
        for m, s in zip(self.mean, self.stderr):
            if m > prev_m + k * math.hypot(s, prev_s):
                return False
            prev_m, prev_s = m, s
        return True

    def matches_initial(self, k=3.0):
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.stderr))):
            return False
        return bool(np.all(np.abs(self.mean - self.initial) <= k * self.stderr))


def _drift(values, times, initial):
    v = np.asarray(values, float)
    return DriftResult(np.asarray(times, float), v.mean(axis=0),
                       v.std(axis=0) / math.sqrt(len(v)), initial)


# Drift suites also stop a point once M has fallen by this factor.  A further
# stopping time leaves the mean of a stopped martingale unchanged (and keeps
# a supermartingale one), and it spares following Y out to the swallowing time.
DRIFT_ETA = 1e-8


def drift_stopped_M(kappa, x, eps, times, n=10_000, seed=0, clock=None, threads=1):
    """E[M^x_{t ^ tau}] at the checkpoints; M frozen at eps^-s on hitting, 0 once swallowed."""
    clock = clock or ClockParams()
    s = 8.0 / kappa - 1.0
    cut = cut_levels([x], kappa, DRIFT_ETA)

    def one(r):
        _, ys, _, _ = capacity_checkpoints(kappa, [x], times, yfloor=eps, ycut=cut, clock=clock,
                                           seed=seed, run=r)
        return ys[0] ** (-s)

    return _drift(run_map(one, n, threads), times, x ** (-s))


def drift_Z(kappa, obs: observables.IntegralObservable, times, n=10_000, seed=0, clock=None, threads=1):
    clock = clock or ClockParams()

    def one(r):
        return observables.track_Z_supermartingale(SimParams(kappa, 1.0, 1.0, seed, r), obs, times, clock)

    return _drift(run_map(one, n, threads), times, obs.initial(kappa))


def drift_pair(kappa, x, y, eps, times, n=10_000, seed=0, clock=None, threads=1):
    """E[u(Z) M^x M^y] at checkpoints, both points frozen at the first threshold hit."""
    clock = clock or ClockParams()
    s = 8.0 / kappa - 1.0
    cut = cut_levels([x, y], kappa, DRIFT_ETA)

    def one(r):
        xs_, ys_, _, gs, _ = capacity_checkpoints(kappa, [x, y], times, yfloor=eps, ycut=cut,
                                                  group=True, clock=clock, seed=seed, run=r, gaps=True)
        return observables.pair_product(xs_[0], ys_[0], xs_[1], ys_[1], kappa, gs[0])

    init = observables.u_of_z(x / y, kappa) * (x * y) ** (-s)
    return _drift(run_map(one, n, threads), times, init)


# ----------------------------------------------------------------------
# swallowing times


def swallow_time(kappa, x, clock=None, seed=0, run=0, ycut=1e12):
    """Swallowing time of x (4 < kappa < 8): Y = X/g' diverges exactly there."""
    clock = clock or ClockParams()
    _, st, _, t = capacity_hits(kappa, [x], 0.0, clock, seed, run, ycut=[x * ycut])
    return t


def swallow_time_cdf(kappa, x, t):
    """P(T_x <= t): X_t / sqrt(kappa) is a Bessel process of dimension 1 + 4/kappa."""
    a = 0.5 - 2.0 / kappa
    return float(gammaincc(a, x * x / (2.0 * kappa * t)))


def cut_level(kappa, x, eta):
    return float(cut_levels([x], kappa, eta)[0])


# ----------------------------------------------------------------------
# experiment dispatch (one row per parameter combination)

TAIL = ("quantity", "estimate", "stderr", "exact_or_bound", "ratio", "error")


def _floats(v):
    if isinstance(v, str):
        return [float(p) for p in v.split(",") if p.strip()]
    return [float(p) for p in np.atleast_1d(v)]


def _ratio(a, b):
    return a / b if b not in (0.0,) and math.isfinite(b) else math.nan


def _family(params, key="family"):
    return criterion.parse_family(str(params[key]))


def _rows_point(spec, p):
    for x in _floats(p.get("x", 1.0)):
        for e in _floats(p.get("eps", 0.5)):
            est = estimate_point_prob(spec.kappa, x, e, spec.n, spec.seed, spec.clock, spec.threads,
                                      scheme=p.get("scheme", "capacity"), dt=float(p.get("dt", 1e-3)),
                                      t_max=float(p["t_max"]) if "t_max" in p else None)
            yield (x, e), ("prob", est.estimate, est.stderr, est.exact, _ratio(est.estimate, est.exact))


def _rows_pair(spec, p):
    xs, ys = _floats(p.get("x", "1,1,2,2")), _floats(p.get("y", "1.5,2,3,4"))
    ex = _floats(p.get("eps", 0.1))
    ey = _floats(p.get("eps_y", ex[0]))
    for x, y in zip(xs, ys):
        r = estimate_pair_prob(spec.kappa, x, y, ex[0], ey[0], spec.n, spec.seed, spec.clock, spec.threads)
        yield (x, y, ex[0], ey[0]), ("joint", r.joint.estimate, r.joint.stderr, r.bound, r.ratio)


def _rows_interval(spec, p):
    clock = spec.clock if "c" in p else ClockParams(c=0.01, max_steps=spec.clock.max_steps,
                                                      refine=spec.clock.refine)
    for x in _floats(p.get("x", 1.0)):
        for e in _floats(p.get("eps", 1.0)):
            est = estimate_interval_hit(spec.kappa, x, e, spec.n, spec.seed, clock,
                                        float(p.get("eta_interval", 1e-4)), spec.threads)
            yield (x, e), ("prob", est.estimate, est.stderr, est.exact, _ratio(est.estimate, est.exact))


def _rows_strip(spec, p):
    eps = _floats(p.get("eps_grid", ",".join(repr(2.0 ** -k) for k in range(3, 8))))
    s = 8.0 / spec.kappa - 1.0
    r = estimate_strip_hit(spec.kappa, eps, spec.n, spec.seed, spec.clock, spec.threads,
                           int(p.get("min_hits", 10)), int(p.get("max_n", spec.n)))
    for e, pr, se in zip(r.eps, r.prob, r.stderr):
        shape = e ** (s - 1.0) if spec.kappa < 4 else 1.0 / math.log(1.0 / e)
        yield (e,), ("prob", pr, se, shape, _ratio(pr, shape))
    if spec.kappa < 4:
        yield (math.nan,), ("slope", r.slope, r.slope_se, s - 1.0, _ratio(r.slope, s - 1.0))
    else:
        yield (math.nan,), ("band", r.band, math.nan, 2.0, _ratio(r.band, 2.0))


def _rows_graph(spec, p):
    h = _family(p)
    for r in _floats(p.get("r", h.r)):
        g = estimate_graph_hit(spec.kappa, h, r, spec.n, spec.seed, spec.clock,
                               float(p.get("x_max_factor", 1e3)), spec.threads)
        yield (h.tag, r), ("prob", g.hit.estimate, g.hit.stderr, min(1.0, g.integral), g.ratio)


def _rows_dimension(spec, p):
    lo, hi = int(p.get("level_min", 4)), int(p.get("level_max", 10))
    clock = spec.clock if "c" in p else ClockParams(c=0.02, max_steps=spec.clock.max_steps,
                                                      refine=spec.clock.refine)
    d = estimate_dimension(spec.kappa, spec.n, spec.seed, tuple(range(lo, hi + 1)), clock,
                           float(p.get("eta_occ", 1e-2)), float(p.get("eta_empty", 1e-3)), spec.threads)
    for j, m, se in zip(d.levels, d.mean_counts, d.count_se):
        yield (2.0 ** -int(j),), ("count", m, se, math.nan, math.nan)
    half = 0.5 * (d.ci[1] - d.ci[0])
    yield (math.nan,), ("dim", d.dim, half, d.exact, _ratio(d.dim, d.exact))


def _rows_energy(spec, p):
    clock = spec.clock if "c" in p else ClockParams(c=0.02, max_steps=spec.clock.max_steps,
                                                      refine=spec.clock.refine)
    delta = float(p["delta"]) if "delta" in p else None
    for e in _floats(p.get("eps", "0.0625,0.015625,0.00390625")):
        f = frostman_stats(spec.kappa, e, spec.n, spec.seed, delta, int(p.get("points", 513)),
                           clock, spec.threads)
        yield (e,), ("mass", f.mass.estimate, f.mass.stderr, f.mass.exact,
                     _ratio(f.mass.estimate, f.mass.exact))
        yield (e,), ("energy", f.energy.estimate, f.energy.stderr, math.nan, math.nan)


def _rows_q(spec, p):
    h = _family(p) if "family" in p else criterion.custom("x/(2*log(x))")
    for a in _floats(p.get("a", "10,100")):
        q = estimate_q(spec.kappa, h, a, spec.n, spec.seed, spec.clock, spec.threads)
        yield (h.tag, a, q.b), ("Q", q.q.estimate, q.q.stderr, 1.0, q.q.estimate)
        yield (h.tag, a, q.b), ("Q2", q.q2.estimate, q.q2.stderr, math.nan, math.nan)


def _rows_drift(spec, p):
    times = _floats(p.get("times", "0.25,0.5,1,2,4"))
    which = p.get("observable", "M")
    x = float(p.get("x", 1.0))
    eps = float(p.get("eps", 0.3))
    if which == "M":
        d = drift_stopped_M(spec.kappa, x, eps, times, spec.n, spec.seed, spec.clock, spec.threads)
    elif which == "pair":
        d = drift_pair(spec.kappa, x, float(p.get("y", 1.5)), eps, times, spec.n, spec.seed,
                       spec.clock, spec.threads)
    elif which == "Z":
        obs = observables.IntegralObservable.geometric(lambda v: 1.0, x, float(p.get("x_hi", 4.0)))
        d = drift_Z(spec.kappa, obs, times, spec.n, spec.seed, spec.clock, spec.threads)
    else:
        raise ValueError(f"unknown drift observable {which!r}")
    for t, m, se in zip(d.times, d.mean, d.stderr):
        yield (which, t), ("mean", m, se, d.initial, _ratio(m, d.initial))


def _rows_criterion(spec, p):
    h = _family(p)
    v = criterion.integral_test(h, spec.kappa, float(p["r"]) if "r" in p else None,
                                int(p.get("block_count", 40)))
    yield (h.tag, v.classification, v.level), ("regularity", float(v.regularity), math.nan,
                                               math.nan, math.nan)


_DISPATCH = {
    "point_prob": (("x", "eps"), _rows_point),
    "pair_prob": (("x", "y", "eps_x", "eps_y"), _rows_pair),
    "interval_hit": (("x", "eps"), _rows_interval),
    "strip_hit": (("eps",), _rows_strip),
    "graph_hit": (("family", "r"), _rows_graph),
    "dimension": (("eps",), _rows_dimension),
    "energy": (("eps",), _rows_energy),
    "q_statistic": (("family", "a", "b"), _rows_q),
    "drift": (("observable", "t"), _rows_drift),
    "criterion": (("family", "verdict", "level"), _rows_criterion),
}


def run_experiment(spec: ExperimentSpec):
    """(columns, rows) for the experiment; a failing row carries its error text.

    Rows are produced lazily by the kind's generator, so an error aborts the
    remaining combinations of that generator; they are reported as one
    error row.
    """
    keys, gen = _DISPATCH[spec.kind]
    cols = ("kind", "kappa", "n", "seed") + keys + TAIL
    head = (spec.kind, float(spec.kappa), int(spec.n), int(spec.seed))
    rows = []
    try:
        for params, (q, est, se, ex, ratio) in gen(spec, spec.params):
            rows.append(head + tuple(params) + (q, est, se, ex, ratio, ""))
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        blank = (math.nan,) * len(keys)
        rows.append(head + blank + ("error", math.nan, math.nan, math.nan, math.nan,
                                    f"{type(exc).__name__}: {exc}"))
    return cols, rows
