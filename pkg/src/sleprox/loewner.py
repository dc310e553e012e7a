"""Discrete chordal Loewner evolution.

The reference scheme works on a uniform time grid: on each step the driving
is frozen at the left endpoint and the exact vertical-slit map

    g -> w + sqrt((g - w)^2 + 4 dt)

is applied to every tracked point.  It backs `evolve`, the observers and the
trace reconstruction.

The Monte Carlo estimators use the capacity-clock kernels instead (see
`_kernels`), wrapped here by `capacity_hits`, `capacity_gaps` and
`capacity_checkpoints`.  They share the same seeded streams.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .streams import check_seed, u64

# Relative weight of the first term in the swallow tolerance
# max(10 sqrt(dt) * MACHINE_GUARD, 4 sqrt(dt)); kept tiny so the 4 sqrt(dt)
# reach of the next slit always governs.
MACHINE_GUARD = 1e-12


class LoewnerError(Exception):
    """Base error; `step` is the grid step where it happened (or None)."""

    def __init__(self, msg, step=None):
        super().__init__(msg if step is None else f"{msg} (step {step})")
        self.step = step


class ParameterError(LoewnerError, ValueError):
    pass


class StateError(LoewnerError):
    pass


class ReconstructionError(LoewnerError):
    pass


class ObserverError(LoewnerError):
    pass


@dataclass(frozen=True)
class SimParams:
    kappa: float
    dt: float
    t_max: float
    seed: int = 0
    run_index: int = 0

    def __post_init__(self):
        if not (0.0 < self.kappa < 8.0):
            raise ParameterError(f"kappa must lie in (0, 8), got {self.kappa}")
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ParameterError(f"dt must be positive, got {self.dt}")
        if not (self.t_max >= 0.0 and math.isfinite(self.t_max)):
            raise ParameterError(f"t_max must be finite and >= 0, got {self.t_max}")
        try:
            check_seed(self.seed)
        except ValueError as e:
            raise ParameterError(str(e)) from None
        if self.run_index < 0:
            raise ParameterError("run_index must be >= 0")

    @property
    def s_kappa(self) -> float:
        return 8.0 / self.kappa - 1.0

    @property
    def n_steps(self) -> int:
        # tolerate t_max = n*dt computed in floating point
        return max(0, math.ceil(self.t_max / self.dt - 1e-9))

    def with_run(self, run_index):
        return replace(self, run_index=run_index)


@dataclass(frozen=True)
class DrivingPath:
    times: np.ndarray
    values: np.ndarray
    kappa: float
    seed: int = 0
    run_index: int = 0

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ParameterError("times and values differ in length")
        if len(self.times) == 0 or self.times[0] != 0.0 or self.values[0] != 0.0:
            raise ParameterError("a driving path starts at (0, 0)")

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def dt(self) -> float:
        if self.n_steps == 0:
            return 0.0
        return float(self.times[1] - self.times[0])

    @classmethod
    def constant_zero(cls, dt, n, kappa=4.0):
        """W = 0 on a uniform grid; the slit maps then give gamma(t) = 2i sqrt(t)."""
        return cls(np.arange(n + 1) * float(dt), np.zeros(n + 1), kappa)


def generate_driving(params: SimParams) -> DrivingPath:
    n = params.n_steps
    times = np.arange(n + 1) * params.dt
    values = K.driving_values(params.kappa, params.dt, n, u64(params.seed), u64(params.run_index))
    return DrivingPath(times, values, params.kappa, params.seed, params.run_index)


class Status(enum.Enum):
    ALIVE = "alive"
    SWALLOWED = "swallowed"
    STOPPED = "stopped"


@dataclass(frozen=True)
class TrackedPoint:
    x0: float
    g: float
    gprime: float = 1.0
    status: Status = Status.ALIVE
    status_step: int | None = None

    @classmethod
    def start(cls, x0):
        x0 = float(x0)
        if not x0 > 0:
            raise ParameterError(f"tracked points need x0 > 0, got {x0}")
        return cls(x0, x0)

    @property
    def alive(self):
        return self.status is Status.ALIVE

    def stop(self, step):
        return replace(self, status=Status.STOPPED, status_step=step)


def swallow_tol(dt):
    r = math.sqrt(dt)
    return max(10.0 * r * MACHINE_GUARD, 4.0 * r)


def step_point(point: TrackedPoint, w_before, w_after, dt, step=None, tol=None) -> TrackedPoint:
    """One slit-map step with the driving frozen at w_before."""
    if not point.alive:
        raise StateError(f"point x0={point.x0} is {point.status.value}", step)
    xi = point.g - w_before
    if not xi > 0:
        raise StateError(f"point x0={point.x0} lies left of the driving", step)
    sq = math.sqrt(xi * xi + 4.0 * dt)
    g = w_before + sq
    gp = point.gprime * (xi / sq)
    tol = swallow_tol(dt) if tol is None else tol
    if g - w_after <= tol:
        return replace(point, g=g, gprime=gp, status=Status.SWALLOWED, status_step=step)
    return replace(point, g=g, gprime=gp)


@dataclass
class LoewnerState:
    """Arrays for all tracked points after `step` steps (driving value `w`)."""

    params: SimParams
    step: int
    t: float
    w: float
    x0: np.ndarray
    g: np.ndarray
    gprime: np.ndarray
    status: list
    status_step: list

    def point(self, i) -> TrackedPoint:
        return TrackedPoint(float(self.x0[i]), float(self.g[i]), float(self.gprime[i]),
                            self.status[i], self.status_step[i])

    @property
    def points(self):
        return [self.point(i) for i in range(len(self.x0))]

    def alive_mask(self):
        return np.array([s is Status.ALIVE for s in self.status], dtype=bool)


class Observer:
    """Hook called once per step; `on_step` returns True once it needs no more steps."""

    def on_step(self, state: LoewnerState) -> bool:
        return True

    def result(self):
        return None


@dataclass
class EvolveResult:
    state: LoewnerState
    outputs: list = field(default_factory=list)
    steps_run: int = 0


def _notify(obs, state):
    try:
        if isinstance(obs, Observer):
            return bool(obs.on_step(state))
        return bool(obs(state))
    except LoewnerError:
        raise
    except Exception as e:
        raise ObserverError(f"observer {type(obs).__name__} failed: {e!r}", state.step) from e


def evolve(params: SimParams, points, observers=(), path: DrivingPath | None = None) -> EvolveResult:
    """Flow the tracked points along the uniform grid, notifying observers each step.

    Observers are objects with `on_step(state)` (see `Observer`) or plain
    callables; a truthy return marks them complete.  The run ends after
    the horizon, or earlier once no point is alive and every observer is
    complete.
    """
    pts = [p if isinstance(p, TrackedPoint) else TrackedPoint.start(p) for p in points]
    x0 = np.array([p.x0 for p in pts], dtype=float)
    if any(not p.alive or p.g != p.x0 or p.gprime != 1.0 for p in pts):
        raise StateError("evolve starts from fresh points")
    if len(np.unique(x0)) != len(x0):
        raise ParameterError("tracked points must be distinct")
    if path is None:
        path = generate_driving(params)
    dt = path.dt if path.n_steps else params.dt
    tol = swallow_tol(dt)
    state = LoewnerState(params, 0, 0.0, 0.0, x0, x0.copy(), np.ones(len(pts)),
                         [Status.ALIVE] * len(pts), [None] * len(pts))
    observers = list(observers)
    done = [False] * len(observers)
    n = path.n_steps
    w = path.values
    k = 0
    while True:
        alive = state.alive_mask()
        if not alive.any() and all(done):
            break
        if k >= n:
            break
        wb, wa = w[k], w[k + 1]
        idx = np.nonzero(alive)[0]
        xi = state.g[idx] - wb
        sq = np.sqrt(xi * xi + 4.0 * dt)
        state.g[idx] = wb + sq
        state.gprime[idx] *= xi / sq
        k += 1
        for i in idx[state.g[idx] - wa <= tol]:
            state.status[i] = Status.SWALLOWED
            state.status_step[i] = k
        state.step, state.t, state.w = k, float(path.times[k]), float(wa)
        for j, obs in enumerate(observers):
            if not done[j]:
                done[j] = _notify(obs, state)
    outputs = [obs.result() if isinstance(obs, Observer) else None for obs in observers]
    return EvolveResult(state, outputs, k)


@dataclass(frozen=True)
class TraceSample:
    step: int
    point: complex
    depth: int


def trace_points(path: DrivingPath, steps, guard=1e-9) -> list:
    """gamma(t_k) for each k by composing inverse slit maps backwards."""
    steps = np.asarray(list(steps), dtype=np.int64)
    if steps.size and (steps.min() < 0 or steps.max() > path.n_steps):
        raise ParameterError(f"steps must lie in [0, {path.n_steps}]")
    dt = path.dt
    pts, bad = K.zipper(np.asarray(path.values, float), dt, steps, guard * math.sqrt(max(dt, 0.0)))
    if bad >= 0:
        raise ReconstructionError("negative radicand in inverse slit map", int(bad))
    return [TraceSample(int(k), complex(z), int(k)) for k, z in zip(steps, pts)]


# ----------------------------------------------------------------------
# capacity-clock engines


@dataclass(frozen=True)
class ClockParams:
    """Capacity-clock settings.

    Top-level steps are c * X^2; every piece is then bridge-split down to
    (c / refine) * X^2, so refine=2 samples the same Brownian path at half
    the step.  eta is the relative miss cutoff.
    """

    c: float = 0.005
    eta: float = 1e-3
    max_steps: int = 50_000_000
    refine: float = 1.0

    def __post_init__(self):
        if not 0 < self.c <= 0.05:
            raise ParameterError(f"clock constant c must lie in (0, 0.05], got {self.c}")
        if not 0 < self.eta < 1:
            raise ParameterError(f"eta must lie in (0, 1), got {self.eta}")
        if not self.refine >= 1:
            raise ParameterError(f"refine must be >= 1, got {self.refine}")

    def halved(self):
        return replace(self, refine=2.0 * self.refine)


def _as_sorted(x):
    x = np.ascontiguousarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0 or not np.all(x > 0) or np.any(np.diff(x) <= 0):
        raise ParameterError("points must be a non-empty increasing array of positive reals")
    return x


def cut_levels(x, kappa, eta):
    """Y levels above which the conditional chance to still reach Y=eps drops below eta."""
    s = 8.0 / kappa - 1.0
    return np.asarray(x, float) * eta ** (-1.0 / s)


def capacity_hits(kappa, x, yfloor, clock=ClockParams(), seed=0, run=0, stop_first=False, ycut=None):
    """Running minima of Y for sorted points; see `_kernels.hits`."""
    x = _as_sorted(x)
    yfloor = np.ascontiguousarray(np.broadcast_to(np.asarray(yfloor, float), x.shape))
    if ycut is None:
        ycut = cut_levels(x, kappa, clock.eta)
    ycut = np.ascontiguousarray(np.broadcast_to(np.asarray(ycut, float), x.shape))
    return K.hits(float(kappa), x, yfloor, ycut, float(clock.c), float(clock.refine),
                  int(clock.max_steps), u64(seed), u64(run), bool(stop_first))


def capacity_gaps(kappa, x, z_lo, w_lo, clock=ClockParams(), seed=0, run=0):
    x = _as_sorted(x)
    if x.size < 2:
        raise ParameterError("gap classification needs at least two points")
    return K.gaps(float(kappa), x, float(z_lo), float(w_lo), float(clock.c), float(clock.refine),
                  int(clock.max_steps), u64(seed), u64(run))


def capacity_checkpoints(kappa, x, tcheck, yfloor=0.0, ycut=np.inf, group=False,
                         clock=ClockParams(), seed=0, run=0, gaps=False):
    """(X, Y, hit, steps) at the checkpoint times; with gaps, (X, Y, hit, gap, steps)."""
    x = _as_sorted(x)
    tcheck = np.ascontiguousarray(tcheck, dtype=float)
    if np.any(np.diff(tcheck) < 0) or np.any(tcheck < 0):
        raise ParameterError("checkpoint times must be non-negative and sorted")
    yf = np.ascontiguousarray(np.broadcast_to(np.asarray(yfloor, float), x.shape))
    yc = np.ascontiguousarray(np.broadcast_to(np.asarray(ycut, float), x.shape))
    out_x, out_y, hit, out_g, steps = K.checkpoints(
        float(kappa), x, yf, yc, bool(group), tcheck, float(clock.c), float(clock.refine),
        int(clock.max_steps), u64(seed), u64(run))
    if gaps:
        return out_x, out_y, hit, out_g, steps
    return out_x, out_y, hit, steps
