"""Compiled inner loops for the Loewner flow.

Two families of kernels live here.

Uniform-grid kernels follow the reference discretization: driving frozen at
the left endpoint of each step of length dt and the exact vertical-slit map
g -> w + sqrt((g-w)^2 + 4 dt).

Capacity-clock kernels are the Monte Carlo engines.  They track the
distances X_i = g_t(x_i) - W_t of sorted points and choose each step as
dt = c * X_a^2 where a is the nearest point still unresolved.  In the clock
ds = dt / X^2 the quantity log(X/g') is a Brownian motion with drift, so a
fixed c means a fixed resolution in the variable that decides every
boundary event, however close the trace comes.  Within a step the driving
is frozen at the step midpoint (half shift, slit map, half shift).
"""

import math

import numba as nb
import numpy as np

from .streams import LANE_BRIDGE, LANE_DRIVING, LANE_SPLIT, normal, stream_state, uniform

# point status codes of the capacity-clock kernels
ACTIVE = 0
HIT = 1
CUT = 2
OVERRUN = 3
BUDGET = 4

# pair codes of the gap kernel
UNDECIDED = 0
OCCUPIED = 1
EMPTY = 2


@nb.njit(cache=True, nogil=True)
def driving_values(kappa, dt, n, seed, run):
    s = stream_state(seed, run, LANE_DRIVING)
    cache = np.zeros(2)
    w = np.empty(n + 1)
    w[0] = 0.0
    sd = math.sqrt(kappa * dt)
    acc = 0.0
    for k in range(n):
        acc += sd * normal(s, cache)
        w[k + 1] = acc
    return w


@nb.njit(cache=True, nogil=True)
def uniform_swallow(x, w, dt, tol):
    """Swallow step per point on a uniform grid (-1 while alive), plus final g, g'."""
    p = x.size
    g = x.copy()
    gp = np.ones(p)
    step = np.full(p, -1, np.int64)
    n = w.size - 1
    alive = p
    four_dt = 4.0 * dt
    for k in range(n):
        if alive == 0:
            break
        wb = w[k]
        wa = w[k + 1]
        for i in range(p):
            if step[i] >= 0:
                continue
            xi = g[i] - wb
            sq = math.sqrt(xi * xi + four_dt)
            g[i] = wb + sq
            gp[i] *= xi / sq
            if g[i] - wa <= tol:
                step[i] = k + 1
                alive -= 1
    return step, g, gp


@nb.njit(cache=True, nogil=True)
def uniform_hit_trial(kappa, x, eps, dt, n, tol, m_cut, seed, run):
    """One threshold trial on the uniform grid.

    Returns 1 for a hit (M reached eps^-s), 0 for swallowed / cut / horizon.
    """
    s = stream_state(seed, run, LANE_DRIVING)
    cache = np.zeros(2)
    sk = 8.0 / kappa - 1.0
    sd = math.sqrt(kappa * dt)
    thr = eps ** (-sk)
    g = x
    gp = 1.0
    w = 0.0
    four_dt = 4.0 * dt
    if x ** (-sk) >= thr:
        return 1
    for k in range(n):
        wn = w + sd * normal(s, cache)
        xi = g - w
        sq = math.sqrt(xi * xi + four_dt)
        g = w + sq
        gp *= xi / sq
        w = wn
        d = g - w
        if d <= tol:
            return 0
        m = (gp / d) ** sk
        if m >= thr:
            return 1
        if m < m_cut:
            return 0
    return 0


@nb.njit(cache=True, nogil=True)
def zipper(w, dt, steps, guard):
    """Trace points gamma(t_k) by composing inverse slit maps backwards.

    The tip after k steps is the preimage of the last frozen driving value
    w[k-1].  Returns (points, failed_step) with failed_step = -1 on success.
    """
    out = np.zeros(steps.size, np.complex128)
    two_sd = 2.0 * math.sqrt(dt)
    for j in range(steps.size):
        k = steps[j]
        if k == 0:
            continue
        z = complex(w[k - 1], 0.0)
        for i in range(k - 1, -1, -1):
            u = z - w[i]
            r = np.sqrt(u - two_sd) * np.sqrt(u + two_sd)
            if r.imag < 0.0:
                if r.imag < -guard:
                    return out, k
                r = complex(r.real, 0.0)
            z = w[i] + r
        out[j] = z
    return out, -1


# Inside a step X_s - b g'_s is, to second order, a linear drift minus the
# driving bridge, so {min Y <= b} is a bridge crossing of a linear barrier.
# Solving for b gives the minimum of a Brownian bridge in Y itself with
# variance kappa dt / (g'_0 g'_1); interpolating log Y instead adds a
# curvature that biases crossings at first order in dt / X^2.
@nb.njit(inline="always")
def _bridge_min(la, lb, v, u):
    # minimum of a Brownian bridge from la to lb with variance v
    d = lb - la
    return 0.5 * (la + lb - math.sqrt(d * d - 2.0 * v * math.log(u)))


# A step whose driving increment exceeds REFINE * X_a, or whose length
# exceeds c * X_a^2 for the current X_a, is split in two by sampling the
# Brownian bridge midpoint; the refined path has exactly the law of the
# coarse one, so the split rule never biases the flow.  It keeps the
# frozen-driving slit map away from increments comparable to X_a, which
# would otherwise let the discrete driving jump across a point.
REFINE = 0.5
MAX_DEPTH = 400
# points are rescaled (with g', which leaves Y = X/g' unchanged, and with the
# pending substeps) when the nearest one drifts outside [RESCALE_LO, 1/RESCALE_LO]
RESCALE_LO = 1e-30
# checkpoints freeze a point once Y passes this (M < 1e-100 s there)
Y_HUGE = 1e100


@nb.njit(inline="always")
def _rescale(big_x, other, lo, p, stack_dt, stack_dw, top):
    # divide lengths by f = big_x[lo]; returns f
    f = big_x[lo]
    for i in range(lo, p):
        big_x[i] /= f
    for i in range(lo, other.size):
        other[i] /= f
    for j in range(top):
        stack_dt[j] /= f * f
        stack_dw[j] /= f
    return f


@nb.njit(inline="always")
def _rescale_all(big_x, gp, gap, lo, stack_dt, stack_dw, top):
    # like _rescale but over every point, frozen ones included, and the gaps
    f = big_x[lo]
    for i in range(big_x.size):
        big_x[i] /= f
        gp[i] /= f
    for i in range(gap.size):
        gap[i] /= f
    for j in range(top):
        stack_dt[j] /= f * f
        stack_dw[j] /= f
    return f


@nb.njit(inline="always")
def _out_of_range(xa):
    return xa < RESCALE_LO or xa > 1.0 / RESCALE_LO


@nb.njit(inline="always")
def _needs_split(dt, dw, xa, cf):
    # pieces queued before the nearest point moved closer are re-split too
    return abs(dw) > REFINE * xa or dt > cf * xa * xa


@nb.njit(inline="always")
def _split(kappa, dt, dw, s, cache):
    # s is the split lane, so refining never shifts the top-level increments
    # bridge midpoint of an increment dw over dt
    return 0.5 * dw + 0.5 * math.sqrt(kappa * dt) * normal(s, cache)


@nb.njit(inline="always")
def _slit(xh, four_dt):
    return math.hypot(xh, math.sqrt(four_dt))


# Second-order terms.  Conditional on the step increment dw, the exact flow
# differs from the frozen-midpoint slit map on average by
#   X:        + (dw^2/6 + kappa dt/3) dt / X^3
#   log g':   - (dw^2/2 + kappa dt) dt / X^4
# (expand 2/X_s and 2/X_s^2 along the Brownian bridge).  Adding them makes
# the step weakly second order in dt / X^2.
@nb.njit(inline="always")
def _corr(kappa, dt, dw):
    d2 = dw * dw
    return (d2 / 6.0 + kappa * dt / 3.0) * dt, (0.5 * d2 + kappa * dt) * dt


@nb.njit(cache=True, nogil=True)
def hits(kappa, x, yfloor, ycut, c, refine, max_steps, seed, run, stop_first):
    """Running minimum of Y = X/g' for sorted points, capacity clock.

    A point stops when its minimum reaches yfloor (HIT) or when Y rises to
    ycut (CUT).  Crossings inside a step are sampled from the exact bridge
    minimum of log Y; one uniform per step serves every point, since within
    a step all log Y increments are driven by the same increment.
    Returns (ymin, status, steps, t).
    """
    p = x.size
    big_x = x.copy()
    gp = np.ones(p)
    y = x.copy()
    ymin = x.copy()
    status = np.zeros(p, np.int8)
    s = stream_state(seed, run, LANE_DRIVING)
    sb = stream_state(seed, run, LANE_BRIDGE)
    cache = np.zeros(2)
    ss = stream_state(seed, run, LANE_SPLIT)
    cache_s = np.zeros(2)
    cf = c / refine
    sq_k = math.sqrt(kappa)
    stack_dt = np.empty(MAX_DEPTH + 1)
    stack_dw = np.empty(MAX_DEPTH + 1)
    active = 0
    any_hit = False
    for i in range(p):
        if ymin[i] <= yfloor[i]:
            status[i] = HIT
            any_hit = True
        else:
            active += 1
    first = 0
    steps = 0
    t = 0.0
    scale2 = 1.0
    while active > 0:
        if stop_first and any_hit:
            break
        while status[first] != ACTIVE:
            first += 1
        if steps >= max_steps:
            for i in range(first, p):
                if status[i] == ACTIVE:
                    status[i] = BUDGET
            break
        if _out_of_range(big_x[first]):
            f = _rescale(big_x, gp, first, p, stack_dt, stack_dw, 0)
            scale2 *= f * f
        xa = big_x[first]
        dt0 = c * xa * xa
        stack_dt[0] = dt0
        stack_dw[0] = sq_k * math.sqrt(dt0) * normal(s, cache)
        top = 1
        while top > 0 and active > 0:
            if _out_of_range(big_x[first]):
                f = _rescale(big_x, gp, first, p, stack_dt, stack_dw, top)
                scale2 *= f * f
            top -= 1
            dt = stack_dt[top]
            dw = stack_dw[top]
            if _needs_split(dt, dw, big_x[first], cf) and top < MAX_DEPTH - 1:
                wm = _split(kappa, dt, dw, ss, cache_s)
                stack_dt[top] = 0.5 * dt
                stack_dw[top] = dw - wm
                stack_dt[top + 1] = 0.5 * dt
                stack_dw[top + 1] = wm
                top += 2
                continue
            half = 0.5 * dw
            four_dt = 4.0 * dt
            kdt = kappa * dt
            k1, k2 = _corr(kappa, dt, dw)
            u = -1.0
            for i in range(first, p):
                if status[i] != ACTIVE:
                    continue
                xh = big_x[i] - half
                sq = _slit(xh, four_dt)
                xn = sq - half
                if xh <= 0.0 or xn <= 0.0:
                    status[i] = OVERRUN
                    active -= 1
                    continue
                r2 = 1.0 / (xh * xh)
                xn += k1 * r2 / xh
                gpi = gp[i] * xh / sq * math.exp(-k2 * r2 * r2)
                if not gpi > 0.0:
                    # g' underflowed: Y is beyond any representable cutoff
                    status[i] = CUT
                    active -= 1
                    continue
                yn = xn / gpi
                yo = y[i]
                lo = yo if yo < yn else yn
                # kdt / (g'_0 g'_1), written so that tiny g' cannot underflow
                v = kdt / (big_x[i] * xn) * yo * yn
                # bridge minima deeper than 7 sd below the endpoints have mass < 1e-21
                if lo - 7.0 * math.sqrt(v) < ymin[i]:
                    if u < 0.0:
                        u = uniform(sb)
                    m = _bridge_min(yo, yn, v, u)
                    if m < lo:
                        lo = m
                    if lo < ymin[i]:
                        ymin[i] = lo
                big_x[i] = xn
                gp[i] = gpi
                y[i] = yn
                if ymin[i] <= yfloor[i]:
                    status[i] = HIT
                    active -= 1
                    any_hit = True
                elif yn >= ycut[i]:
                    status[i] = CUT
                    active -= 1
            t += dt * scale2
            while first < p - 1 and status[first] != ACTIVE:
                first += 1
        steps += 1
    return ymin, status, steps, t


@nb.njit(cache=True, nogil=True)
def gaps(kappa, x, z_lo, w_lo, c, refine, max_steps, seed, run):
    """Classify consecutive pairs of sorted points by swallowing behaviour.

    With Z = X_a / X_{a+1} for the nearest undecided pair, Z -> 0 means x_a
    is swallowed strictly before x_{a+1} (the trace enters the gap) and
    Z -> 1 means both go at once.  A pair is decided when Z <= z_lo
    (OCCUPIED) or 1 - Z <= w_lo (EMPTY).  Gaps are tracked directly so that
    1 - Z keeps full relative precision.  Returns (codes, steps).
    """
    p = x.size
    big_x = x.copy()
    gap = np.empty(p - 1)
    for i in range(p - 1):
        gap[i] = x[i + 1] - x[i]
    code = np.zeros(p - 1, np.int8)
    s = stream_state(seed, run, LANE_DRIVING)
    cache = np.zeros(2)
    ss = stream_state(seed, run, LANE_SPLIT)
    cache_s = np.zeros(2)
    cf = c / refine
    sq_k = math.sqrt(kappa)
    stack_dt = np.empty(MAX_DEPTH + 1)
    stack_dw = np.empty(MAX_DEPTH + 1)
    a = 0
    steps = 0
    while a < p - 1:
        if steps >= max_steps:
            break
        if _out_of_range(big_x[a]):
            _rescale(big_x, gap, a, p, stack_dt, stack_dw, 0)
        xa = big_x[a]
        dt0 = c * xa * xa
        stack_dt[0] = dt0
        stack_dw[0] = sq_k * math.sqrt(dt0) * normal(s, cache)
        top = 1
        while top > 0:
            if _out_of_range(big_x[a]):
                _rescale(big_x, gap, a, p, stack_dt, stack_dw, top)
            top -= 1
            dt = stack_dt[top]
            dw = stack_dw[top]
            if _needs_split(dt, dw, big_x[a], cf) and top < MAX_DEPTH - 1:
                wm = _split(kappa, dt, dw, ss, cache_s)
                stack_dt[top] = 0.5 * dt
                stack_dw[top] = dw - wm
                stack_dt[top + 1] = 0.5 * dt
                stack_dw[top + 1] = wm
                top += 2
                continue
            half = 0.5 * dw
            four_dt = 4.0 * dt
            k1, k2 = _corr(kappa, dt, dw)
            pxh = big_x[a] - half
            psq = _slit(pxh, four_dt)
            big_x[a] = psq - half + k1 / (pxh * pxh * pxh)
            for i in range(a + 1, p):
                xh = big_x[i] - half
                sq = _slit(xh, four_dt)
                # difference of the corrected slit map images, free of cancellation
                pq = pxh * xh
                gap[i - 1] *= (pxh + xh) / (psq + sq) - k1 * (pxh * pxh + pq + xh * xh) / (pq * pq * pq)
                big_x[i] = sq - half + k1 / (xh * xh * xh)
                pxh = xh
                psq = sq
            # decide inside the refinement so that the split rule always
            # refers to the nearest undecided point
            while a < p - 1:
                xa = big_x[a]
                tot = xa + gap[a]
                if xa <= z_lo * tot:
                    code[a] = OCCUPIED
                elif gap[a] <= w_lo * tot:
                    code[a] = EMPTY
                else:
                    break
                a += 1
            if a >= p - 1:
                break
        steps += 1
    return code, steps


@nb.njit(cache=True, nogil=True)
def checkpoints(kappa, x, yfloor, ycut, group, tcheck, c, refine, max_steps, seed, run):
    """Snapshots of (X, Y) at the times in tcheck for stopped points.

    A point freezes when its Y reaches yfloor (the bridge minimum is used
    inside a step; the frozen Y is then exactly yfloor) or rises to ycut.
    With group set, the first event freezes every point.  Freezing at a
    stopping time leaves the mean of a bounded martingale unchanged.
    Gaps X[i+1] - X[i] are carried by the exact slit-map difference, so they
    stay accurate when both points sit deep below the scale of X.  A gap
    touching a point frozen earlier is only the difference of the two X.
    Returns (X[p, k], Y[p, k], hit[p], gap[p-1, k], steps).
    """
    p = x.size
    nk = tcheck.size
    out_x = np.empty((p, nk))
    out_y = np.empty((p, nk))
    out_g = np.empty((max(p - 1, 0), nk))
    big_x = x.copy()
    gap = np.empty(max(p - 1, 0))
    for i in range(p - 1):
        gap[i] = x[i + 1] - x[i]
    gp = np.ones(p)
    y = x.copy()
    frozen = np.zeros(p, np.bool_)
    hit = np.zeros(p, np.bool_)
    s = stream_state(seed, run, LANE_DRIVING)
    sb = stream_state(seed, run, LANE_BRIDGE)
    cache = np.zeros(2)
    ss = stream_state(seed, run, LANE_SPLIT)
    cache_s = np.zeros(2)
    cf = c / refine
    sq_k = math.sqrt(kappa)
    stack_dt = np.empty(MAX_DEPTH + 1)
    stack_dw = np.empty(MAX_DEPTH + 1)
    active = p
    for i in range(p):
        if y[i] <= yfloor[i]:
            frozen[i] = True
            hit[i] = True
            active -= 1
    if group and active < p:
        for i in range(p):
            frozen[i] = True
        active = 0
    t = 0.0
    k = 0
    steps = 0
    first = 0
    sc = 1.0  # true X = big_x * sc
    while k < nk:
        while k < nk and (t >= tcheck[k] or active == 0 or steps >= max_steps):
            for i in range(p):
                out_x[i, k] = big_x[i] * sc
                out_y[i, k] = y[i]
            for i in range(p - 1):
                out_g[i, k] = gap[i] * sc
            k += 1
        if k >= nk:
            break
        while frozen[first]:
            first += 1
        if _out_of_range(big_x[first]):
            sc *= _rescale_all(big_x, gp, gap, first, stack_dt, stack_dw, 0)
        xa = big_x[first] * sc
        dt0 = c * xa * xa
        if t + dt0 >= tcheck[k]:
            dt0 = tcheck[k] - t
            t = tcheck[k]
        else:
            t += dt0
        dt0 /= sc * sc
        stack_dt[0] = dt0
        stack_dw[0] = sq_k * math.sqrt(dt0) * normal(s, cache)
        top = 1
        while top > 0 and active > 0:
            if _out_of_range(big_x[first]):
                sc *= _rescale_all(big_x, gp, gap, first, stack_dt, stack_dw, top)
            top -= 1
            dt = stack_dt[top]
            dw = stack_dw[top]
            if _needs_split(dt, dw, big_x[first], cf) and top < MAX_DEPTH - 1:
                wm = _split(kappa, dt, dw, ss, cache_s)
                stack_dt[top] = 0.5 * dt
                stack_dw[top] = dw - wm
                stack_dt[top + 1] = 0.5 * dt
                stack_dw[top + 1] = wm
                top += 2
                continue
            half = 0.5 * dw
            four_dt = 4.0 * dt
            kdt = kappa * dt
            k1, k2 = _corr(kappa, dt, dw)
            u = uniform(sb)
            event = False
            moved = -2  # index of the previous point moved in this sweep
            pxh = 0.0
            psq = 0.0
            for i in range(first, p):
                if frozen[i]:
                    continue
                xh = big_x[i] - half
                sq = _slit(xh, four_dt)
                xn = sq - half
                if xh <= 0.0 or xn <= 0.0:
                    # driving overran the point inside one step; treat as swallowed
                    frozen[i] = True
                    active -= 1
                    y[i] = np.inf
                    event = True
                    continue
                r2 = 1.0 / (xh * xh)
                xn += k1 * r2 / xh
                gpi = gp[i] * xh / sq * math.exp(-k2 * r2 * r2)
                if not gpi > 0.0:
                    frozen[i] = True
                    active -= 1
                    y[i] = np.inf
                    event = True
                    continue
                if i > 0:
                    if moved == i - 1:
                        pq = pxh * xh
                        gap[i - 1] *= (pxh + xh) / (psq + sq) - k1 * (pxh * pxh + pq + xh * xh) / (pq * pq * pq)
                    else:
                        gap[i - 1] = xn - big_x[i - 1]
                moved = i
                pxh = xh
                psq = sq
                yn = xn / gpi
                if yfloor[i] > 0.0:
                    lo = yn if yn < y[i] else y[i]
                    if lo > yfloor[i]:
                        m = _bridge_min(y[i], yn, kdt / (big_x[i] * xn) * y[i] * yn, u)
                        lo = m if m < lo else lo
                    if lo <= yfloor[i]:
                        big_x[i] = xn
                        gp[i] = gpi
                        y[i] = yfloor[i]
                        frozen[i] = True
                        hit[i] = True
                        active -= 1
                        event = True
                        continue
                big_x[i] = xn
                gp[i] = gpi
                y[i] = yn
                if yn >= ycut[i] or yn > Y_HUGE:
                    frozen[i] = True
                    active -= 1
                    event = True
            if group and event:
                for i in range(p):
                    frozen[i] = True
                active = 0
            while first < p - 1 and frozen[first]:
                first += 1
        steps += 1
    return out_x, out_y, hit, out_g, steps
