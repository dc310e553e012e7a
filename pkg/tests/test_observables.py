import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sleprox import criterion, observables, specfun
from sleprox.loewner import (SimParams, StateError, TrackedPoint, evolve,
                             generate_driving, trace_points)
from sleprox.observables import (IntegralObservable, MartingaleTracker, Outcome, PairTracker,
                                 QStatistic, RangeError, compute_M, compute_Q, q1_q2,
                                 run_C_eps_trial, run_pair_trial, solve_b,
                                 track_Z_supermartingale, u_of_z)


class TestM:
    def test_initial(self):
        for k in (2.0, 4.0, 6.0):
            assert compute_M(TrackedPoint.start(1.7), 0.0, 8 / k - 1) == pytest.approx(1.7 ** -(8 / k - 1))

    def test_arithmetic(self):
        p = TrackedPoint(1.0, 0.5, 0.25)
        assert compute_M(p, 0.0, 1.0) == pytest.approx(0.5)

    def test_swallowed(self):
        with pytest.raises(StateError):
            compute_M(TrackedPoint.start(1.0).stop(1), 0.0, 1.0)

    def test_tracker_initial_hit(self):
        t = MartingaleTracker(1.0, 2.0, 3.0)
        assert t.outcome is Outcome.HIT and t.tau_step == 0

    def test_tracker_swallowed_first(self):
        # kappa = 6 with a tiny epsilon: the point is swallowed before M gets there
        path = generate_driving(SimParams(6.0, 1e-3, 50.0, seed=2))
        for r in range(20):
            t = MartingaleTracker(0.05, 1e-9, 6.0)
            evolve(SimParams(6.0, 1e-3, 50.0, seed=2, run_index=r), [0.05], [t])
            assert t.result() in (Outcome.SWALLOWED_FIRST, Outcome.HORIZON)
        assert path.n_steps == 50_000


class TestDistanceLink:
    def test_hit_implies_close_trace(self):
        """On hit runs the sampled trace comes within 4 eps (+ slack) of x, and M <= (4/d)^s."""
        kappa, x, eps, dt = 3.0, 1.0, 0.3, 1e-3
        s = 8 / kappa - 1
        hits = 0
        for r in range(40):
            p = SimParams(kappa, dt, 3.0, seed=8, run_index=r)
            path = generate_driving(p)
            ms = []
            tr = MartingaleTracker(x, eps, kappa)

            def obs(state):
                ms.append(compute_M(state.point(0), state.w, s) if state.point(0).alive else 0.0)
                return tr.on_step(state)

            evolve(p, [x], [obs], path=path)
            if tr.outcome is not Outcome.HIT:
                continue
            hits += 1
            k = tr.tau_step
            gam = np.array([smp.point for smp in trace_points(path, range(k + 1))])
            d = np.minimum.accumulate(np.abs(gam - x))
            assert d[-1] <= 4 * eps + 10 * math.sqrt(dt)
            dk = np.maximum(d[1:] - 10 * math.sqrt(dt), 1e-12)
            assert np.all(np.array(ms[:k]) <= (4 / dk) ** s)
        assert hits > 0


class TestTrials:
    def test_eps_ge_x(self):
        assert run_C_eps_trial(SimParams(6.0, 0.01, 1.0), 1.0, 1.0) is Outcome.HIT
        assert run_C_eps_trial(SimParams(6.0, 0.01, 1.0), 1.0, 2.0, scheme="uniform") is Outcome.HIT

    def test_pair_trivial(self):
        assert run_pair_trial(SimParams(6.0, 0.01, 1.0), 1.0, 2.0, 1.5, 3.0) == (True, True)

    def test_pair_order(self):
        with pytest.raises(ValueError):
            run_pair_trial(SimParams(6.0, 0.01, 1.0), 2.0, 1.0, 0.1, 0.1)

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            run_C_eps_trial(SimParams(6.0, 0.01, 1.0), 1.0, 0.5, scheme="euler")

    def test_pair_tracker(self):
        kappa = 6.0
        tx, ty = MartingaleTracker(1.0, 0.01, kappa, 0), MartingaleTracker(1.5, 0.01, kappa, 1)
        pt = PairTracker(tx, ty)
        zs, vals = [], []

        def obs(state):
            done = pt.on_step(state)
            zs.append(pt.Z)
            vals.append(pt.value)
            return done

        evolve(SimParams(kappa, 1e-3, 0.5, seed=1), [1.0, 1.5], [obs])
        assert all(0 < z < 1 for z in zs) and all(v >= 0 for v in vals)


class TestU:
    def test_limits(self):
        k = 6.0
        s = 8 / k - 1
        # u itself diverges at 1; the prefactor-stripped form tends to 1
        z = 1 - 1e-12
        assert (1 - z) ** s * u_of_z(z, k) == pytest.approx(1.0, abs=1e-9)
        assert observables.u_limits(k)[1] == math.inf
        assert (1 - 1e-10) ** s * u_of_z(1e-10, k) == pytest.approx(specfun.hyp2f1_at_one(k), rel=1e-8)

    def test_gamma_ratio_value(self):
        k = 6.0
        g = specfun.gamma_fn
        want = g(8 / k) * g(12 / k - 1) / (g(16 / k - 1) * g(4 / k))
        assert observables.u_limits(k)[0] == pytest.approx(want, rel=1e-12)

    def test_euler_vs_series(self):
        k, z = 6.0, 0.5
        s = 8 / k - 1
        euler = (1 - z) ** -s * specfun.hyp2f1(specfun.HypParams.for_kappa(k, 1 - z))
        assert u_of_z(z, k) == pytest.approx(euler, rel=1e-10)

    @pytest.mark.parametrize("z", [0.0, 1.0, -0.1, 1.2])
    def test_domain(self, z):
        with pytest.raises(specfun.SpecfunDomainError):
            u_of_z(z, 6.0)

    @given(st.floats(0.01, 0.99), st.floats(0.5, 7.9))
    @settings(max_examples=40)
    def test_positive(self, z, k):
        assert u_of_z(z, k) > 0


class TestQ1Q2:
    @pytest.mark.parametrize("k", [2.0, 4.0, 6.0, 7.0])
    def test_bounds(self, k):
        q1, q2 = q1_q2(k)
        assert 0 < q1 <= u_of_z(0.5, k) + 1e-12
        assert q2 >= specfun.hyp2f1(specfun.HypParams.for_kappa(k, 0.5)) - 1e-12
        assert q2 >= 1 - 1e-12 and math.isfinite(q2)

    def test_refinement_stable(self):
        a, b = q1_q2(6.0, n=32), q1_q2(6.0, n=64)
        assert a[0] == pytest.approx(b[0], rel=1e-4) and a[1] == pytest.approx(b[1], rel=1e-4)


class TestIntegralObservable:
    def test_single_point(self):
        obs = IntegralObservable(lambda v: 2.0, np.array([1.5]), np.array([0.1]))
        p = SimParams(4.0, 1e-3, 0.2, seed=3)
        z = track_Z_supermartingale(p, obs)
        m = []
        evolve(p, [1.5], [lambda st_: m.append(compute_M(st_.point(0), st_.w, 1.0)) or False])
        assert z[0] == pytest.approx(2.0 * 0.1 / 1.5)
        assert z[1:] == pytest.approx(2.0 * 0.1 * np.array(m))

    def test_capacity_snapshots(self):
        obs = IntegralObservable.geometric(lambda v: 1.0, 1.0, 2.0)
        z = track_Z_supermartingale(SimParams(3.0, 1.0, 1.0), obs, [0.0, 0.5, 1.0])
        assert z.shape == (3,) and z[0] == pytest.approx(obs.initial(3.0))

    def test_geometric_cells(self):
        mid, w = observables.geometric_cells(1.0, 10.0)
        assert w.sum() == pytest.approx(9.0) and np.all(np.diff(mid) > 0)


class TestQ:
    def setup_method(self):
        self.h = criterion.custom("x/(2*log(x))")

    def test_normalization(self):
        qs = QStatistic.build(self.h, 6.0, 10.0)
        assert qs.b > qs.a and qs.normalization() == pytest.approx(1.0, rel=1e-6)

    def test_no_hits(self):
        qs = QStatistic.build(self.h, 6.0, 10.0)
        assert qs.value(np.zeros(len(qs.x), bool)) == 0.0

    def test_solve_b_bisection(self):
        b = solve_b(self.h, 6.0, 100.0)
        qs = QStatistic.build(self.h, 6.0, 100.0)
        assert b == qs.b

    def test_range_error(self):
        with pytest.raises(RangeError):
            solve_b(criterion.const(0.1), 2.0, 10.0, x_max=1e6)

    def test_compute_Q_nonnegative(self):
        for r in range(5):
            assert compute_Q(SimParams(6.0, 1.0, 1.0, seed=1, run_index=r), self.h, 10.0) >= 0
