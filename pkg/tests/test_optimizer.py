import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qgrad.optimizer import (
    Domain, StoppingRule, make_schedule, measure_L_alpha, project, qgm_step, run,
    scalar_projection_margins, sign_projected_step,
)
from qgrad.problems import make_rng, quadratic_oracle, random_quadratic
from qgrad.quantization import construct_set

R2 = 1 / math.sqrt(2)


class TestSteps:
    def test_unconstrained_sign(self):
        x = qgm_step([1, 1], [1, 1], construct_set("sign", 2), 0.1, Domain.unconstrained())
        assert np.allclose(x, [1 - 0.1 * R2] * 2)
        assert x[0] == pytest.approx(0.92929, abs=1e-5)

    def test_orthant_clamp(self):
        x = qgm_step([0.1, 0], [1, -1], construct_set("sign", 2), 1.0, Domain.orthant())
        assert np.allclose(x, [0, R2])

    def test_zero_gradient_holds(self):
        x = qgm_step([0.3, 0.4], [0, 0], construct_set("sign", 2), 1.0, Domain.unconstrained())
        assert np.array_equal(x, [0.3, 0.4])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            qgm_step([1, 1], [1, 1, 1], construct_set("sign", 2), 0.1, Domain.unconstrained())

    def test_sign_projected_examples(self):
        assert np.allclose(sign_projected_step([0, 2], [-3, 1], 0.5), [0.35355, 1.64645], atol=1e-5)
        assert np.array_equal(sign_projected_step([0, 0], [1, 1], 1.0), [0, 0])
        # no hold rule here: sign(0) = +1 still moves the point
        assert np.array_equal(sign_projected_step([5.0], [0.0], 1.0), [4.0])

    def test_sign_projected_rejects_negative(self):
        with pytest.raises(ValueError):
            sign_projected_step([-1, 0], [1, 1], 0.1)

    @pytest.mark.parametrize("N", range(1, 11))
    def test_fast_path_equals_enumerated(self, N):
        D = construct_set("sign", N)
        rng = make_rng(100 + N)
        for _ in range(100):
            x = rng.random(N) * 2
            g = rng.normal(size=N)
            gam = rng.random()
            assert np.allclose(sign_projected_step(x, g, gam), qgm_step(x, g, D, gam, Domain.orthant()),
                               atol=1e-15)


class TestProject:
    def test_examples(self):
        assert np.array_equal(project([-1, 2], Domain.orthant()), [0, 2])
        assert np.array_equal(project([0.5], Domain.box([0], [1])), [0.5])
        a, b = project([-1, 2], Domain.orthant()), project([1, 2], Domain.orthant())
        assert np.linalg.norm(a - b) == 1.0

    def test_box_validation(self):
        with pytest.raises(ValueError):
            Domain.box([1], [0])
        with pytest.raises(ValueError):
            Domain.box([0], [np.inf])

    def test_nonexpansive(self):
        rng = make_rng(7)
        n = 3
        domains = [Domain.unconstrained(), Domain.orthant(), Domain.box(-np.ones(n), np.full(n, 0.5))]
        U = rng.normal(size=(100_000, n)) * 3
        V = rng.normal(size=(100_000, n)) * 3
        for dom in domains:
            lo, hi = dom.bounds(n)
            PU, PV = np.clip(U, lo, hi), np.clip(V, lo, hi)
            assert np.all(np.linalg.norm(PU - PV, axis=1) <= np.linalg.norm(U - V, axis=1) + 1e-15)
            # spot-check the public function on a few rows
            for i in range(5):
                assert np.array_equal(project(U[i], dom), PU[i])


class TestLAlpha:
    def test_examples(self):
        assert measure_L_alpha([0], [-1], 1) == 1
        assert measure_L_alpha([1], [0], 1) == 0
        assert measure_L_alpha([0], [2], 0.5) == 0

    def test_alpha_positive(self):
        with pytest.raises(ValueError):
            measure_L_alpha([0], [1], 0)


class TestSchedule:
    def test_constant(self):
        assert make_schedule("constant", 0.1)(7) == 0.1

    def test_power(self):
        assert make_schedule("power", gamma0=1, p=0.6)(5) == pytest.approx(0.341278752, abs=1e-9)
        assert make_schedule("power", gamma0=1, p=0.6)(5) == 1 / 6 ** 0.6

    def test_summable_rejected(self):
        with pytest.raises(ValueError, match="summable schedule"):
            make_schedule("power", gamma0=1, p=1.5)

    def test_nonvanishing_rejected(self):
        with pytest.raises(ValueError, match="non-vanishing"):
            make_schedule("power", gamma0=1, p=0)

    @pytest.mark.parametrize("bad", [0, -1, float("nan")])
    def test_bad_gamma(self, bad):
        with pytest.raises(ValueError):
            make_schedule("constant", bad)


class TestMargins:
    def test_examples(self):
        holds, sides = scalar_projection_margins(2, 3, 0.1, 1, 0.5)
        assert holds[0] and sides[0] == (1.0, 1.5)
        holds, sides = scalar_projection_margins(1, -2, 0.1, 1, 0.5)
        assert holds[1] and sides[1][0] == pytest.approx(0.2) and sides[1][1] == pytest.approx(2.0)
        holds, sides = scalar_projection_margins(0.5, -1, 1, 1, 0.5)
        assert holds[2] and sides[2][1] == pytest.approx(1.0)

    def test_ranges(self):
        with pytest.raises(ValueError):
            scalar_projection_margins(1, 1, 1, 0.5, 0.5)
        with pytest.raises(ValueError):
            scalar_projection_margins(1, 1, 0.1, 1, 1.5)
        with pytest.raises(ValueError):
            scalar_projection_margins(-1, 1, 0.1, 1, 0.5)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(0, 100), st.floats(-100, 100), st.floats(0, 10), st.floats(0, 10), st.floats(0, 1))
    def test_always_hold(self, x, z, a, b, beta):
        a1, a2 = min(a, b), max(a, b)
        holds, _ = scalar_projection_margins(x, z, a1, a2, beta)
        assert all(holds)


class TestRun:
    def test_stops_before_stepping(self):
        q = quadratic_oracle([0, 0])
        tr = run(q, construct_set("sign", 2), make_schedule("constant", 0.1),
                 StoppingRule.grad_norm(2), 100, x0=[1, 1])
        assert tr.hit_iteration == 0 and len(tr) == 1

    def test_strict_descent_outside_target(self):
        q = quadratic_oracle([0, 0])
        tr = run(q, construct_set("sign", 2), make_schedule("constant", 0.1),
                 StoppingRule.grad_norm(0.01), 10_000, x0=[1, 1])
        outside = tr.grad_norm[:-1] > 0.01
        # with cos = 1/sqrt(2) the step 0.1 is admissible only while ||grad|| > 0.1/sqrt(2)
        admissible = tr.grad_norm[:-1] > 0.1 / (2 * R2)
        m = outside & admissible
        assert m.sum() > 5
        assert np.all(np.diff(tr.f)[m] < 0)

    def test_bits(self):
        q = quadratic_oracle([0, 0])
        tr = run(q, construct_set("circular", n=16), make_schedule("constant", 0.01), None, 60, x0=[1, 1])
        assert tr.bits[50] == 200
        assert np.array_equal(tr.bits, tr.t * 4)
        assert np.array_equal(tr.t, np.arange(61))

    def test_hold_at_stationary_point(self):
        q = quadratic_oracle([0.5, -2])
        tr = run(q, construct_set("minimal", 2), make_schedule("constant", 1.0), None, 50,
                 x0=[0.5, -2], record_x=True)
        assert np.all(tr.x == [0.5, -2])

    def test_gap_rule_needs_fstar(self):
        class NoStar:
            dims = 1
            domain = Domain.unconstrained()
            f_star = None

            def value_and_grad(self, x):
                return float(x @ x), 2 * x

        with pytest.raises(ValueError, match="optimal value"):
            run(NoStar(), construct_set("sign", 1), make_schedule("constant", 0.1), StoppingRule.gap(0.1))

    def test_l_alpha_needs_constraints(self):
        with pytest.raises(ValueError, match="constrained"):
            run(quadratic_oracle([0.0]), construct_set("sign", 1), make_schedule("constant", 0.1),
                StoppingRule.l_alpha(0.1))

    def test_dimension_checks(self):
        with pytest.raises(ValueError):
            run(quadratic_oracle([0, 0]), construct_set("sign", 3), make_schedule("constant", 0.1))
        with pytest.raises(ValueError):
            run(quadratic_oracle([0, 0]), construct_set("sign", 2), make_schedule("constant", 0.1),
                max_iter=-1)

    @pytest.mark.parametrize("kind", ["sign", "minimal", "normal_basis"])
    @pytest.mark.parametrize("dom", ["unconstrained", "orthant"])
    def test_fused_matches_loop(self, kind, dom):
        domain = Domain.orthant() if dom == "orthant" else Domain.unconstrained()
        q = random_quadratic(3, 4, 10, domain)
        D = construct_set(kind, 4)
        x0 = np.abs(make_rng(4).normal(size=4))
        sch = make_schedule("power", gamma0=0.5, p=0.7)
        a = run(q, D, sch, None, 500, x0=x0, record_x=True)
        b = run(q, D, sch, None, 500, x0=x0, record_x=True, fused=False)
        assert np.array_equal(a.x, b.x)
        assert np.allclose(a.f, b.f, atol=1e-12)

    def test_gap_rule_in_fused_path_uses_absolute_f(self):
        q = random_quadratic(1, 3, 5, Domain.orthant())
        x0 = np.full(3, 2.0)
        a = run(q, construct_set("sign", 3), make_schedule("constant", 0.01), StoppingRule.gap(1e-3),
                20_000, x0=x0)
        b = run(q, construct_set("sign", 3), make_schedule("constant", 0.01), StoppingRule.gap(1e-3),
                20_000, x0=x0, fused=False)
        assert a.hit_iteration == b.hit_iteration is not None
        assert a.f[-1] - q.f_star <= 1e-3

    def test_csv(self, tmp_path):
        q = quadratic_oracle([0, 0])
        tr = run(q, construct_set("sign", 2), make_schedule("constant", 0.1), None, 3, x0=[1, 1])
        tr.to_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "t,f,grad_norm,l_alpha,gamma,bits"
        assert lines[1].split(",")[3] == ""
        assert lines[1] == "0,1,1.4142135623730951,,0.10000000000000001,0"

    def test_csv_orthant_has_l_alpha(self, tmp_path):
        q = quadratic_oracle([1, 1], domain=Domain.orthant())
        tr = run(q, construct_set("sign", 2), make_schedule("constant", 0.1), None, 2)
        tr.to_csv(tmp_path / "t.csv")
        row = (tmp_path / "t.csv").read_text().splitlines()[1].split(",")
        assert float(row[3]) == pytest.approx(math.sqrt(2))

    def test_diminishing_step_reaches_constrained_optimum(self):
        q = random_quadratic(21, 3, 5, Domain.orthant())
        tr = run(q, construct_set("sign", 3), make_schedule("power", gamma0=1, p=0.6), None, 100_000,
                 x0=np.ones(3))
        assert np.linalg.norm(tr.x_final - q.x_star) <= 1e-2
