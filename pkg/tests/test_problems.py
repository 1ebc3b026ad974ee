import json
import math

import numpy as np
import pytest
from scipy.optimize import root

from qgrad.optimizer import Domain
from qgrad.problems import (
    FlowNetwork, KinkProximityError, TaskAllocation, TcpNetwork, fd_gradient_check, generate_flow,
    generate_task, generate_tcp, instance_from_dict, load_instance, make_rng, netflow_dual_oracle,
    oracle_for, quadratic_oracle, random_quadratic, save_instance, scalar_benchmark_oracle,
    solve_local_qp, task_dual_oracle, tcp_dual_oracle,
)


def grid_qp_2d(a, b, p, cap, step=1e-3):
    """Best point of the step-spaced grid over {w >= 0, w1 + w2 <= cap}.

    For each grid w1 the objective is a convex parabola in w2, so the best
    grid w2 is one of the two grid neighbours of its clipped minimiser.
    """
    n = int(round(cap / step))
    w1 = np.arange(n + 1) * step
    top = (n - np.arange(n + 1)) * step
    star = np.clip(-p[1] / (2 * b), 0, top)
    best_val, best = np.inf, None
    for cand in (np.floor(star / step) * step, np.ceil(star / step) * step):
        w2 = np.minimum(cand, top)
        val = a * w1 ** 2 + b * w2 ** 2 + p[0] * w1 + p[1] * w2
        k = int(np.argmin(val))
        if val[k] < best_val:
            best_val, best = val[k], np.array([w1[k], w2[k]])
    return best


class TestQuadratic:
    def test_examples(self):
        q = quadratic_oracle([1, 1])
        assert np.array_equal(q.grad(np.zeros(2)), [-1, -1])
        assert q.value(q.x_star) == 0 == q.f_star
        u, v = np.array([0.3, -2.0]), np.array([1.5, 0.25])
        ratio = np.linalg.norm(q.grad(u) - q.grad(v)) / np.linalg.norm(u - v)
        assert ratio == pytest.approx(q.lipschitz, rel=1e-15)
        assert q.strong_convexity == q.lipschitz == 1

    def test_scale_positive(self):
        with pytest.raises(ValueError):
            quadratic_oracle([0], scale=0)

    def test_constrained_optimum_satisfies_kkt(self):
        q = random_quadratic(3, 6, 20, Domain.orthant())
        x, g = q.x_star, q.grad(q.x_star)
        assert np.all(x >= 0)
        assert np.all(g >= -1e-9)
        assert np.all(np.abs(x * g) <= 1e-9)


class TestScalar:
    def test_branches(self):
        s = scalar_benchmark_oracle()
        assert s.value([1.5]) == 0.125 and s.grad([1.5])[0] == 0.5
        assert s.grad([0.5])[0] == -0.5
        assert scalar_benchmark_oracle("printed").value([3.0]) == 1.0
        assert s.value([3.0]) == 1.5 and s.grad([3.0])[0] == 1.0

    def test_constants(self):
        s = scalar_benchmark_oracle()
        assert (s.lipschitz, s.grad_bound, s.f_star) == (1.0, 1.0, 0.0)
        assert np.array_equal(s.x_star, [1.0])

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            scalar_benchmark_oracle("other")


class TestTcp:
    def test_density_count(self):
        net = generate_tcp(1)
        sigma = math.sqrt(2000 * 0.25)
        assert abs(net.A.sum() - 1000) <= 3 * sigma
        assert net.A.shape == (100, 20)

    def test_full_density(self):
        assert np.all(generate_tcp(2, 5, 7, density=1.0).A == 1)

    def test_deterministic(self):
        assert np.array_equal(generate_tcp(9).A, generate_tcp(9).A)
        assert not np.array_equal(generate_tcp(9).A, generate_tcp(10).A)

    def test_no_empty_rows_or_columns(self):
        for seed in range(30):
            net = generate_tcp(seed, 3, 8, density=0.1)
            assert np.all(net.A.sum(axis=0) > 0) and np.all(net.A.sum(axis=1) > 0)

    def test_degenerate_sizes(self):
        with pytest.raises(ValueError):
            generate_tcp(0, 0, 5)
        with pytest.raises(ValueError):
            generate_tcp(0, 3, 5, density=0)

    def test_rate_closed_form(self):
        o = tcp_dual_oracle(TcpNetwork(np.ones((1, 1)), 1, 1000, 0, 1))
        assert o.rates([800.0])[0] == pytest.approx(0.25)
        assert o.rates([2000.0])[0] == 0.0
        assert o.rates([0.0])[0] == 1.0

    def test_gradient_two_sources(self):
        o = tcp_dual_oracle(TcpNetwork(np.ones((1, 2)), 1, 1000, 0, 1))
        assert o.rates([800.0]) == pytest.approx([0.25, 0.25])
        assert o.grad([800.0])[0] == pytest.approx(0.5)

    def test_negative_price_rejected(self):
        o = tcp_dual_oracle(generate_tcp(1, 3, 4))
        with pytest.raises(ValueError):
            o.grad(np.array([-1.0, 0, 0, 0]))

    def test_gradient_bounded(self):
        o = tcp_dual_oracle(generate_tcp(4))
        rng = make_rng(4)
        X = rng.exponential(20.0, size=(10_000, 100)) * (rng.random((10_000, 100)) < 0.7)
        worst = max(np.linalg.norm(o.grad(x)) for x in X)
        assert worst <= o.grad_bound

    def test_lipschitz_sanity(self):
        o = tcp_dual_oracle(generate_tcp(5))
        rng = make_rng(5)
        worst = 0.0
        for _ in range(10_000):
            u = rng.uniform(0, 40, 100)
            v = np.maximum(u + rng.normal(size=100) * rng.choice([0.01, 1.0, 10.0]), 0)
            worst = max(worst, np.linalg.norm(o.grad(u) - o.grad(v)) / np.linalg.norm(u - v))
        assert worst <= o.lipschitz * (1 + 1e-9)
        # the scaled constant is also an upper bound here
        assert worst <= o.lipschitz_scaled

    def test_literal_constant(self):
        o = tcp_dual_oracle(generate_tcp(1))
        assert o.mu == 250.0
        assert o.lipschitz == 250.0 * o.n_bar * o.l_bar


class TestNetflow:
    def net2(self):
        return FlowNetwork(np.array([[1.0], [-1.0]]), [1, -1], [1.0])

    def test_two_nodes(self):
        o = netflow_dual_oracle(self.net2())
        for x1 in (-3.0, 0.0, 0.7):
            assert o.flows([x1])[0] == pytest.approx(-x1)
            assert o.grad([x1])[0] == pytest.approx(1 + x1)
        assert o.x_star == pytest.approx([-1.0])
        assert o.flows(o.x_star) == pytest.approx([1.0])

    def test_lifted_gradient_sums_to_zero(self):
        o = netflow_dual_oracle(self.net2())
        assert np.array_equal(o.lifted_grad([0.0]), [1, -1])
        o = netflow_dual_oracle(generate_flow(3))
        x = make_rng(3).normal(size=o.dims)
        assert abs(o.lifted_grad(x).sum()) <= 1e-12

    def test_conservation_at_optimum(self):
        for seed in range(10):
            net = generate_flow(seed, nodes=7)
            o = netflow_dual_oracle(net)
            assert np.linalg.norm(net.A @ o.flows(o.x_star) - net.c) <= 1e-6
            assert o.value(o.x_star) == pytest.approx(o.f_star)

    def test_value_matches_definition(self):
        net = generate_flow(1)
        o = netflow_dual_oracle(net)
        x = make_rng(1).normal(size=o.dims)
        a = net.A.T @ o.lift(x)
        assert o.value(x) == pytest.approx(float(np.sum(a ** 2 / (2 * net.rho)) + o.lift(x) @ net.c))

    def test_unbalanced_rejected(self):
        with pytest.raises(ValueError, match="sum to zero"):
            FlowNetwork(np.array([[1.0], [-1.0]]), [1, 0], [1.0])


class TestTask:
    def unit(self):
        return TaskAllocation(np.ones((1, 2)), [0, 0], 3.0)

    @pytest.mark.parametrize("x,w", [((0, 0), (0, 0)), ((-4, 0), (2, 0)), ((-8, -8), (1.5, 1.5))])
    def test_kkt_cases(self, x, w):
        W = task_dual_oracle(self.unit()).allocations(np.array(x, float))
        assert W[0] == pytest.approx(w)

    def test_every_face_of_triangle_reachable(self):
        # interior, three edges and three vertices
        cases = set()
        for x in [(1, 1), (-2, 1), (1, -2), (-2, -2), (-20, 1), (1, -20), (-20, -20), (-10, -1)]:
            _, S, cap_on = solve_local_qp([1, 1], np.array(x, float), 3.0)
            cases.add((S, cap_on))
        assert len(cases) == 7

    def test_matches_grid_search(self):
        rng = make_rng(8)
        worst = 0.0
        for _ in range(1000):
            a, b = rng.uniform(1, 5, 2)
            p = rng.uniform(-30, 10, 2)
            w, _, _ = solve_local_qp([a, b], p, 3.0)
            assert np.all(w >= 0) and w.sum() <= 3.0 + 1e-12
            worst = max(worst, np.abs(w - grid_qp_2d(a, b, p, 3.0)).max())
        assert worst <= 2e-3

    def test_feasible_general_n(self):
        rng = make_rng(9)
        for _ in range(200):
            n = int(rng.integers(1, 5))
            w, _, _ = solve_local_qp(rng.uniform(1, 5, n), rng.normal(size=n) * 10, 2.0)
            assert np.all(w >= 0) and w.sum() <= 2.0 + 1e-12

    def test_dual_optimum_feasible(self):
        for seed in range(10):
            prob = generate_task(seed)
            o = task_dual_oracle(prob)
            sol = root(o.grad, np.zeros(2), method="hybr", options={"xtol": 1e-14})
            W = o.allocations(sol.x)
            assert np.linalg.norm(W.sum(axis=0) - prob.c) <= 1e-6

    def test_lipschitz(self):
        prob = generate_task(0)
        o = task_dual_oracle(prob)
        assert o.lipschitz == pytest.approx(4 / prob.a.min())
        rng = make_rng(0)
        for _ in range(10_000):
            u, v = rng.uniform(-20, 5, 2), rng.uniform(-20, 5, 2)
            r = np.linalg.norm(o.grad(u) - o.grad(v)) / np.linalg.norm(u - v)
            assert r <= o.lipschitz * (1 + 1e-9)


class TestFiniteDifference:
    def test_quadratic(self):
        q = random_quadratic(1, 4)
        assert fd_gradient_check(q, make_rng(1).normal(size=4), 1e-5) <= 1e-9

    def test_tcp_generic(self):
        o = tcp_dual_oracle(generate_tcp(1))
        assert fd_gradient_check(o, make_rng(2).uniform(1, 40, 100)) <= 1e-5

    def test_task_example(self):
        o = task_dual_oracle(TaskAllocation(np.ones((1, 2)), [0, 0]))
        # w2 = 0 exactly here, so the support changes on one side of the stencil
        with pytest.raises(KinkProximityError):
            fd_gradient_check(o, np.array([-4.0, 0.0]), 1e-6)
        assert fd_gradient_check(o, np.array([-4.0, 0.0]), 1e-6, on_kink="ignore") <= 1e-5
        assert fd_gradient_check(o, np.array([-4.0, 0.5]), 1e-6) <= 1e-5

    def test_boundary_rejected(self):
        o = tcp_dual_oracle(generate_tcp(1, 3, 4))
        with pytest.raises(KinkProximityError):
            fd_gradient_check(o, np.zeros(4))

    def test_printed_scalar_jump_detected(self):
        with pytest.raises(KinkProximityError):
            fd_gradient_check(scalar_benchmark_oracle("printed"), np.array([2.0 + 1e-7]), 1e-6)

    def test_warn_mode(self):
        o = task_dual_oracle(TaskAllocation(np.ones((1, 2)), [0, 0]))
        with pytest.warns(UserWarning):
            fd_gradient_check(o, np.array([-4.0, 0.0]), 1e-6, on_kink="warn")


class TestSerialisation:
    @pytest.mark.parametrize("inst", [generate_tcp(3, 4, 6), generate_flow(3), generate_task(3),
                                      random_quadratic(3, 3, 5, Domain.orthant()),
                                      scalar_benchmark_oracle("printed")])
    def test_roundtrip(self, inst, tmp_path):
        p = tmp_path / "inst.json"
        save_instance(inst, p)
        back = load_instance(p)
        assert json.dumps(back.to_dict(), sort_keys=True) == json.dumps(inst.to_dict(), sort_keys=True)
        x = np.abs(make_rng(0).normal(size=oracle_for(inst).dims)) + 0.5
        assert oracle_for(back).value(x) == oracle_for(inst).value(x)

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            instance_from_dict({"family": "nope"})
