import math

import numpy as np
import pytest

from fdia_cgcn.grid import PQ, PV, SLACK, Branch, Bus, Gen, Grid, build_ybus
from fdia_cgcn.power_flow import (DivergenceError, PFOptions, branch_flow, compute_branch_flows,
                                  compute_injections, mismatch_jacobian, power_mismatch, solve_ac_power_flow)

from conftest import two_bus_grid


def dense_power_oracle(v, theta, y):
    vc = v * np.exp(1j * theta)
    s = np.diag(vc) @ np.conj(y @ vc)
    return s.real, s.imag


def test_flat_state_lossless_no_injection(case14):
    lossless = Grid(100, [Bus(b.ordinal, b.kind) for b in case14.buses],
                    [Branch(b.from_bus, b.to_bus, 0.0, b.x) for b in case14.branches], case14.gens)
    p, q = compute_injections(np.ones(14), np.zeros(14), build_ybus(lossless))
    np.testing.assert_allclose(p, 0, atol=1e-12)
    np.testing.assert_allclose(q, 0, atol=1e-12)


def test_two_bus_injection_hand_value():
    p, _ = compute_injections(np.ones(2), np.array([0.0, -0.05]), build_ybus(two_bus_grid()))
    assert p[0] == pytest.approx(10 * math.sin(0.05), abs=1e-12)
    assert p[0] == pytest.approx(0.49979, abs=1e-5)


def test_injections_match_dense_oracle(case14, rng):
    y = build_ybus(case14)
    for _ in range(5):
        v = rng.uniform(0.9, 1.1, 14)
        th = rng.uniform(-0.3, 0.3, 14)
        p, q = compute_injections(v, th, y)
        po, qo = dense_power_oracle(v, th, y.toarray())
        np.testing.assert_allclose(p, po, atol=1e-12)
        np.testing.assert_allclose(q, qo, atol=1e-12)


def test_injections_dimension_mismatch(case14):
    with pytest.raises(ValueError):
        compute_injections(np.ones(3), np.zeros(3), build_ybus(case14))


def test_zero_load_grid_converges_immediately():
    g = two_bus_grid(p_load=0.0)
    sol = solve_ac_power_flow(g, build_ybus(g))
    assert sol.iterations <= 1
    np.testing.assert_allclose(sol.v, 1.0, atol=1e-12)
    np.testing.assert_allclose(sol.theta, 0.0, atol=1e-12)


def grid_search_two_bus(p_load, x, resolution=1e-7):
    """Coarse-to-fine brute-force minimisation of the 2-bus mismatch norm."""
    b = 1 / x

    def norm(vv, tt):
        p = b * vv * np.sin(tt) + p_load
        q = b * vv * vv - b * vv * np.cos(tt)
        return p * p + q * q

    v_lo, v_hi, t_lo, t_hi = 0.5, 1.5, -1.0, 1.0
    while True:
        vs = np.linspace(v_lo, v_hi, 201)
        ts = np.linspace(t_lo, t_hi, 201)
        vv, tt = np.meshgrid(vs, ts, indexing="ij")
        i, j = np.unravel_index(np.argmin(norm(vv, tt)), vv.shape)
        dv, dt = vs[1] - vs[0], ts[1] - ts[0]
        if max(dv, dt) <= resolution:
            return vs[i], ts[j]
        v_lo, v_hi = vs[i] - 10 * dv, vs[i] + 10 * dv
        t_lo, t_hi = ts[j] - 10 * dt, ts[j] + 10 * dt


def test_two_bus_matches_grid_search():
    g = two_bus_grid(p_load=0.5, x=0.1)
    sol = solve_ac_power_flow(g, build_ybus(g))
    v_ref, t_ref = grid_search_two_bus(0.5, 0.1)
    assert abs(sol.v[1] - v_ref) < 1e-6
    assert abs(sol.theta[1] - t_ref) < 1e-6
    assert sol.theta[1] < 0


def test_case14_convergence_and_residual_closure(case14):
    y = build_ybus(case14)
    sol = solve_ac_power_flow(case14, y, PFOptions(tol=1e-8))
    assert sol.iterations <= 10
    p, q = compute_injections(sol.v, sol.theta, y)
    ps, qs = case14.scheduled_injections()
    non_slack = [i for i in range(14) if i != case14.slack_index]
    pq = case14.bus_indices(PQ)
    assert np.max(np.abs(p[non_slack] - ps[non_slack])) < 1e-8
    assert np.max(np.abs(q[pq] - qs[pq])) < 1e-8
    # PV/slack magnitudes held at set-point
    for i in case14.bus_indices(PV):
        assert sol.v[i] == pytest.approx(case14.voltage_setpoints()[i])
    assert sol.theta[case14.slack_index] == 0.0


def test_case14_matches_published_solution(case14):
    """The case file stores the published solved state (VM, VA) to 3-4 digits."""
    sol = solve_ac_power_flow(case14, build_ybus(case14))
    va = np.array([b.theta_init for b in case14.buses])
    vm = np.array([b.v_init for b in case14.buses])
    assert np.max(np.abs(np.degrees(sol.theta - va))) < 0.02
    assert np.max(np.abs(sol.v - vm)) < 2e-3


def test_dense_and_sparse_paths_agree(case14):
    y = build_ybus(case14)
    a = solve_ac_power_flow(case14, y, PFOptions(linear_solver="dense"))
    b = solve_ac_power_flow(case14, y, PFOptions(linear_solver="sparse"))
    np.testing.assert_allclose(a.v, b.v, atol=1e-12)
    np.testing.assert_allclose(a.theta, b.theta, atol=1e-12)
    assert a.iterations == b.iterations


def test_jacobian_matches_central_differences(case14, rng):
    y = build_ybus(case14)
    pvpq = np.sort(np.concatenate([case14.bus_indices(PV), case14.bus_indices(PQ)]))
    pq = case14.bus_indices(PQ)
    ps, qs = case14.scheduled_injections()
    h = 1e-6
    for _ in range(3):
        v = rng.uniform(0.9, 1.1, 14)
        th = rng.uniform(-0.3, 0.3, 14)
        jac = mismatch_jacobian(v, th, y, pvpq, pq).toarray()
        np.testing.assert_allclose(mismatch_jacobian(v, th, y, pvpq, pq, dense=True), jac, atol=1e-12)
        fd = np.zeros_like(jac)
        for col, i in enumerate(pvpq):
            tp, tm = th.copy(), th.copy()
            tp[i] += h
            tm[i] -= h
            fd[:, col] = (power_mismatch(v, tp, y, ps, qs, pvpq, pq) - power_mismatch(v, tm, y, ps, qs, pvpq, pq)) / (2 * h)
        for col, i in enumerate(pq, start=len(pvpq)):
            vp, vm = v.copy(), v.copy()
            vp[i] += h
            vm[i] -= h
            fd[:, col] = (power_mismatch(vp, th, y, ps, qs, pvpq, pq) - power_mismatch(vm, th, y, ps, qs, pvpq, pq)) / (2 * h)
        rel = np.max(np.abs(fd - jac)) / np.max(np.abs(jac))
        assert rel < 1e-5


def test_divergence_carries_trace():
    g = two_bus_grid(p_load=20.0)  # beyond the line's transfer limit (10 p.u.)
    with pytest.raises(DivergenceError) as exc:
        solve_ac_power_flow(g, build_ybus(g), PFOptions(max_iter=15))
    assert len(exc.value.trace) >= 1


def test_power_balance_and_losses(case14):
    y = build_ybus(case14)
    sol = solve_ac_power_flow(case14, y)
    p, _ = compute_injections(sol.v, sol.theta, y)
    flows = compute_branch_flows(sol, case14)
    losses = np.sum(flows.p_from + flows.p_to)
    shunt = sum(b.g_shunt * sol.v[b.ordinal] ** 2 for b in case14.buses)
    load = sum(b.p_load for b in case14.buses)
    gen = p[case14.slack_index] + load + sum(p[i] for i in range(14) if i != case14.slack_index)
    assert losses >= 0
    assert gen == pytest.approx(load + losses + shunt, abs=1e-9)


def test_branch_flow_zero_angle():
    g = two_bus_grid(p_load=0.0)
    sol = solve_ac_power_flow(g, build_ybus(g))
    s_f, s_t = branch_flow(sol, g, 0)
    assert s_f.real == pytest.approx(0.0, abs=1e-12)


def test_two_bus_branch_flow_equals_injection():
    g = two_bus_grid(p_load=0.5)
    y = build_ybus(g)
    sol = solve_ac_power_flow(g, y)
    p, _ = compute_injections(sol.v, sol.theta, y)
    s_f, _ = branch_flow(sol, g, 0)
    assert s_f.real == pytest.approx(p[0], abs=1e-12)


def test_case14_branch_flows(case14):
    y = build_ybus(case14)
    sol = solve_ac_power_flow(case14, y)
    fl = compute_branch_flows(sol, case14)
    vc = sol.v * np.exp(1j * sol.theta)
    for pos, k in enumerate(fl.branch):
        br = case14.branches[k]
        # dense oracle S_f = V_f conj(Y_f V) with a per-branch Yf row
        ys = 1 / complex(br.r, br.x)
        a = br.tap * np.exp(1j * br.shift)
        yf = np.zeros(14, dtype=complex)
        yf[br.from_bus] = (ys + 0.5j * br.b_charging) / br.tap ** 2
        yf[br.to_bus] = -ys / np.conj(a)
        s_f = vc[br.from_bus] * np.conj(yf @ vc)
        assert complex(fl.p_from[pos], fl.q_from[pos]) == pytest.approx(s_f, abs=1e-12)
        if br.r > 0:
            assert fl.p_from[pos] + fl.p_to[pos] >= 0
        if br.tap == 1.0 and br.shift == 0.0:
            i, j = br.from_bus, br.to_bus
            gij, bij = ys.real, ys.imag
            bsi = br.b_charging / 2
            tij = sol.theta[i] - sol.theta[j]
            vi, vj = sol.v[i], sol.v[j]
            p_ij = vi ** 2 * gij - vi * vj * (gij * math.cos(tij) + bij * math.sin(tij))
            q_ij = -vi ** 2 * (bsi + bij) - vi * vj * (gij * math.sin(tij) - bij * math.cos(tij))
            assert fl.p_from[pos] == pytest.approx(p_ij, abs=1e-12)
            assert fl.q_from[pos] == pytest.approx(q_ij, abs=1e-12)


def test_flows_sum_to_injections(case14):
    y = build_ybus(case14)
    sol = solve_ac_power_flow(case14, y)
    p, q = compute_injections(sol.v, sol.theta, y)
    fl = compute_branch_flows(sol, case14)
    s = np.zeros(14, dtype=complex)
    for pos, k in enumerate(fl.branch):
        br = case14.branches[k]
        s[br.from_bus] += complex(fl.p_from[pos], fl.q_from[pos])
        s[br.to_bus] += complex(fl.p_to[pos], fl.q_to[pos])
    s += np.array([complex(b.g_shunt, -b.b_shunt) for b in case14.buses]) * sol.v ** 2
    np.testing.assert_allclose(s.real, p, atol=1e-10)
    np.testing.assert_allclose(s.imag, q, atol=1e-10)


def test_out_of_service_branch_flow_request():
    buses = [Bus(0, SLACK), Bus(1, PQ, p_load=0.1)]
    g = Grid(100, buses, [Branch(0, 1, 0, 0.1), Branch(0, 1, 0, 0.1, in_service=False)], [Gen(0)])
    sol = solve_ac_power_flow(g, build_ybus(g))
    with pytest.raises(ValueError, match="out of service"):
        branch_flow(sol, g, 1)
    assert len(compute_branch_flows(sol, g).branch) == 1
