"""Newton-Raphson AC power flow in polar coordinates and measurement extraction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import PQ, PV, AdmittanceMatrix, Grid, branch_admittances

DENSE_LIMIT = 512


class PowerFlowError(RuntimeError):
    pass


class DivergenceError(PowerFlowError):
    def __init__(self, message: str, trace: list[float]):
        self.trace = trace
        super().__init__(message)


class SingularJacobianError(PowerFlowError):
    pass


@dataclass(frozen=True)
class PFOptions:
    tol: float = 1e-8
    max_iter: int = 20
    flat_start: bool = True
    linear_solver: str = "auto"  # "auto", "dense" or "sparse"


@dataclass(frozen=True)
class PFSolution:
    v: np.ndarray
    theta: np.ndarray
    iterations: int
    max_mismatch: float
    trace: tuple[float, ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class BranchFlows:
    """Flows on in-service branches; ``branch`` holds the index into ``grid.branches``."""

    branch: np.ndarray
    p_from: np.ndarray
    q_from: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray


@dataclass(frozen=True)
class Measurements:
    p_inj: np.ndarray
    q_inj: np.ndarray
    flows: BranchFlows | None = None


def _csr(ybus) -> sp.csr_matrix:
    return ybus.matrix if isinstance(ybus, AdmittanceMatrix) else sp.csr_matrix(ybus)


def compute_injections(v, theta, ybus) -> tuple[np.ndarray, np.ndarray]:
    """Active and reactive bus injections from a polar voltage state.

    Walks the stored nonzeros of each Ybus row once, so cost is O(nnz).
    """
    y = _csr(ybus)
    v = np.asarray(v, dtype=float)
    theta = np.asarray(theta, dtype=float)
    n = y.shape[0]
    if v.shape != (n,) or theta.shape != (n,):
        raise ValueError(f"state vectors must have length {n}, got {v.shape} and {theta.shape}")
    rows = np.repeat(np.arange(n), np.diff(y.indptr))
    cols = y.indices
    g, b = y.data.real, y.data.imag
    dth = theta[rows] - theta[cols]
    vv = v[rows] * v[cols]
    c, s = np.cos(dth), np.sin(dth)
    p = np.bincount(rows, vv * (g * c + b * s), minlength=n)
    q = np.bincount(rows, vv * (g * s - b * c), minlength=n)
    return p, q


def _bus_sets(grid: Grid):
    pv = grid.bus_indices(PV)
    pq = grid.bus_indices(PQ)
    pvpq = np.sort(np.concatenate([pv, pq]))
    return pvpq, pq


def power_mismatch(v, theta, ybus, p_sched, q_sched, pvpq, pq) -> np.ndarray:
    """Stacked mismatch [P - P_sched at PV+PQ buses; Q - Q_sched at PQ buses]."""
    p, q = compute_injections(v, theta, ybus)
    return np.concatenate([p[pvpq] - p_sched[pvpq], q[pq] - q_sched[pq]])


def _dense_jacobian(v, theta, ydense, pvpq, pq) -> np.ndarray:
    vc = v * np.exp(1j * theta)
    ibus = ydense @ vc
    vnorm = vc / np.abs(vc)
    ds_dth = -1j * vc[:, None] * np.conj(ydense * vc[None, :])
    ds_dth[np.diag_indices_from(ds_dth)] += 1j * vc * np.conj(ibus)
    ds_dv = vc[:, None] * np.conj(ydense * vnorm[None, :])
    ds_dv[np.diag_indices_from(ds_dv)] += np.conj(ibus) * vnorm
    top = np.hstack([ds_dth[np.ix_(pvpq, pvpq)].real, ds_dv[np.ix_(pvpq, pq)].real])
    bottom = np.hstack([ds_dth[np.ix_(pq, pvpq)].imag, ds_dv[np.ix_(pq, pq)].imag])
    return np.vstack([top, bottom])


def mismatch_jacobian(v, theta, ybus, pvpq, pq, dense: bool = False):
    """Analytic Jacobian of :func:`power_mismatch` w.r.t. [theta[pvpq]; v[pq]].

    Returns a CSR matrix, or an ndarray when ``dense`` is set.
    """
    y = _csr(ybus)
    if dense:
        return _dense_jacobian(np.asarray(v, float), np.asarray(theta, float), y.toarray(), pvpq, pq)
    vc = v * np.exp(1j * theta)
    ibus = y @ vc
    diag_v = sp.diags(vc)
    diag_i = sp.diags(ibus)
    diag_vnorm = sp.diags(vc / np.abs(vc))
    ds_dth = 1j * diag_v @ (diag_i - y @ diag_v).conj()
    ds_dv = diag_v @ (y @ diag_vnorm).conj() + diag_i.conj() @ diag_vnorm
    ds_dth = sp.csr_matrix(ds_dth)
    ds_dv = sp.csr_matrix(ds_dv)
    j11 = ds_dth[pvpq][:, pvpq].real
    j12 = ds_dv[pvpq][:, pq].real
    j21 = ds_dth[pq][:, pvpq].imag
    j22 = ds_dv[pq][:, pq].imag
    return sp.bmat([[j11, j12], [j21, j22]], format="csr")


def _solve_linear(jac, rhs: np.ndarray, dense: bool) -> np.ndarray:
    if dense:
        try:
            dx = np.linalg.solve(jac, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(f"singular Jacobian: {exc}") from None
    else:
        with np.errstate(all="ignore"):
            try:
                dx = spla.spsolve(jac.tocsc(), rhs)
            except RuntimeError as exc:
                raise SingularJacobianError(f"singular Jacobian: {exc}") from None
    if not np.all(np.isfinite(dx)):
        raise SingularJacobianError("singular Jacobian: non-finite Newton step")
    return dx


def solve_ac_power_flow(grid: Grid, ybus: AdmittanceMatrix, options: PFOptions | None = None,
                        p_sched=None, q_sched=None) -> PFSolution:
    """Solve the bus power balance equations by Newton-Raphson.

    Unknowns are voltage angles at PV and PQ buses and magnitudes at PQ buses;
    generator reactive limits are not enforced.  ``p_sched``/``q_sched``
    override the grid's net scheduled injections (generation minus load).
    """
    opts = options or PFOptions()
    if opts.linear_solver not in ("auto", "dense", "sparse"):
        raise ValueError(f"unknown linear solver {opts.linear_solver!r}")
    n = grid.n
    sched_p, sched_q = grid.scheduled_injections()
    p_sched = sched_p if p_sched is None else np.asarray(p_sched, dtype=float)
    q_sched = sched_q if q_sched is None else np.asarray(q_sched, dtype=float)
    pvpq, pq = _bus_sets(grid)
    slack = grid.slack_index
    vset = grid.voltage_setpoints()

    if opts.flat_start:
        v = np.where([b.kind == PQ for b in grid.buses], 1.0, vset)
        theta = np.full(n, grid.buses[slack].theta_init)
    else:
        v = vset.copy()
        theta = np.array([b.theta_init for b in grid.buses])
    dense = opts.linear_solver == "dense" or (opts.linear_solver == "auto" and n <= DENSE_LIMIT)
    npvpq = len(pvpq)
    ydense = _csr(ybus).toarray() if dense else None

    trace: list[float] = []
    f = power_mismatch(v, theta, ybus, p_sched, q_sched, pvpq, pq)
    err = float(np.max(np.abs(f))) if f.size else 0.0
    trace.append(err)
    it = 0
    while err >= opts.tol:
        if it >= opts.max_iter:
            raise DivergenceError(
                f"Newton-Raphson did not converge in {opts.max_iter} iterations "
                f"(max mismatch {err:.3e})", trace)
        if dense:
            jac = _dense_jacobian(v, theta, ydense, pvpq, pq)
        else:
            jac = mismatch_jacobian(v, theta, ybus, pvpq, pq)
        dx = _solve_linear(jac, -f, dense)
        theta[pvpq] += dx[:npvpq]
        v[pq] += dx[npvpq:]
        if np.any(v <= 0):
            raise DivergenceError("Newton-Raphson produced a non-positive voltage magnitude", trace)
        it += 1
        f = power_mismatch(v, theta, ybus, p_sched, q_sched, pvpq, pq)
        err = float(np.max(np.abs(f)))
        trace.append(err)
        if not np.isfinite(err):
            raise DivergenceError("Newton-Raphson mismatch became non-finite", trace)
    return PFSolution(v=v, theta=theta, iterations=it, max_mismatch=err, trace=tuple(trace))


def compute_branch_flows(solution: PFSolution, grid: Grid) -> BranchFlows:
    """From-end and to-end complex flows on every in-service branch.

    Uses the two-port branch model, so taps and phase shifters are honoured;
    without them this is the usual pi-line flow expression.
    """
    f, t, yff, yft, ytf, ytt = branch_admittances(grid)
    vc = solution.v * np.exp(1j * solution.theta)
    s_from = vc[f] * np.conj(yff * vc[f] + yft * vc[t])
    s_to = vc[t] * np.conj(ytf * vc[f] + ytt * vc[t])
    idx = np.array([k for k, br in enumerate(grid.branches) if br.in_service], dtype=np.int64)
    return BranchFlows(idx, s_from.real, s_from.imag, s_to.real, s_to.imag)


def branch_flow(solution: PFSolution, grid: Grid, k: int) -> tuple[complex, complex]:
    """(S_from, S_to) for branch ``k``; out-of-service branches are an error."""
    br = grid.branches[k]
    if not br.in_service:
        raise ValueError(f"branch {k} ({br.from_bus}-{br.to_bus}) is out of service")
    flows = compute_branch_flows(solution, grid)
    pos = int(np.searchsorted(flows.branch, k))
    return (complex(flows.p_from[pos], flows.q_from[pos]),
            complex(flows.p_to[pos], flows.q_to[pos]))


def measure(solution: PFSolution, grid: Grid, ybus: AdmittanceMatrix,
            with_flows: bool = False) -> Measurements:
    p, q = compute_injections(solution.v, solution.theta, ybus)
    flows = compute_branch_flows(solution, grid) if with_flows else None
    return Measurements(p, q, flows)
