"""Per-unit grid model, bus admittance matrix and weighted bus graph."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

SLACK, PV, PQ = "slack", "pv", "pq"
BUS_KINDS = (SLACK, PV, PQ)


class GridValidationError(ValueError):
    """Grid description violates a structural invariant."""


class DegenerateBranchError(GridValidationError):
    """In-service branch with zero series impedance."""


class ConnectivityError(GridValidationError):
    """Bus graph has more than one connected component."""

    def __init__(self, components: list[list[int]]):
        self.components = components
        shown = "; ".join(
            "{" + ", ".join(map(str, c[:8])) + (", ..." if len(c) > 8 else "") + "}"
            for c in components[:5]
        )
        super().__init__(f"graph is disconnected into {len(components)} components: {shown}")


@dataclass(frozen=True)
class Bus:
    ordinal: int
    kind: str
    p_load: float = 0.0
    q_load: float = 0.0
    g_shunt: float = 0.0
    b_shunt: float = 0.0
    v_init: float = 1.0
    theta_init: float = 0.0
    label: str | None = None


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    in_service: bool = True


@dataclass(frozen=True)
class Gen:
    bus: int
    p_gen: float = 0.0
    q_gen: float = 0.0
    v_set: float = 1.0
    in_service: bool = True


@dataclass(frozen=True)
class Grid:
    """Bus/branch/generator description, all quantities per-unit on ``base_mva``.

    Construction validates the invariants; instances are immutable.
    """

    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    gens: tuple[Gen, ...]
    slack_index: int = field(init=False)

    def __init__(self, base_mva: float, buses: Sequence[Bus],
                 branches: Sequence[Branch], gens: Sequence[Gen]):
        object.__setattr__(self, "base_mva", float(base_mva))
        object.__setattr__(self, "buses", tuple(buses))
        object.__setattr__(self, "branches", tuple(branches))
        object.__setattr__(self, "gens", tuple(gens))
        object.__setattr__(self, "slack_index", self._validate())

    @property
    def n(self) -> int:
        return len(self.buses)

    def _validate(self) -> int:
        n = len(self.buses)
        if n == 0:
            raise GridValidationError("grid has no buses")
        if not self.base_mva > 0:
            raise GridValidationError(f"base_mva must be positive, got {self.base_mva}")
        slacks = []
        for i, bus in enumerate(self.buses):
            if bus.ordinal != i:
                raise GridValidationError(f"bus ordinals must be dense 0..n-1; position {i} holds {bus.ordinal}")
            if bus.kind not in BUS_KINDS:
                raise GridValidationError(f"bus {i}: unknown kind {bus.kind!r}")
            if not bus.v_init > 0:
                raise GridValidationError(f"bus {i}: v_init must be positive")
            if bus.kind == SLACK:
                slacks.append(i)
        if len(slacks) != 1:
            raise GridValidationError(f"expected exactly one slack bus, found {len(slacks)}")
        for k, br in enumerate(self.branches):
            for end in (br.from_bus, br.to_bus):
                if not 0 <= end < n:
                    raise GridValidationError(f"branch {k} references unknown bus {end}")
            if br.from_bus == br.to_bus:
                raise GridValidationError(f"branch {k} is a self-loop on bus {br.from_bus}")
            if not br.tap > 0:
                raise GridValidationError(f"branch {k}: tap must be positive")
            if br.in_service and br.r == 0 and br.x == 0:
                raise DegenerateBranchError(f"branch {k} ({br.from_bus}-{br.to_bus}) has r = x = 0")
        has_gen = np.zeros(n, dtype=bool)
        for k, g in enumerate(self.gens):
            if not 0 <= g.bus < n:
                raise GridValidationError(f"gen {k} references unknown bus {g.bus}")
            if g.in_service:
                has_gen[g.bus] = True
        for bus in self.buses:
            if bus.kind in (SLACK, PV) and not has_gen[bus.ordinal]:
                raise GridValidationError(f"{bus.kind} bus {bus.ordinal} has no in-service generator")
        return slacks[0]

    def bus_indices(self, kind: str) -> np.ndarray:
        return np.array([b.ordinal for b in self.buses if b.kind == kind], dtype=np.int64)

    def scheduled_injections(self) -> tuple[np.ndarray, np.ndarray]:
        """Net scheduled (P, Q) per bus: in-service generation minus load."""
        p = -np.array([b.p_load for b in self.buses])
        q = -np.array([b.q_load for b in self.buses])
        for g in self.gens:
            if g.in_service:
                p[g.bus] += g.p_gen
                q[g.bus] += g.q_gen
        return p, q

    def voltage_setpoints(self) -> np.ndarray:
        """Voltage magnitude targets; generator set-points override v_init at PV/slack buses."""
        v = np.array([b.v_init for b in self.buses])
        for g in self.gens:
            if g.in_service and self.buses[g.bus].kind != PQ:
                v[g.bus] = g.v_set
        return v


@dataclass(frozen=True)
class AdmittanceMatrix:
    n: int
    matrix: sp.csr_matrix

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass(frozen=True)
class WeightedGraph:
    n: int
    weights: sp.csr_matrix
    degree: np.ndarray


def _branch_arrays(grid: Grid):
    live = [br for br in grid.branches if br.in_service]
    f = np.array([br.from_bus for br in live], dtype=np.int64)
    t = np.array([br.to_bus for br in live], dtype=np.int64)
    z = np.array([complex(br.r, br.x) for br in live], dtype=complex)
    b = np.array([br.b_charging for br in live])
    tap = np.array([br.tap for br in live])
    shift = np.array([br.shift for br in live])
    return f, t, z, b, tap, shift


def branch_admittances(grid: Grid):
    """Two-port admittances (yff, yft, ytf, ytt) and endpoints of in-service branches."""
    f, t, z, b, tap, shift = _branch_arrays(grid)
    ys = 1.0 / z if len(z) else np.zeros(0, dtype=complex)
    ytt = ys + 0.5j * b
    yff = ytt / tap**2
    ratio = tap * np.exp(1j * shift)
    yft = -ys / np.conj(ratio)
    ytf = -ys / ratio
    return f, t, yff, yft, ytf, ytt


def build_ybus(grid: Grid) -> AdmittanceMatrix:
    """Bus admittance matrix; parallel branches accumulate, bus shunts land on the diagonal."""
    n = grid.n
    f, t, yff, yft, ytf, ytt = branch_admittances(grid)
    ysh = np.array([complex(b.g_shunt, b.b_shunt) for b in grid.buses])
    rows = np.concatenate([f, t, f, t, np.arange(n)])
    cols = np.concatenate([f, t, t, f, np.arange(n)])
    vals = np.concatenate([yff, ytt, yft, ytf, ysh])
    y = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    y.sum_duplicates()
    y.sort_indices()
    return AdmittanceMatrix(n, y)


def check_connectivity(w: WeightedGraph) -> int:
    """Number of connected components over nonzero edge weights."""
    count, _ = connected_components(w.weights, directed=False)
    return int(count)


def _components(w: WeightedGraph) -> list[list[int]]:
    _, labels = connected_components(w.weights, directed=False)
    groups: dict[int, list[int]] = {}
    for v, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(v)
    return list(groups.values())


def graph_from_edges(n: int, rows, cols, weights) -> WeightedGraph:
    """Symmetric weighted graph from an undirected edge list (duplicates summed)."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ValueError("edge weights must be nonnegative")
    keep = rows != cols
    rows, cols, weights = rows[keep], cols[keep], weights[keep]
    w = sp.coo_matrix(
        (np.concatenate([weights, weights]),
         (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    ).tocsr()
    w.sum_duplicates()
    w.eliminate_zeros()
    w.sort_indices()
    degree = np.asarray(w.sum(axis=1)).ravel()
    return WeightedGraph(n, w, degree)


def build_weighted_adjacency(grid: Grid, require_connected: bool = True) -> WeightedGraph:
    """Bus graph weighted by series admittance magnitude |1/(r + jx)|.

    Charging and taps are ignored; parallel branches sum.
    """
    f, t, z, *_ = _branch_arrays(grid)
    g = graph_from_edges(grid.n, f, t, np.abs(1.0 / z) if len(z) else np.zeros(0))
    if require_connected and grid.n > 1 and check_connectivity(g) > 1:
        raise ConnectivityError(_components(g))
    return g


def random_connected_graph(n: int, avg_degree: float = 2.7, rng=None,
                           weight_range: tuple[float, float] = (1.0, 30.0)) -> WeightedGraph:
    """Random connected weighted graph: a random spanning tree plus extra edges.

    The default degree mimics transmission-grid sparsity.
    """
    rng = np.random.default_rng(rng)
    if n < 2:
        raise ValueError("need at least two vertices")
    order = rng.permutation(n)
    parents = order[rng.integers(0, np.arange(1, n))]
    rows, cols = list(order[1:]), list(parents)
    extra = max(0, int(round(avg_degree * n / 2)) - (n - 1))
    seen = {(min(a, b), max(a, b)) for a, b in zip(rows, cols)}
    max_edges = n * (n - 1) // 2
    while extra > 0 and len(seen) < max_edges:
        a, b = rng.integers(0, n, size=2)
        key = (min(a, b), max(a, b))
        if a == b or key in seen:
            continue
        seen.add(key)
        rows.append(a)
        cols.append(b)
        extra -= 1
    w = rng.uniform(*weight_range, size=len(rows))
    return graph_from_edges(n, rows, cols, w)
