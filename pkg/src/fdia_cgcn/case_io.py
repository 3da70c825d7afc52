"""Reading and writing grid descriptions.

Two formats are supported: the bus/branch/gen subset of MATPOWER ``.m`` case
files, and a native JSON document holding per-unit values.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from importlib import resources

from .grid import PQ, PV, SLACK, Branch, Bus, Gen, Grid, GridValidationError


class CaseParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source or line is not None:
            where = f"{source or '<case>'}:{line if line is not None else '?'}: "
        super().__init__(where + message)


class GridSchemaError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


# MATPOWER column positions (0-based)
BUS_I, BUS_TYPE, PD, QD, GS, BS, VM, VA = 0, 1, 2, 3, 4, 5, 7, 8
F_BUS, T_BUS, BR_R, BR_X, BR_B, TAP, SHIFT, BR_STATUS = 0, 1, 2, 3, 4, 8, 9, 10
GEN_BUS, PG, QG, VG, GEN_STATUS = 0, 1, 2, 5, 7

_BUS_TYPES = {1: PQ, 2: PV, 3: SLACK}
_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_SCALAR = re.compile(r"mpc\.baseMVA\s*=\s*([^;%\n]+)")
_MATRIX = re.compile(r"mpc\.(bus|branch|gen)\s*=\s*\[")


def _strip_comments(text: str) -> list[str]:
    return [line.split("%", 1)[0] for line in text.splitlines()]


def _read_matrix(lines: list[str], name: str, source: str | None) -> tuple[list[list[float]], int]:
    start = None
    for i, line in enumerate(lines):
        m = _MATRIX.search(line)
        if m and m.group(1) == name:
            start = i
            break
    if start is None:
        raise CaseParseError(f"missing matrix mpc.{name}", len(lines), source)

    rows: list[list[float]] = []
    current: list[float] = []
    body = lines[start][_MATRIX.search(lines[start]).end():]
    lineno = start
    while True:
        closed = "]" in body
        if closed:
            body = body.split("]", 1)[0]
        for chunk_idx, chunk in enumerate(body.split(";")):
            if chunk_idx > 0 and current:
                rows.append(current)
                current = []
            for tok in chunk.replace(",", " ").split():
                if not _NUMBER.match(tok):
                    if tok.lower() in ("inf", "+inf", "-inf", "nan"):
                        current.append(float(tok))
                        continue
                    raise CaseParseError(f"bad number {tok!r} in mpc.{name}", lineno + 1, source)
                current.append(float(tok))
        # newline also terminates a row
        if current:
            rows.append(current)
            current = []
        if closed:
            break
        lineno += 1
        if lineno >= len(lines):
            raise CaseParseError(f"unterminated matrix mpc.{name}", start + 1, source)
        body = lines[lineno]

    if not rows:
        raise CaseParseError(f"matrix mpc.{name} is empty", start + 1, source)
    width = min(len(r) for r in rows)
    need = {"bus": VA + 1, "branch": BR_STATUS + 1, "gen": GEN_STATUS + 1}[name]
    if width < need:
        raise CaseParseError(f"mpc.{name} rows need at least {need} columns, found {width}", start + 1, source)
    return rows, start + 1


def parse_matpower_case(text: str, source: str | None = None) -> Grid:
    """Parse the ``mpc.baseMVA``/``bus``/``branch``/``gen`` fields of a MATPOWER case."""
    if not text.strip():
        raise CaseParseError("empty case text", 1, source)
    lines = _strip_comments(text)
    base = None
    for i, line in enumerate(lines):
        m = _SCALAR.search(line)
        if m:
            try:
                base = float(m.group(1).strip())
            except ValueError:
                raise CaseParseError(f"bad baseMVA value {m.group(1).strip()!r}", i + 1, source) from None
            break
    if base is None:
        raise CaseParseError("missing scalar mpc.baseMVA", len(lines), source)

    bus_rows, bus_line = _read_matrix(lines, "bus", source)
    branch_rows, branch_line = _read_matrix(lines, "branch", source)
    gen_rows, gen_line = _read_matrix(lines, "gen", source)

    ordinal: dict[int, int] = {}
    buses = []
    for k, row in enumerate(bus_rows):
        ext = int(row[BUS_I])
        if ext in ordinal:
            raise GridValidationError(f"duplicate bus number {ext} (mpc.bus row {k + 1})")
        btype = int(row[BUS_TYPE])
        if btype not in _BUS_TYPES:
            raise GridValidationError(f"bus {ext}: unsupported bus type {btype}")
        ordinal[ext] = len(buses)
        buses.append(Bus(
            ordinal=len(buses), kind=_BUS_TYPES[btype],
            p_load=row[PD] / base, q_load=row[QD] / base,
            g_shunt=row[GS] / base, b_shunt=row[BS] / base,
            v_init=row[VM], theta_init=math.radians(row[VA]), label=str(ext),
        ))

    def lookup(ext: float, what: str) -> int:
        try:
            return ordinal[int(ext)]
        except KeyError:
            raise GridValidationError(f"{what} references unknown bus {int(ext)}") from None

    branches = []
    for k, row in enumerate(branch_rows):
        tap = row[TAP] if row[TAP] != 0 else 1.0
        branches.append(Branch(
            from_bus=lookup(row[F_BUS], f"branch row {k + 1}"),
            to_bus=lookup(row[T_BUS], f"branch row {k + 1}"),
            r=row[BR_R], x=row[BR_X], b_charging=row[BR_B],
            tap=tap, shift=math.radians(row[SHIFT]), in_service=row[BR_STATUS] > 0,
        ))
    gens = []
    for k, row in enumerate(gen_rows):
        gens.append(Gen(
            bus=lookup(row[GEN_BUS], f"gen row {k + 1}"),
            p_gen=row[PG] / base, q_gen=row[QG] / base,
            v_set=row[VG], in_service=row[GEN_STATUS] > 0,
        ))
    return Grid(base, buses, branches, gens)


def load_case(path) -> Grid:
    """Load a grid from a ``.m`` MATPOWER file or a native ``.json`` file."""
    path = str(path)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if path.endswith(".json"):
        return parse_grid_json(text)
    return parse_matpower_case(text, source=path)


def builtin_case(name: str = "case14") -> Grid:
    """One of the bundled MATPOWER cases (currently ``case14``)."""
    text = resources.files("fdia_cgcn").joinpath("data").joinpath(f"{name}.m").read_text(encoding="utf-8")
    return parse_matpower_case(text, source=f"{name}.m")


# ---------------------------------------------------------------- native JSON

def grid_to_dict(grid: Grid) -> dict:
    ids = [b.label if b.label is not None else b.ordinal for b in grid.buses]
    return {
        "base_mva": grid.base_mva,
        "buses": [
            {"id": ids[b.ordinal], "kind": b.kind, "p_load": b.p_load, "q_load": b.q_load,
             "g_shunt": b.g_shunt, "b_shunt": b.b_shunt, "v_init": b.v_init,
             "theta_init": b.theta_init}
            for b in grid.buses
        ],
        "branches": [
            {"from": ids[br.from_bus], "to": ids[br.to_bus], "r": br.r, "x": br.x,
             "b": br.b_charging, "tap": br.tap, "shift": br.shift, "in_service": br.in_service}
            for br in grid.branches
        ],
        "gens": [
            {"bus": ids[g.bus], "p": g.p_gen, "q": g.q_gen, "v_set": g.v_set,
             "in_service": g.in_service}
            for g in grid.gens
        ],
    }


def write_grid_json(grid: Grid, indent: int | None = 1) -> str:
    return json.dumps(grid_to_dict(grid), indent=indent) + "\n"


def grid_fingerprint(grid: Grid) -> str:
    canonical = json.dumps(grid_to_dict(grid), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _num(obj: dict, key: str, path: str, default=None) -> float:
    if key not in obj:
        if default is None:
            raise GridSchemaError(f"{path}.{key}", "required field missing")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise GridSchemaError(f"{path}.{key}", f"expected number, got {type(v).__name__}")
    return float(v)


def _flag(obj: dict, key: str, path: str) -> bool:
    v = obj.get(key, True)
    if not isinstance(v, bool):
        raise GridSchemaError(f"{path}.{key}", "expected boolean")
    return v


def _list(doc: dict, key: str) -> list:
    if key not in doc:
        raise GridSchemaError(f"$.{key}", "required field missing")
    if not isinstance(doc[key], list):
        raise GridSchemaError(f"$.{key}", "expected array")
    return doc[key]


def grid_from_dict(doc) -> Grid:
    if not isinstance(doc, dict):
        raise GridSchemaError("$", "expected object")
    base = _num(doc, "base_mva", "$")
    bus_docs = _list(doc, "buses")
    branch_docs = _list(doc, "branches")
    gen_docs = _list(doc, "gens")

    ordinal: dict = {}
    buses = []
    for i, b in enumerate(bus_docs):
        path = f"$.buses[{i}]"
        if not isinstance(b, dict):
            raise GridSchemaError(path, "expected object")
        if "id" not in b:
            raise GridSchemaError(f"{path}.id", "required field missing")
        bid = b["id"]
        if not isinstance(bid, (str, int)) or isinstance(bid, bool):
            raise GridSchemaError(f"{path}.id", "expected string or integer")
        if bid in ordinal:
            raise GridSchemaError(f"{path}.id", f"duplicate bus id {bid!r}")
        kind = b.get("kind")
        if kind not in (SLACK, PV, PQ):
            raise GridSchemaError(f"{path}.kind", f"expected one of slack/pv/pq, got {kind!r}")
        ordinal[bid] = i
        # integer ids equal to the position carry no information beyond the ordinal
        label = None if (isinstance(bid, int) and bid == i) else bid
        buses.append(Bus(
            ordinal=i, kind=kind,
            p_load=_num(b, "p_load", path, 0.0), q_load=_num(b, "q_load", path, 0.0),
            g_shunt=_num(b, "g_shunt", path, 0.0), b_shunt=_num(b, "b_shunt", path, 0.0),
            v_init=_num(b, "v_init", path, 1.0), theta_init=_num(b, "theta_init", path, 0.0),
            label=label,
        ))

    def ref(obj: dict, key: str, path: str) -> int:
        if key not in obj:
            raise GridSchemaError(f"{path}.{key}", "required field missing")
        try:
            return ordinal[obj[key]]
        except (KeyError, TypeError):
            raise GridSchemaError(f"{path}.{key}", f"unknown bus id {obj[key]!r}") from None

    branches = []
    for i, br in enumerate(branch_docs):
        path = f"$.branches[{i}]"
        if not isinstance(br, dict):
            raise GridSchemaError(path, "expected object")
        branches.append(Branch(
            from_bus=ref(br, "from", path), to_bus=ref(br, "to", path),
            r=_num(br, "r", path), x=_num(br, "x", path), b_charging=_num(br, "b", path, 0.0),
            tap=_num(br, "tap", path, 1.0), shift=_num(br, "shift", path, 0.0),
            in_service=_flag(br, "in_service", path),
        ))
    gens = []
    for i, g in enumerate(gen_docs):
        path = f"$.gens[{i}]"
        if not isinstance(g, dict):
            raise GridSchemaError(path, "expected object")
        gens.append(Gen(
            bus=ref(g, "bus", path), p_gen=_num(g, "p", path, 0.0), q_gen=_num(g, "q", path, 0.0),
            v_set=_num(g, "v_set", path, 1.0), in_service=_flag(g, "in_service", path),
        ))
    return Grid(base, buses, branches, gens)


def parse_grid_json(text: str) -> Grid:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GridSchemaError("$", f"invalid JSON: {exc}") from None
    return grid_from_dict(doc)
