"""Synthetic labelled measurement datasets.

Each scenario rescales bus load and generation, solves the AC power flow and
records noisy bus injections (P, Q).  Half of every split is then corrupted by
either a multiplicative scale attack or a distribution-replacement attack.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .case_io import grid_fingerprint, grid_from_dict, grid_to_dict
from .grid import AdmittanceMatrix, Grid, build_ybus
from .power_flow import PFOptions, PowerFlowError, compute_injections, solve_ac_power_flow

NONE, SCALE, DISTRIBUTION = 0, 1, 2
ATTACK_NAMES = {NONE: "none", SCALE: "scale", DISTRIBUTION: "distribution"}
ATTACK_CODES = {v: k for k, v in ATTACK_NAMES.items()}
SPLITS = ("train", "validation", "test")

MAGIC = b"FDIA"
FORMAT_VERSION = 1
CHANNELS = 2
_HEADER = struct.Struct("<4sIIIQ")

_ATTACK_STREAM = 0xA77AC
_KIND_STREAM = 0x5B117


class ConfigError(ValueError):
    pass


class ScenarioError(RuntimeError):
    """Power flow failed for a scenario on every retry."""

    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message)


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GenConfig:
    total: int = 36000
    splits: tuple[Fraction, Fraction, Fraction] = (Fraction(4, 6), Fraction(1, 6), Fraction(1, 6))
    attack_fraction: Fraction = Fraction(1, 2)
    load_bounds: tuple[float, float] = (0.8, 1.2)
    noise: float = 0.01
    scale_bounds: tuple[float, float] = (0.9, 1.1)
    bus_fraction: float = 1.0
    seed: int = 0
    max_retries: int = 8
    pf_tol: float = 1e-8
    pf_max_iter: int = 20

    def __post_init__(self):
        splits = tuple(Fraction(s) for s in self.splits)
        object.__setattr__(self, "splits", splits)
        object.__setattr__(self, "attack_fraction", Fraction(self.attack_fraction))
        if len(splits) != 3 or any(s < 0 for s in splits) or sum(splits) != 1:
            raise ConfigError(f"split fractions must be three nonnegative values summing to 1, got {splits}")
        if not 0 <= self.attack_fraction <= 1:
            raise ConfigError("attack fraction must lie in [0, 1]")
        for name in ("load_bounds", "scale_bounds"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
        if self.noise < 0:
            raise ConfigError("noise level must be nonnegative")
        if not 0 < self.bus_fraction <= 1:
            raise ConfigError("bus fraction must lie in (0, 1]")

    def split_sizes(self) -> tuple[int, int, int]:
        val = int(self.total * self.splits[1])
        test = int(self.total * self.splits[2])
        return self.total - val - test, val, test

    def to_dict(self) -> dict:
        d = asdict(self)
        d["splits"] = [str(s) for s in self.splits]
        d["attack_fraction"] = str(self.attack_fraction)
        d["load_bounds"] = list(self.load_bounds)
        d["scale_bounds"] = list(self.scale_bounds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        d["splits"] = tuple(Fraction(s) for s in d["splits"])
        d["attack_fraction"] = Fraction(d["attack_fraction"])
        d["load_bounds"] = tuple(d["load_bounds"])
        d["scale_bounds"] = tuple(d["scale_bounds"])
        return cls(**d)


@dataclass(frozen=True)
class Sample:
    features: np.ndarray  # (n, 2): columns P, Q
    label: int
    attack_kind: str
    scenario_seed: int
    load_factors: np.ndarray | None = field(default=None, repr=False, compare=False)
    degenerate_channels: tuple[int, ...] = ()


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray
    epsilon: float = 1e-8

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / np.maximum(self.std, self.epsilon)

    def inverse(self, standardized: np.ndarray) -> np.ndarray:
        return np.asarray(standardized) * np.maximum(self.std, self.epsilon) + self.mean

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.mean, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.std, dtype="<f8").tobytes())
        h.update(struct.pack("<d", self.epsilon))
        return h.hexdigest()

    @classmethod
    def identity(cls, n: int) -> "Scaler":
        return cls(np.zeros((n, CHANNELS)), np.ones((n, CHANNELS)))


@dataclass
class Split:
    features: np.ndarray  # (count, n, 2) float32, unstandardized
    labels: np.ndarray  # (count,) uint8
    kinds: np.ndarray  # (count,) uint8

    def __len__(self) -> int:
        return len(self.labels)

    def samples(self) -> Iterator[Sample]:
        for f, y, k in zip(self.features, self.labels, self.kinds):
            yield Sample(f.astype(np.float64), int(y), ATTACK_NAMES[int(k)], -1)

    def composition(self) -> dict[str, int]:
        return {
            "total": len(self),
            "clean": int(np.sum(self.kinds == NONE)),
            "scale": int(np.sum(self.kinds == SCALE)),
            "distribution": int(np.sum(self.kinds == DISTRIBUTION)),
        }


@dataclass
class Dataset:
    n: int
    splits: dict[str, Split]
    scaler: Scaler
    config: GenConfig
    grid_fingerprint: str
    grid: dict | None = None

    @property
    def train(self) -> Split:
        return self.splits["train"]

    @property
    def validation(self) -> Split:
        return self.splits["validation"]

    @property
    def test(self) -> Split:
        return self.splits["test"]


# ------------------------------------------------------------------ seeding

def derive_seed(*entropy: int) -> int:
    """Deterministic 64-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(e) for e in entropy]).generate_state(1, np.uint64)[0])


def scenario_seed(master_seed: int, index: int) -> int:
    return derive_seed(master_seed, index)


def attack_seed(scen_seed: int) -> int:
    return derive_seed(scen_seed, _ATTACK_STREAM)


# ---------------------------------------------------------------- scenarios

def _base_schedule(grid: Grid):
    n = grid.n
    pg, qg = np.zeros(n), np.zeros(n)
    for g in grid.gens:
        if g.in_service:
            pg[g.bus] += g.p_gen
            qg[g.bus] += g.q_gen
    pl = np.array([b.p_load for b in grid.buses])
    ql = np.array([b.q_load for b in grid.buses])
    return pg, qg, pl, ql


def generate_scenario(grid: Grid, ybus: AdmittanceMatrix, seed: int,
                      config: GenConfig | None = None) -> Sample:
    """One clean, noisy measurement snapshot.

    Every bus draws its own factor u ~ U(lo, hi) that multiplies its active and
    reactive load and its active generation.  After the power flow, each
    injection z receives independent N(0, (noise * |z|)^2) noise.  A diverging
    power flow is redrawn from a derived seed up to ``max_retries`` times.
    """
    cfg = config or GenConfig()
    pg, qg, pl, ql = _base_schedule(grid)
    opts = PFOptions(tol=cfg.pf_tol, max_iter=cfg.pf_max_iter)
    last_err: Exception | None = None
    for attempt in range(cfg.max_retries + 1):
        rng = np.random.default_rng(seed if attempt == 0 else derive_seed(seed, attempt))
        u = rng.uniform(cfg.load_bounds[0], cfg.load_bounds[1], grid.n)
        p_sched = u * pg - u * pl
        q_sched = qg - u * ql
        try:
            sol = solve_ac_power_flow(grid, ybus, opts, p_sched=p_sched, q_sched=q_sched)
        except PowerFlowError as exc:
            last_err = exc
            continue
        p, q = compute_injections(sol.v, sol.theta, ybus)
        z = np.column_stack([p, q])
        if cfg.noise > 0:
            z = z + rng.standard_normal(z.shape) * (cfg.noise * np.abs(z))
        return Sample(z, 0, "none", seed, load_factors=u)
    raise ScenarioError(f"power flow failed after {cfg.max_retries + 1} draws: {last_err}")


def _attacked_rows(rng: np.random.Generator, n: int, bus_fraction: float) -> np.ndarray | None:
    if bus_fraction >= 1.0:
        return None
    k = max(1, int(round(bus_fraction * n)))
    return np.sort(rng.choice(n, size=k, replace=False))


def apply_scale_attack(sample: Sample, seed: int, bounds: tuple[float, float] = (0.9, 1.1),
                       bus_fraction: float = 1.0) -> Sample:
    """Multiply each measurement by an independent U(lo, hi) factor."""
    rng = np.random.default_rng(seed)
    z = np.array(sample.features, dtype=np.float64)
    rows = _attacked_rows(rng, z.shape[0], bus_fraction)
    if rows is None:
        z = z * rng.uniform(bounds[0], bounds[1], z.shape)
    else:
        z[rows] *= rng.uniform(bounds[0], bounds[1], (len(rows), z.shape[1]))
    return replace(sample, features=z, label=1, attack_kind="scale")


def apply_distribution_attack(sample: Sample, seed: int, bus_fraction: float = 1.0) -> Sample:
    """Replace each channel's entries by draws from N(mean, var) of that channel.

    Mean and variance are taken over the sample's buses, P and Q separately.
    A zero-variance channel is replaced by its mean and listed in
    ``degenerate_channels``.
    """
    z = np.array(sample.features, dtype=np.float64)
    n = z.shape[0]
    if n < 2:
        raise ValueError("distribution attack needs at least two buses")
    rng = np.random.default_rng(seed)
    rows = _attacked_rows(rng, n, bus_fraction)
    idx = np.arange(n) if rows is None else rows
    degenerate = []
    for c in range(z.shape[1]):
        mu = z[:, c].mean()
        sigma = z[:, c].std()
        if sigma == 0:
            z[idx, c] = mu
            degenerate.append(c)
        else:
            z[idx, c] = rng.normal(mu, sigma, len(idx))
    return replace(sample, features=z, label=1, attack_kind="distribution",
                   degenerate_channels=tuple(degenerate))


def attack(sample: Sample, kind: int, seed: int, config: GenConfig) -> Sample:
    if kind == NONE:
        return sample
    if kind == SCALE:
        return apply_scale_attack(sample, seed, config.scale_bounds, config.bus_fraction)
    if kind == DISTRIBUTION:
        return apply_distribution_attack(sample, seed, config.bus_fraction)
    raise ValueError(f"unknown attack kind {kind}")


# ------------------------------------------------------------------ dataset

def split_kinds(count: int, attack_fraction: Fraction, seed: int) -> np.ndarray:
    """Attack kinds for one split in a seeded random order.

    ``floor(count * attack_fraction)`` samples are attacked; they divide evenly
    between the two attacks and the distribution attack takes any odd one.
    """
    attacked = int(count * attack_fraction)
    n_scale = attacked // 2
    kinds = np.array([NONE] * (count - attacked) + [SCALE] * n_scale
                     + [DISTRIBUTION] * (attacked - n_scale), dtype=np.uint8)
    return np.random.default_rng(seed).permutation(kinds)


def plan(config: GenConfig) -> list[tuple[str, range, np.ndarray]]:
    """(split name, global index range, attack kinds) for every split."""
    sizes = config.split_sizes()
    if config.total < 6 or min(sizes) < 1:
        raise ConfigError(f"total={config.total} cannot be divided into nonempty splits {sizes}")
    out, start = [], 0
    for sid, (name, size) in enumerate(zip(SPLITS, sizes)):
        kinds = split_kinds(size, config.attack_fraction, derive_seed(config.seed, _KIND_STREAM, sid))
        out.append((name, range(start, start + size), kinds))
        start += size
    return out


def _generate_block(grid: Grid, config: GenConfig, indices: Sequence[int],
                    kinds: np.ndarray) -> tuple[np.ndarray, list[int]]:
    ybus = build_ybus(grid)
    feats = np.empty((len(indices), grid.n, CHANNELS), dtype=np.float32)
    for pos, (i, k) in enumerate(zip(indices, kinds)):
        sseed = scenario_seed(config.seed, i)
        try:
            s = generate_scenario(grid, ybus, sseed, config)
        except ScenarioError as exc:
            raise ScenarioError(f"scenario {i}: {exc}", index=i) from None
        s = attack(s, int(k), attack_seed(sseed), config)
        feats[pos] = s.features
    return feats, list(indices)


def _chunks(seq: Sequence, size: int):
    for i in range(0, len(seq), size):
        yield seq[i:i + size]


def fit_scaler(features: np.ndarray, epsilon: float = 1e-8) -> Scaler:
    """Per (bus, channel) mean and standard deviation over a stack of samples."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] == 0:
        raise ValueError("need a nonempty (count, n, channels) array")
    return Scaler(x.mean(axis=0), x.std(axis=0), epsilon)


def apply_scaler(scaler: Scaler, features: np.ndarray) -> np.ndarray:
    return scaler.transform(features)


def generate_dataset(grid: Grid, config: GenConfig | None = None, jobs: int = 1,
                     chunk: int = 500, progress=None) -> Dataset:
    """Generate every split.  Output is independent of ``jobs``."""
    cfg = config or GenConfig()
    layout = plan(cfg)
    tasks = []
    for name, idx, kinds in layout:
        for block in _chunks(list(zip(idx, kinds)), chunk):
            tasks.append((name, [i for i, _ in block], np.array([k for _, k in block], dtype=np.uint8)))

    feats = {name: np.empty((len(idx), grid.n, CHANNELS), dtype=np.float32) for name, idx, _ in layout}
    starts = {name: idx.start for name, idx, _ in layout}

    def store(name, block, indices):
        off = indices[0] - starts[name]
        feats[name][off:off + len(indices)] = block
        if progress:
            progress(len(indices))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [(name, pool.submit(_generate_block, grid, cfg, ind, kinds)) for name, ind, kinds in tasks]
            for name, fut in futures:
                store(name, *fut.result())
    else:
        for name, ind, kinds in tasks:
            store(name, *_generate_block(grid, cfg, ind, kinds))

    splits = {}
    for name, _, kinds in layout:
        labels = (kinds != NONE).astype(np.uint8)
        splits[name] = Split(feats[name], labels, kinds.copy())
    scaler = fit_scaler(splits["train"].features)
    return Dataset(grid.n, splits, scaler, cfg, grid_fingerprint(grid), grid_to_dict(grid))


# -------------------------------------------------------------- persistence

def write_split(path, split: Split) -> None:
    count, n, ch = split.features.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n, ch, count))
        fh.write(np.ascontiguousarray(split.features, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(split.labels, dtype=np.uint8).tobytes())
        fh.write(np.ascontiguousarray(split.kinds, dtype=np.uint8).tobytes())


def read_split(path) -> Split:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    magic, version, n, ch, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    nfeat = count * n * ch
    expected = _HEADER.size + 4 * nfeat + 2 * count
    if len(data) != expected:
        raise DatasetFormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    off = _HEADER.size
    feats = np.frombuffer(data, dtype="<f4", count=nfeat, offset=off).reshape(count, n, ch).astype(np.float32)
    off += 4 * nfeat
    labels = np.frombuffer(data, dtype=np.uint8, count=count, offset=off).copy()
    kinds = np.frombuffer(data, dtype=np.uint8, count=count, offset=off + count).copy()
    if np.any(kinds > DISTRIBUTION) or np.any(labels != (kinds != NONE)):
        raise DatasetFormatError(f"{path}: labels and attack kinds disagree")
    return Split(feats, labels, kinds)


def dataset_meta(ds: Dataset) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "n": ds.n,
        "channels": CHANNELS,
        "grid_fingerprint": ds.grid_fingerprint,
        "config": ds.config.to_dict(),
        "counts": {name: ds.splits[name].composition() for name in SPLITS},
        "scaler": {
            "mean": ds.scaler.mean.tolist(),
            "std": ds.scaler.std.tolist(),
            "epsilon": ds.scaler.epsilon,
            "digest": ds.scaler.digest(),
        },
        "grid": ds.grid,
    }


def save_dataset(ds: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        write_split(out / f"{name}.bin", ds.splits[name])
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(dataset_meta(ds), fh, indent=1)
        fh.write("\n")


def load_dataset(data_dir) -> Dataset:
    d = Path(data_dir)
    try:
        meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetFormatError(f"{d}: no meta.json") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise DatasetFormatError(f"{d}: unsupported format version {meta.get('format_version')}")
    splits = {name: read_split(d / f"{name}.bin") for name in SPLITS}
    for name, s in splits.items():
        if s.features.shape[1] != meta["n"]:
            raise DatasetFormatError(f"{d}/{name}.bin: n={s.features.shape[1]}, meta says {meta['n']}")
    sc = meta["scaler"]
    scaler = Scaler(np.array(sc["mean"], dtype=np.float64), np.array(sc["std"], dtype=np.float64),
                    float(sc["epsilon"]))
    return Dataset(meta["n"], splits, scaler, GenConfig.from_dict(meta["config"]),
                   meta["grid_fingerprint"], meta.get("grid"))


def dataset_grid(ds: Dataset) -> Grid:
    if ds.grid is None:
        raise DatasetFormatError("dataset carries no grid description")
    return grid_from_dict(ds.grid)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def default_jobs() -> int:
    return max(1, (os.cpu_count() or 1))
