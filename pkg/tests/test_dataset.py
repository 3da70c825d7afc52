import json
from fractions import Fraction

import numpy as np
import pytest

from fdia_cgcn.dataset import (DISTRIBUTION, NONE, SCALE, ConfigError, DatasetFormatError, GenConfig, Sample, Scaler,
                               apply_distribution_attack, apply_scale_attack, dataset_meta, file_digest,
                               fit_scaler, generate_dataset, generate_scenario, load_dataset, plan, read_split,
                               save_dataset, split_kinds, write_split)
from fdia_cgcn.grid import build_ybus
from fdia_cgcn.power_flow import compute_injections, solve_ac_power_flow

from conftest import two_bus_grid


@pytest.fixture(scope="module")
def small_ds(case14):
    return generate_dataset(case14, GenConfig(total=120, seed=7))


def clean_sample(z):
    return Sample(np.asarray(z, dtype=float), 0, "none", 0)


def test_degenerate_config_gives_base_injections(case14):
    y = build_ybus(case14)
    sol = solve_ac_power_flow(case14, y)
    p, q = compute_injections(sol.v, sol.theta, y)
    s = generate_scenario(case14, y, 42, GenConfig(noise=0.0, load_bounds=(1.0, 1.0)))
    np.testing.assert_array_equal(s.features, np.column_stack([p, q]))
    assert s.label == 0 and s.attack_kind == "none"


def test_scenario_determinism(case14):
    y = build_ybus(case14)
    a = generate_scenario(case14, y, 99)
    b = generate_scenario(case14, y, 99)
    assert a.features.tobytes() == b.features.tobytes()
    assert generate_scenario(case14, y, 100).features.tobytes() != a.features.tobytes()


def test_load_factor_statistics(case14):
    y = build_ybus(case14)
    cfg = GenConfig(noise=0.0)
    u = np.array([generate_scenario(case14, y, s, cfg).load_factors for s in range(1000)])
    assert u.min() >= 0.8 and u.max() <= 1.2
    assert np.all(np.abs(u.mean(axis=0) - 1.0) < 0.01)


def test_noise_is_relative(case14):
    y = build_ybus(case14)
    clean = generate_scenario(case14, y, 5, GenConfig(noise=0.0))
    noisy = generate_scenario(case14, y, 5, GenConfig(noise=0.01))
    rel = np.abs(noisy.features - clean.features) / np.maximum(np.abs(clean.features), 1e-300)
    mask = np.abs(clean.features) > 1e-9
    assert np.all(rel[mask] < 0.06)  # 6 sigma


def test_scale_attack_bound(rng):
    z = rng.standard_normal((14, 2))
    for seed in range(50):
        a = apply_scale_attack(clean_sample(z), seed)
        assert np.all(np.abs(a.features - z) <= 0.1 * np.abs(z) + 1e-15)
        assert a.label == 1 and a.attack_kind == "scale"


def test_scale_attack_collapsed_bounds(rng):
    z = rng.standard_normal((5, 2))
    a = apply_scale_attack(clean_sample(z), 3, bounds=(1.0, 1.0))
    np.testing.assert_array_equal(a.features, z)
    assert a.label == 1


def test_scale_attack_reproducible(rng):
    z = rng.standard_normal((5, 2))
    assert np.array_equal(apply_scale_attack(clean_sample(z), 8).features,
                          apply_scale_attack(clean_sample(z), 8).features)


def test_scale_attack_bus_subset(rng):
    z = rng.standard_normal((10, 2))
    a = apply_scale_attack(clean_sample(z), 1, bus_fraction=0.3)
    changed = np.any(a.features != z, axis=1)
    assert changed.sum() == 3


def test_distribution_attack_constant_channel(rng):
    z = np.column_stack([np.full(6, 0.5), rng.standard_normal(6)])
    a = apply_distribution_attack(clean_sample(z), 11)
    np.testing.assert_array_equal(a.features[:, 0], 0.5)
    assert a.degenerate_channels == (0,)
    assert not np.array_equal(a.features[:, 1], z[:, 1])
    assert a.label == 1 and a.attack_kind == "distribution"


def test_distribution_attack_channel_independence(rng):
    z = np.column_stack([rng.standard_normal(8), np.full(8, -0.2)])
    a = apply_distribution_attack(clean_sample(z), 4)
    np.testing.assert_array_equal(a.features[:, 1], -0.2)
    assert not np.array_equal(a.features[:, 0], z[:, 0])


def test_distribution_attack_clt(rng):
    n = 14
    z = rng.standard_normal((n, 2)) * [0.5, 2.0] + [1.0, -3.0]
    mu, sigma = z.mean(axis=0), z.std(axis=0)
    reps = 400
    means = np.array([apply_distribution_attack(clean_sample(z), seed).features.mean(axis=0)
                      for seed in range(reps)])
    assert np.all(np.abs(means.mean(axis=0) - mu) <= 4 * sigma / np.sqrt(n * reps))
    # per-sample means scatter like sigma / sqrt(n)
    spread = means.std(axis=0) / (sigma / np.sqrt(n))
    assert np.all(np.abs(spread - 1) < 0.15)


def test_distribution_attack_needs_two_buses():
    with pytest.raises(ValueError):
        apply_distribution_attack(clean_sample([[1.0, 2.0]]), 0)


def test_full_protocol_composition():
    layout = plan(GenConfig(total=36000))
    counts = {name: (len(idx), int(np.sum(k == NONE)), int(np.sum(k == SCALE)), int(np.sum(k == DISTRIBUTION)))
              for name, idx, k in layout}
    assert counts["train"] == (24000, 12000, 6000, 6000)
    assert counts["validation"] == (6000, 3000, 1500, 1500)
    assert counts["test"] == (6000, 3000, 1500, 1500)
    assert layout[0][1].stop == layout[1][1].start and layout[1][1].stop == layout[2][1].start


def test_twelve_samples_two_bus():
    ds = generate_dataset(two_bus_grid(), GenConfig(total=12, seed=1))
    assert [len(ds.splits[s]) for s in ("train", "validation", "test")] == [8, 2, 2]
    for s in ds.splits.values():
        assert np.sum(s.labels == 0) == len(s) // 2


def test_odd_count_extra_goes_to_distribution():
    k = split_kinds(7, Fraction(1, 1), 0)
    assert np.sum(k == SCALE) == 3 and np.sum(k == DISTRIBUTION) == 4


@pytest.mark.parametrize("total", [0, 5])
def test_infeasible_total(total):
    with pytest.raises(ConfigError):
        plan(GenConfig(total=total))


def test_config_validation():
    with pytest.raises(ConfigError):
        GenConfig(splits=(Fraction(1, 2), Fraction(1, 2), Fraction(1, 2)))
    with pytest.raises(ConfigError):
        GenConfig(load_bounds=(1.2, 0.8))
    cfg = GenConfig(total=50, seed=3)
    assert GenConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_split_invariants(small_ds):
    for s in small_ds.splits.values():
        assert abs(int(np.sum(s.labels == 1)) - int(np.sum(s.labels == 0))) <= 1
        np.testing.assert_array_equal(s.labels == 1, s.kinds != NONE)
        assert np.all(np.isfinite(s.features))
        assert s.features.dtype == np.float32


def test_scaler_standardizes_train(small_ds):
    x = small_ds.scaler.transform(small_ds.train.features)
    live = small_ds.scaler.std > 1e-8
    assert np.all(np.abs(x.mean(axis=0)) < 1e-6)
    assert np.all(np.abs(x.std(axis=0)[live] - 1) < 1e-6)
    assert np.all(np.isfinite(small_ds.scaler.transform(small_ds.test.features)))


def test_scaler_no_leakage(small_ds):
    ref = fit_scaler(small_ds.train.features)
    np.testing.assert_array_equal(ref.mean, small_ds.scaler.mean)
    np.testing.assert_array_equal(ref.std, small_ds.scaler.std)


def test_scaler_constant_column_and_inverse(rng):
    x = rng.standard_normal((30, 3, 2))
    x[:, 1, 0] = 2.5
    sc = fit_scaler(x)
    z = sc.transform(x)
    np.testing.assert_array_equal(z[:, 1, 0], 0.0)
    np.testing.assert_allclose(sc.inverse(z), x, atol=1e-6)
    with pytest.raises(ValueError):
        fit_scaler(np.zeros((0, 3, 2)))
    assert np.all(Scaler.identity(3).transform(x) == x)


def test_split_format_round_trip(small_ds, tmp_path):
    p = tmp_path / "t.bin"
    write_split(p, small_ds.test)
    s = read_split(p)
    np.testing.assert_array_equal(s.features, small_ds.test.features)
    np.testing.assert_array_equal(s.labels, small_ds.test.labels)
    np.testing.assert_array_equal(s.kinds, small_ds.test.kinds)
    raw = p.read_bytes()
    assert raw[:4] == b"FDIA"
    assert len(raw) == 24 + len(s) * (14 * 2 * 4 + 2)


def test_split_format_rejections(small_ds, tmp_path):
    p = tmp_path / "t.bin"
    write_split(p, small_ds.test)
    raw = bytearray(p.read_bytes())
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DatasetFormatError, match="magic"):
        read_split(bad)
    bad.write_bytes(raw[:-1])
    with pytest.raises(DatasetFormatError):
        read_split(bad)
    flipped = raw.copy()
    flipped[-1] = 0 if flipped[-1] else 1  # last attack kind no longer matches its label
    bad.write_bytes(flipped)
    with pytest.raises(DatasetFormatError, match="disagree"):
        read_split(bad)


def test_save_load_round_trip(small_ds, tmp_path):
    save_dataset(small_ds, tmp_path / "d")
    ds = load_dataset(tmp_path / "d")
    assert ds.config == small_ds.config
    assert ds.grid_fingerprint == small_ds.grid_fingerprint
    assert ds.scaler.digest() == small_ds.scaler.digest()
    meta = json.loads((tmp_path / "d" / "meta.json").read_text())
    assert meta == json.loads(json.dumps(dataset_meta(small_ds)))
    assert meta["counts"]["train"]["total"] == 80
    with pytest.raises(DatasetFormatError):
        load_dataset(tmp_path / "missing")


def _digests(path):
    return {f.name: file_digest(f) for f in sorted(path.iterdir())}


def test_byte_identical_regeneration(case14, small_ds, tmp_path):
    again = generate_dataset(case14, GenConfig(total=120, seed=7))
    save_dataset(small_ds, tmp_path / "a")
    save_dataset(again, tmp_path / "b")
    assert _digests(tmp_path / "a") == _digests(tmp_path / "b")
    other = generate_dataset(case14, GenConfig(total=120, seed=8))
    save_dataset(other, tmp_path / "c")
    assert _digests(tmp_path / "c")["train.bin"] != _digests(tmp_path / "a")["train.bin"]


def test_parallel_equals_serial(case14, small_ds, tmp_path):
    par = generate_dataset(case14, GenConfig(total=120, seed=7), jobs=2, chunk=17)
    save_dataset(small_ds, tmp_path / "s")
    save_dataset(par, tmp_path / "p")
    assert _digests(tmp_path / "s") == _digests(tmp_path / "p")
