import hashlib
import json

import numpy as np
import pytest

from genbench.datasets import (
    DIHEDRAL_COLUMNS,
    Dataset,
    DatasetFormatError,
    GMMSpec,
    destandardize,
    dihedral_surrogate,
    gen_gmm,
    ingest_dihedrals,
    random_mode_means,
    read_dataset,
    residue_columns,
    split,
    standardize,
    weights_for_delta_f,
    wrap_degrees,
    write_dataset,
)


def test_spec_validation():
    with pytest.raises(ValueError):
        GMMSpec(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ValueError):
        GMMSpec(np.zeros((2, 2)), [0.5, 0.4])
    with pytest.raises(ValueError):
        GMMSpec(np.zeros((2, 2)), [1.0])
    GMMSpec(np.zeros((3, 2)), [1 / 3, 1 / 3, 1 / 3])


def test_single_mode_mean():
    n = 200_000
    ds = gen_gmm(GMMSpec(np.zeros((1, 2)), [1.0], seed=4), n)
    assert np.all(np.abs(ds.samples.mean(axis=0)) < 4 / np.sqrt(n))


def test_deterministic_per_seed():
    spec = GMMSpec(random_mode_means(5, 4, seed=1), np.full(4, 0.25), seed=9)
    assert np.array_equal(gen_gmm(spec, 100).samples, gen_gmm(spec, 100).samples)


def test_mode_occupancy_matches_weights():
    w = 0.3
    n = 100_000
    ds = gen_gmm(GMMSpec(random_mode_means(2, 2, seed=0), [w, 1 - w], seed=2), n)
    frac = np.mean(ds.labels == 0)
    assert abs(frac - w) < 4 * np.sqrt(w * (1 - w) / n)


def test_symmetric_counts_within_binomial_bounds():
    n = 2000
    sigma = np.sqrt(n * 0.25)
    means = random_mode_means(2, 2, seed=0)
    for seed in range(100):
        labels = gen_gmm(GMMSpec(means, [0.5, 0.5], seed=seed), n).labels
        assert abs(np.sum(labels == 0) - np.sum(labels == 1)) / 2 <= 5 * sigma


def test_weights_for_delta_f():
    minor, major = weights_for_delta_f(1.0)
    assert np.log(major / minor) == pytest.approx(1.0, abs=1e-12)
    assert minor + major == pytest.approx(1.0, abs=1e-15)
    assert weights_for_delta_f(0.0).tolist() == [0.5, 0.5]


def test_random_means_separated_and_bounded():
    m = random_mode_means(10, 4, half_width=8, seed=3)
    assert m.shape == (4, 10) and np.all(np.abs(m) <= 8)
    d = np.sqrt(((m[:, None] - m[None]) ** 2).sum(-1))
    assert d[np.triu_indices(4, 1)].min() > 6
    assert np.array_equal(m, random_mode_means(10, 4, half_width=8, seed=3))


def test_split_disjoint_reproducible():
    ds = gen_gmm(GMMSpec(np.zeros((1, 3)), [1.0], seed=0), 1000)
    tr, te = split(ds, 0.1, seed=5)
    assert tr.n == 900 and te.n == 100
    h = lambda rows: {hashlib.sha1(r.tobytes()).hexdigest() for r in rows}
    assert not h(tr.samples) & h(te.samples)
    tr2, _ = split(ds, 0.1, seed=5)
    assert np.array_equal(tr.samples, tr2.samples)


def test_standardize_round_trip():
    ds = gen_gmm(GMMSpec(random_mode_means(4, 2, seed=0), [0.5, 0.5], scale=2.0, seed=1), 500)
    z, stats = standardize(ds)
    np.testing.assert_allclose(z.samples.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(z.samples.std(0), 1, atol=1e-12)
    np.testing.assert_allclose(destandardize(z, stats).samples, ds.samples, atol=1e-10)


def test_constant_column_rejected():
    with pytest.raises(ValueError, match="x1"):
        standardize(Dataset(np.column_stack([np.arange(5.0), np.ones(5)])))


def test_wrap_degrees():
    v = np.array([-180.0, 0.5, 179.999, 180.0, 540.0, -181.0])
    w = wrap_degrees(v)
    assert w[:3].tobytes() == v[:3].tobytes()
    np.testing.assert_allclose(w[3:], [-180.0, -180.0, 179.0])


def test_angular_range_enforced():
    with pytest.raises(ValueError):
        Dataset(np.array([[200.0]]), angular=[True])


def test_dihedral_surrogate_shape():
    ds = dihedral_surrogate(2000, seed=0)
    assert ds.columns == DIHEDRAL_COLUMNS and all(ds.angular)
    assert np.all(ds.samples >= -180) and np.all(ds.samples < 180)
    cols = sorted(c for r in range(1, 10) for c in residue_columns(r))
    assert cols == list(range(18))


def test_write_read_round_trip(tmp_path):
    ds = gen_gmm(GMMSpec(random_mode_means(3, 2, seed=0), [0.5, 0.5], seed=1), 50)
    path = write_dataset(ds, tmp_path / "g.csv")
    back = read_dataset(path)
    assert np.array_equal(back.samples, ds.samples)
    meta = json.loads((tmp_path / "g.meta.json").read_text())
    assert meta["n"] == 50 and meta["d"] == 3 and meta["seed"] == 1 and meta["generator"] == "gmm"
    text = path.read_bytes()
    assert b"\r\n" not in text and text.startswith(b"x0,x1,x2\n")


def test_ingest_idempotent(tmp_path):
    src = write_dataset(dihedral_surrogate(300, seed=2), tmp_path / "a.csv")
    first = ingest_dihedrals(src)
    again = ingest_dihedrals(write_dataset(first, tmp_path / "b.csv"))
    assert np.array_equal(first.samples, again.samples)


def test_ingest_errors_carry_line_numbers(tmp_path):
    header = ",".join(DIHEDRAL_COLUMNS)
    bad = tmp_path / "bad.csv"
    bad.write_text(header + "\n" + ",".join(["1"] * 18) + "\n" + ",".join(["1"] * 17) + "\n")
    with pytest.raises(DatasetFormatError) as info:
        ingest_dihedrals(bad)
    assert info.value.line == 3
    wrong = tmp_path / "wrong.csv"
    wrong.write_text(",".join(f"c{i}" for i in range(18)) + "\n")
    with pytest.raises(DatasetFormatError):
        ingest_dihedrals(wrong)
    nonnum = tmp_path / "nonnum.csv"
    nonnum.write_text(header + "\n" + ",".join(["a"] * 18) + "\n")
    with pytest.raises(DatasetFormatError) as info:
        ingest_dihedrals(nonnum)
    assert info.value.line == 2


def test_ingest_wraps_out_of_range(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(",".join(DIHEDRAL_COLUMNS) + "\n" + ",".join(["190"] * 18) + "\n")
    np.testing.assert_allclose(ingest_dihedrals(p).samples, -170.0)
