"""Acceptance checks, one test per criterion.

Each test records a ``PASS``/``FAIL`` line that the session summary prints
(see conftest.py). Tolerances below are the pinned acceptance values.
Experiment outputs go to a temporary directory unless
``GENBENCH_ACCEPTANCE_DIR`` names a persistent one, in which case finished
cells are reused by the harness journal.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from genbench.cfm import CFMModel, cfm_log_prob, cfm_make_pairs, cfm_objective, cfm_train
from genbench.core.training import Budget
from genbench.datasets import GMMSpec, gen_gmm, random_mode_means, weights_for_delta_f
from genbench.ddpm import DDPMModel, NoiseSchedule, ddpm_make_batch, ddpm_objective, q_sample
from genbench.evaluation import (
    count_parameters,
    default_boundary,
    histogram2d,
    mode_delta_f,
    pca_fit,
    pca_project,
)
from genbench.flows.ns import NSModel, ns_log_prob, ns_nll_objective, ns_train
from genbench.harness import experiments as ex
from genbench.harness.config import ExperimentConfig

from helpers import gradient_relative_error, randomized, trapezoid

GRAD_TOL = 1e-4
MAX_GRAD_PARAMS = 100
BIJECTION_TOL = 1e-6
LOGDET_TOL = 1e-8
NS_NORM_TOL = 1e-3
CFM_NORM_TOL = 1e-2
CFM_PROBES = 64
MOMENT_SIGMAS = 4.0
KLD_FLOOR_FACTOR = 10.0
DELTA_F_TOL = 0.05
R2_MIN = 0.9
LARGE_CUTOFF = 1e9
TRUE_DELTA_FS = [0.0, 0.5, 1.0, 1.5]

pytestmark = pytest.mark.slow


def record(number, ok, detail, seconds=None):
    took = "" if seconds is None else f" [{seconds:.1f}s]"
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}{took}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="session")
def out_root(tmp_path_factory):
    env = os.environ.get("GENBENCH_ACCEPTANCE_DIR")
    if env:
        Path(env).mkdir(parents=True, exist_ok=True)
        return Path(env)
    return tmp_path_factory.mktemp("acceptance")


def test_1_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    errors = {}

    ns = NSModel(2, n_layers=1, hidden_width=4, depth=1, bins=4)
    ns_params = randomized(ns.params, 1, scale=0.3)
    errors["ns"] = (len(ns_params), gradient_relative_error(ns_nll_objective(ns), ns_params, rng.standard_normal((8, 2))))

    cfm = CFMModel(2, hidden_width=4, depth=1)
    x0, x1, eps = rng.standard_normal((3, 8, 2))
    pairs = cfm_make_pairs(x1, x0, rng.random(8), 1e-2, eps)
    cfm_params = randomized(cfm.params, 2)
    errors["cfm"] = (len(cfm_params), gradient_relative_error(cfm_objective(cfm), cfm_params, pairs))

    ddpm = DDPMModel(2, hidden_width=4, depth=1)
    batch = ddpm_make_batch(ddpm, rng.standard_normal((8, 2)), rng.integers(1, 1001, 8), rng.standard_normal((8, 2)))
    ddpm_params = randomized(ddpm.params, 3)
    errors["ddpm"] = (len(ddpm_params), gradient_relative_error(ddpm_objective(ddpm), ddpm_params, batch))

    took = time.perf_counter() - start
    ok = all(n <= MAX_GRAD_PARAMS and err <= GRAD_TOL for n, err in errors.values()) and took < 60
    detail = ", ".join(f"{k} ({n} params) rel err {err:.2e}" for k, (n, err) in errors.items())
    assert record(1, ok, f"{detail}; tol {GRAD_TOL:g}", took)


def test_2_ns_bijectivity():
    start = time.perf_counter()
    worst_x, worst_ld = 0.0, 0.0
    for d in (1, 2, 10):
        model = NSModel(d)
        model = model.with_params(randomized(model.params, d, scale=0.1))
        x = np.random.default_rng(d).standard_normal((10_000, d)) * 1.5
        z, ld = model.forward(x)
        xr, ld_inv = model.inverse(z.value)
        worst_x = max(worst_x, float(np.max(np.abs(xr - x))))
        worst_ld = max(worst_ld, float(np.max(np.abs(ld.value + ld_inv))))
    took = time.perf_counter() - start
    ok = worst_x <= BIJECTION_TOL and worst_ld <= LOGDET_TOL and took < 60
    assert record(2, ok, f"max |x - inv(fwd(x))| {worst_x:.1e} (tol {BIJECTION_TOL:g}), max |ld + ld_inv| {worst_ld:.1e} (tol {LOGDET_TOL:g})", took)


def _bimodal_1d(n, seed):
    rng = np.random.default_rng(seed)
    side = rng.random(n) < 0.3
    return (np.where(side, -1.5, 1.5) + 0.5 * rng.standard_normal(n))[:, None]


def test_3_d1_normalization():
    start = time.perf_counter()
    data = _bimodal_1d(20_000, 0)
    grid = np.linspace(-25, 25, 25_001)

    untrained = NSModel(1)
    untrained = untrained.with_params(randomized(untrained.params, 5, scale=0.5))
    trained = ns_train(NSModel(1), data, Budget(steps=1000), seed=0)
    ns_mass = [trapezoid(np.exp(ns_log_prob(m, grid[:, None])), grid) for m in (untrained, trained)]

    cfm = cfm_train(CFMModel(1, hidden_width=32), data, Budget(steps=2000), seed=0)
    cgrid = np.linspace(-8, 8, 801)
    cfm_mass = trapezoid(np.exp(cfm_log_prob(cfm, cgrid[:, None], n_probe=CFM_PROBES, steps=50)), cgrid)

    took = time.perf_counter() - start
    ok = all(abs(m - 1) <= NS_NORM_TOL for m in ns_mass) and abs(cfm_mass - 1) <= CFM_NORM_TOL and took < 600
    detail = f"NS random {ns_mass[0]:.6f}, NS trained {ns_mass[1]:.6f} (tol {NS_NORM_TOL:g}); CFM trained {cfm_mass:.5f} (tol {CFM_NORM_TOL:g}, {CFM_PROBES} probes)"
    assert record(3, ok, detail, took)


def test_4_ddpm_forward_marginals():
    start = time.perf_counter()
    schedule = NoiseSchedule.linear()
    rng = np.random.default_rng(0)
    n, d = 100_000, 3
    x0 = np.array([1.5, -0.5, 3.0])
    steps = np.unique(np.round(np.logspace(0, 3, 10)).astype(int))
    worst = 0.0
    for t in steps:
        xt = q_sample(np.broadcast_to(x0, (n, d)), int(t), rng.standard_normal((n, d)), schedule)
        ab = schedule.alpha_bar_at(int(t))
        var = 1 - ab
        z_mean = np.abs(xt.mean(0) - np.sqrt(ab) * x0) / np.sqrt(var / n)
        z_var = np.abs(xt.var(0, ddof=1) - var) / (var * np.sqrt(2 / (n - 1)))
        worst = max(worst, float(z_mean.max()), float(z_var.max()))
    took = time.perf_counter() - start
    ok = len(steps) == 10 and worst <= MOMENT_SIGMAS and took < 120
    assert record(4, ok, f"{len(steps)} steps {steps.tolist()}, worst deviation {worst:.2f} standard errors (tol {MOMENT_SIGMAS:g})", took)


def desk_config(out_root, **kw):
    base = dict(kind="gmm-dim-sweep", name="acceptance-desk", models=["ns", "cfm", "ddpm"], seeds=[0], dims=[2], n_modes=2, n_samples=[100_000], out_dir=str(out_root / "desk"))
    base.update(kw)
    return ExperimentConfig(**base)


def test_5_desk_scale_accuracy(out_root):
    start = time.perf_counter()
    cfg = desk_config(out_root)
    assert cfg.steps == 10_000
    rows = ex.read_table(ex.run_experiment(cfg))
    took = time.perf_counter() - start
    floor = float(next(r for r in rows if r["model"] == ex.BASELINE)["kld"])
    kld = {r["model"]: float(r["kld"]) if r["status"] == "ok" else math.inf for r in rows if r["model"] != ex.BASELINE}
    ok = set(kld) == {"ns", "cfm", "ddpm"} and all(v <= KLD_FLOOR_FACTOR * floor for v in kld.values()) and took < 1800
    detail = f"noise floor {floor:.4f}, limit {KLD_FLOOR_FACTOR * floor:.4f}; " + ", ".join(f"{m} {v:.4f}" for m, v in sorted(kld.items()))
    assert record(5, ok, detail, took)


def test_6_delta_f_recovery(out_root):
    start = time.perf_counter()
    raw_err = {}
    for true_df in TRUE_DELTA_FS:
        spec = GMMSpec(random_mode_means(2, 2, seed=11), weights_for_delta_f(true_df), seed=int(20 * true_df) + 1)
        ds = gen_gmm(spec, 1_000_000)
        oracle = math.log(np.sum(ds.labels == 1) / np.sum(ds.labels == 0))
        assert abs(oracle - true_df) < DELTA_F_TOL  # the label-count oracle itself
        basis = pca_fit(ds.samples)
        h = histogram2d(pca_project(basis, ds.samples))
        boundary = default_boundary(h).oriented_towards(pca_project(basis, spec.means[:1])[0])
        raw_err[true_df] = abs(mode_delta_f(h, boundary, cutoff=LARGE_CUTOFF).delta_f - true_df)

    cfg = ExperimentConfig(
        kind="gmm-asymmetry", name="acceptance-delta-f", models=["ns"], seeds=[0], dims=[2], n_samples=[100_000],
        delta_fs=TRUE_DELTA_FS, steps=3000, n_eval=100_000, cutoff=LARGE_CUTOFF, out_dir=str(out_root / "delta_f"),
    )
    rows = ex.read_table(ex.run_experiment(cfg))
    ns_rows = [r for r in rows if r["model"] == "ns"]
    r2 = float(ns_rows[0]["r2"]) if ns_rows and ns_rows[0]["r2"] else -math.inf
    estimates = ", ".join(f"{float(r['true_delta_f']):g}->{float(r['delta_f']):.3f}" for r in ns_rows if r["delta_f"])
    took = time.perf_counter() - start
    ok = max(raw_err.values()) <= DELTA_F_TOL and r2 >= R2_MIN and took < 3600
    detail = f"raw max |err| {max(raw_err.values()):.4f} (tol {DELTA_F_TOL:g}); trained NS r2 {r2:.3f} (min {R2_MIN:g}) [{estimates}]"
    assert record(6, ok, detail, took)


def test_7_capacity_equality():
    dims = list(range(10, 101, 10))
    cfm = [count_parameters(CFMModel(d)) for d in dims]
    ddpm = [count_parameters(DDPMModel(d)) for d in dims]
    ns = [count_parameters(NSModel(d)) for d in dims]
    ok = cfm == ddpm and all(b > a for a, b in zip(ns, ns[1:]))
    assert record(7, ok, f"CFM == DDPM at d=10..100 ({cfm[0]}..{cfm[-1]}); NS increasing {ns[0]}..{ns[-1]}")


def test_8_speed_ordering(out_root):
    start = time.perf_counter()
    cfg = ExperimentConfig(
        kind="gmm-timing", name="acceptance-timing", models=["cfm", "ddpm"], seeds=[0], dims=[50], n_modes=4,
        n_samples=[10_000], steps=200, n_eval=1000, out_dir=str(out_root / "timing"),
    )
    table = ex.run_experiment(cfg)
    rows = {r["model"]: r for r in ex.read_table(table)}
    sps = {m: float(rows[m]["sec_per_sample"]) for m in ("cfm", "ddpm")}
    samplers = {m: rows[m]["sampler"] for m in ("cfm", "ddpm")}
    took = time.perf_counter() - start
    ok = table.name == "fig3a.csv" and samplers == {"cfm": "euler-50", "ddpm": "ancestral-1000"} and sps["cfm"] < sps["ddpm"]
    detail = f"d=50 sec/sample cfm {sps['cfm']:.2e} ({samplers['cfm']}) < ddpm {sps['ddpm']:.2e} ({samplers['ddpm']}), ratio {sps['ddpm'] / sps['cfm']:.1f}x, in {table.name}"
    assert record(8, ok, detail, took)


def test_9_dihedral_pipeline(out_root):
    start = time.perf_counter()
    cfg = ExperimentConfig(
        kind="dihedral-residues", name="acceptance-dihedral", models=["ns", "cfm", "ddpm"], seeds=[0], n_samples=[100_000],
        out_dir=str(out_root / "dihedral"),
    )
    rows = ex.read_table(ex.run_experiment(cfg))
    took = time.perf_counter() - start
    floor = {int(r["sweep_value"]): float(r["kld"]) for r in rows if r["model"] == ex.BASELINE}
    problems = []
    margins = []
    for model in ("ns", "cfm", "ddpm"):
        mine = {int(r["sweep_value"]): r for r in rows if r["model"] == model}
        if sorted(mine) != list(range(1, 10)):
            problems.append(f"{model} residues {sorted(mine)}")
            continue
        for res, r in mine.items():
            if r["status"] != "ok" or not math.isfinite(float(r["kld"])):
                problems.append(f"{model} residue {res} {r['status']} {r['error']}")
            elif not floor.get(res, math.inf) < float(r["kld"]):
                problems.append(f"{model} residue {res} kld {float(r['kld']):.4f} <= floor {floor.get(res)}")
            else:
                margins.append(float(r["kld"]) / floor[res])
    ok = not problems and len(floor) == 9 and took < 3600
    detail = "; ".join(problems) if problems else f"27 finite rows, floor {min(floor.values()):.4f}..{max(floor.values()):.4f}, min model/floor ratio {min(margins):.2f}"
    assert record(9, ok, detail, took)


def test_10_determinism(out_root, tmp_path):
    start = time.perf_counter()
    cells = []
    small = desk_config(tmp_path, steps=300, n_eval=5000, out_dir=str(tmp_path / "a"))
    cells += [(small, m, 2, 0) for m in ("baseline", "ns", "cfm", "ddpm")]
    asym = ExperimentConfig(kind="gmm-asymmetry", models=["ns"], seeds=[1], dims=[2], n_samples=[20_000], steps=200, n_eval=5000, cutoff=LARGE_CUTOFF, out_dir=str(tmp_path / "b"))
    cells.append((asym, "ns", 1.0, 1))
    mismatched = []
    for cfg, model, value, seed in cells:
        first = ex.run_cell(cfg, model, value, seed)
        ex._DATA_CACHE.clear()
        second = ex.run_cell(cfg, model, value, seed)
        a = {k: v for k, v in first.items() if k not in ex.TIMING_COLUMNS}
        b = {k: v for k, v in second.items() if k not in ex.TIMING_COLUMNS}
        if a != b or first["status"] != "ok":
            mismatched.append(f"{cfg.kind}/{model}")

    # a full-budget cell from criterion 5, recomputed from scratch against its journal row
    desk = desk_config(out_root)
    journal = ex.latest_rows(ex.read_journal(Path(desk.out_dir) / "fig1a.jsonl"), ex.config_digest(desk))
    reference = next((r for r in journal if r["model"] == "cfm"), None)
    if reference is None:
        mismatched.append("criterion 5 cfm row missing")
    else:
        ex._DATA_CACHE.clear()
        again = ex.run_cell(desk, "cfm", 2, 0)
        strip = lambda r: {k: v for k, v in r.items() if k not in ex.TIMING_COLUMNS}
        if strip(again) != strip(reference):
            mismatched.append("gmm-dim-sweep/cfm full budget")
    took = time.perf_counter() - start
    ok = not mismatched
    detail = "mismatch in " + ", ".join(mismatched) if mismatched else f"{len(cells) + 1} cells rerun, rows identical outside {list(ex.TIMING_COLUMNS)}"
    assert record(10, ok, detail, took)
