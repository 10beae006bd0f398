"""Experiment runner: one journaled ResultRow per (model, sweep value, seed) cell.

Each experiment kind owns a journal ``<out>/<figure>.jsonl`` that is only
ever appended to. The plot-ready table ``<out>/<figure>.csv`` is rebuilt
from the journal after every run, keeping the latest row per cell and
sorting by (model, sweep value, seed). Cells whose latest row has status
``ok`` under the current configuration digest are skipped on rerun.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from genbench.checkpoint import ModelCheckpoint, load_checkpoint, round_to_storage
from genbench.datasets import (
    Dataset,
    GMMSpec,
    dihedral_surrogate,
    gen_gmm,
    ingest_dihedrals,
    random_mode_means,
    residue_columns,
    split,
    standardize,
    weights_for_delta_f,
)
from genbench.evaluation import (
    EvaluationError,
    binned_kld,
    count_parameters,
    default_boundary,
    histogram2d,
    histogram_ranges,
    measure_sampling_time,
    mode_delta_f,
    pca_fit,
    pca_project,
    r_squared,
)
from genbench.harness.config import HP_SWEEP_PARAMETER, ExperimentConfig
from genbench.models import build_model, sampler_label, train_model

log = logging.getLogger(__name__)

ROW_COLUMNS = [
    "experiment",
    "kind",
    "model",
    "sweep",
    "sweep_value",
    "d",
    "n_train",
    "seed",
    "kld",
    "delta_f",
    "true_delta_f",
    "r2",
    "sec_per_sample",
    "param_count",
    "sampler",
    "steps",
    "budget_steps",
    "budget_seconds",
    "train_seconds",
    "n_eval",
    "status",
    "error",
    "config_digest",
]
TIMING_COLUMNS = ("sec_per_sample", "train_seconds")
BASELINE = "baseline"
WORKERS_ENV = "GENBENCH_WORKERS"


def derive_seed(*parts) -> int:
    """Stable 32-bit sub-seed from arbitrary printable parts."""
    blob = "/".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:4], "little")


def config_digest(config: ExperimentConfig) -> str:
    """Digest of the settings that change a cell's result (not which cells exist)."""
    skip = {"name", "models", "seeds", "out_dir", "timing_repeats", "timing_n"}
    sweep_list = {"gmm-dim-sweep": "dims", "gmm-timing": "dims", "gmm-params": "dims",
                  "gmm-trainsize": "n_samples", "dihedral-trainsize": "n_samples",
                  "gmm-asymmetry": "delta_fs", "dihedral-residues": "residues", "hp-sweep": "hp_values"}
    skip.add(sweep_list[config.kind])
    if config.kind == "gmm-timing":
        skip -= {"timing_repeats", "timing_n"}
    payload = {k: v for k, v in config.to_dict().items() if k not in skip}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


# -- data ------------------------------------------------------------------

@dataclass
class CellData:
    train: Dataset
    test: Dataset
    d: int
    true_delta_f: float | None = None
    minor_mean: np.ndarray | None = None  # data-space mean of the minor mode (asymmetry)
    eval_columns: list[int] | None = None  # restrict evaluation to these columns


def _gmm(config: ExperimentConfig, d: int, n: int, key) -> tuple[Dataset, GMMSpec]:
    if config.kind == "gmm-asymmetry":
        n_modes, weights = 2, weights_for_delta_f(float(key))
    else:
        n_modes = config.n_modes
        weights = np.full(n_modes, 1.0 / n_modes) if config.weights is None else np.asarray(config.weights, float)
    means = random_mode_means(d, n_modes, config.half_width, seed=derive_seed(config.means_seed, "means", d, n_modes))
    spec = GMMSpec(means, weights, seed=derive_seed(config.means_seed, "data", config.kind, key))
    return gen_gmm(spec, n), spec


def _dihedrals(config: ExperimentConfig, n: int | None) -> Dataset:
    if config.dihedral_path:
        ds = ingest_dihedrals(config.dihedral_path)
        if n is not None and n < ds.n:
            rows = np.sort(np.random.default_rng(derive_seed(config.means_seed, "subsample", n)).permutation(ds.n)[:n])
            ds = ds.subset(rows)
        return ds
    return dihedral_surrogate(n if n is not None else config.n_samples[0], seed=derive_seed(config.means_seed, "dihedral", n))


def load_cell_data(config: ExperimentConfig, value) -> CellData:
    kind = config.kind
    n = config.n_samples[0]
    d = config.dims[0]
    extra = {}
    if kind in ("dihedral-residues", "dihedral-trainsize"):
        ds = _dihedrals(config, value if kind == "dihedral-trainsize" else None)
        residue = value if kind == "dihedral-residues" else config.residue
        extra["eval_columns"] = residue_columns(int(residue))
        key = "dihedral"
    else:
        if kind in ("gmm-dim-sweep", "gmm-timing", "gmm-params"):
            d = int(value)
        elif kind == "gmm-trainsize":
            n = int(value)
        key = value if kind != "hp-sweep" else "hp"
        ds, spec = _gmm(config, d, n, key)
        if kind == "gmm-asymmetry":
            extra["true_delta_f"] = float(value)
            extra["minor_mean"] = spec.means[0]
    train, test = split(ds, config.test_fraction, seed=derive_seed(config.means_seed, "split", kind, key, ds.n))
    return CellData(train, test, ds.d, **extra)


_DATA_CACHE: dict = {}


def _cached_data(config: ExperimentConfig, value) -> CellData:
    key = (config_digest(config), config.kind, value)
    if key not in _DATA_CACHE:
        _DATA_CACHE.clear()  # keep one dataset resident
        _DATA_CACHE[key] = load_cell_data(config, value)
    return _DATA_CACHE[key]


# -- evaluation ------------------------------------------------------------

def _eval_view(x: np.ndarray, data: CellData) -> np.ndarray:
    return x if data.eval_columns is None else x[:, data.eval_columns]


def evaluate_samples(config: ExperimentConfig, data: CellData, generated: np.ndarray) -> dict:
    """KLD of test vs generated on the grid fixed by the test projection, plus Delta F when relevant."""
    train = _eval_view(data.train.samples, data)
    test = _eval_view(data.test.samples, data)
    gen = _eval_view(np.asarray(generated), data)
    basis = pca_fit(train)
    test_p, gen_p = pca_project(basis, test), pca_project(basis, gen)
    bins = tuple(config.bins)
    ranges = histogram_ranges(test_p)
    h_test = histogram2d(test_p, bins, ranges)
    h_gen = histogram2d(gen_p, bins, ranges)
    out = {"kld": binned_kld(h_test, h_gen, config.epsilon)}
    if data.true_delta_f is not None:
        boundary = default_boundary(h_test).oriented_towards(pca_project(basis, data.minor_mean[None, :])[0])
        out["delta_f"] = mode_delta_f(h_gen, boundary, config.cutoff, config.beta).delta_f
    return out


def _noise_floor_sample(config: ExperimentConfig, data: CellData) -> np.ndarray:
    """The whole training split: the floor is the train-vs-test KLD.

    A same-size subsample is not a floor. At n_eval = 10^4 on a 50x50 grid
    the divergence is dominated by empty bins, and a slightly smoother
    generator can score below it.
    """
    return data.train.samples


# -- cells -----------------------------------------------------------------

def _base_row(config: ExperimentConfig, model: str, value, seed: int, digest: str) -> dict:
    row = {c: None for c in ROW_COLUMNS}
    row.update(
        experiment=config.name,
        kind=config.kind,
        model=model,
        sweep=config.sweep_name,
        sweep_value=value,
        seed=seed,
        n_eval=config.n_eval,
        budget_steps=config.steps,
        budget_seconds=config.seconds,
        config_digest=digest,
        status="ok",
        error="",
    )
    return row


def _hyperparameters(config: ExperimentConfig, model: str, value) -> dict:
    hp = config.model_hyperparameters(model)
    if config.kind == "hp-sweep":
        hp[HP_SWEEP_PARAMETER[model]] = value
    return hp


def _checkpoint_dir(config: ExperimentConfig, model: str, seed: int, digest: str) -> Path:
    return Path(config.out_dir) / "checkpoints" / f"{config.kind}-{digest}-{model}-s{seed}"


def _train_checkpoint(config: ExperimentConfig, model_name: str, value, seed: int, data: CellData) -> ModelCheckpoint:
    z, stats = standardize(data.train)
    model = build_model(model_name, data.d, seed=derive_seed(seed, "init", model_name), **_hyperparameters(config, model_name, value))
    start = time.perf_counter()
    trained = train_model(model, z.samples, config.budget, derive_seed(seed, "train", model_name))
    seconds = time.perf_counter() - start
    # evaluate exactly what a checkpoint would hold, so reruns from disk match
    trained = trained.with_params(round_to_storage(trained.params), trained.loss_trace)
    training = {"steps": len(trained.loss_trace), "seconds": seconds, "budget": config.budget.to_dict(), "seed": seed}
    return ModelCheckpoint(trained, stats, list(data.train.angular), training)


def _sample_timed(ckpt: ModelCheckpoint, n: int, seed: int) -> tuple[np.ndarray, float]:
    start = time.perf_counter()
    x = ckpt.sample(n, seed)
    return x, (time.perf_counter() - start) / n


def _shared_dihedral_model(config: ExperimentConfig, model_name: str, seed: int, digest: str, data: CellData):
    """One 18-column model per (model, seed), reused for every residue."""
    path = _checkpoint_dir(config, model_name, seed, digest)
    sample_file = path / f"samples-{config.n_eval}.npy"
    if (path / "manifest.txt").exists() and sample_file.exists():
        ckpt = load_checkpoint(path)
        meta = json.loads((path / "samples.json").read_text())
        return ckpt, np.load(sample_file), meta["sec_per_sample"]
    ckpt = _train_checkpoint(config, model_name, None, seed, data)
    x, sps = _sample_timed(ckpt, config.n_eval, derive_seed(seed, "sample", model_name))
    ckpt.save(path)
    np.save(sample_file, x)
    (path / "samples.json").write_text(json.dumps({"sec_per_sample": sps}))
    return ckpt, x, sps


def run_cell(config: ExperimentConfig, model: str, value, seed: int) -> dict:
    digest = config_digest(config)
    row = _base_row(config, model, value, seed, digest)
    try:
        data = _cached_data(config, value)
        row.update(d=data.d, n_train=data.train.n, true_delta_f=data.true_delta_f)
        if model == BASELINE:
            res = evaluate_samples(config, data, _noise_floor_sample(config, data))
            row.update(res)
            return row
        if config.kind == "gmm-params":
            m = build_model(model, data.d, seed=0, **_hyperparameters(config, model, value))
            row.update(param_count=count_parameters(m), sampler=sampler_label(m), steps=0)
            return row
        if config.kind == "dihedral-residues":
            ckpt, x, sps = _shared_dihedral_model(config, model, seed, digest, data)
        else:
            ckpt = _train_checkpoint(config, model, value, seed, data)
            x, sps = _sample_timed(ckpt, config.n_eval, derive_seed(seed, "sample", model))
        m = ckpt.model
        row.update(
            param_count=count_parameters(m),
            sampler=sampler_label(m),
            steps=ckpt.training["steps"],
            train_seconds=ckpt.training["seconds"],
            sec_per_sample=sps,
        )
        if config.kind == "gmm-timing":
            row["sec_per_sample"] = measure_sampling_time(ckpt.sample, config.timing_n, config.timing_repeats)
        row.update(evaluate_samples(config, data, x))
        if not math.isfinite(row["kld"]):
            raise EvaluationError(f"non-finite kld {row['kld']}")
    except Exception as exc:  # recorded per row; the sweep continues
        log.warning("cell %s/%s/%s failed: %s", model, value, seed, exc)
        row["status"] = "error"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


# -- journal and tables ----------------------------------------------------

def _key(row: dict) -> tuple:
    return (row["model"], json.dumps(row["sweep_value"]), row["seed"])


def read_journal(path: Path) -> list[dict]:
    if not path.exists():
        return []
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            rows.append(json.loads(line))
    return rows


def append_rows(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
            fh.flush()


def latest_rows(rows: list[dict], digest: str | None = None) -> list[dict]:
    latest = {}
    for row in rows:
        if digest is None or row.get("config_digest") == digest:
            latest[_key(row)] = row
    return sorted(latest.values(), key=_sort_key)


def _sort_key(row: dict):
    v = row["sweep_value"]
    return (row["model"], (0, v, "") if isinstance(v, (int, float)) else (1, 0, str(v)), row["seed"])


def _with_r2(rows: list[dict]) -> list[dict]:
    """Per (model, seed) r^2 of Delta F estimates against truth, stamped on each of its rows."""
    groups: dict = {}
    for row in rows:
        if row["status"] == "ok" and row.get("delta_f") is not None:
            groups.setdefault((row["model"], row["seed"]), []).append((row["true_delta_f"], row["delta_f"]))
    out = []
    for row in rows:
        row = dict(row)
        pairs = groups.get((row["model"], row["seed"]), [])
        try:
            row["r2"] = r_squared(pairs) if len(pairs) >= 2 else None
        except EvaluationError:
            row["r2"] = None
        out.append(row)
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(path: Path, rows: list[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROW_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in ROW_COLUMNS])
    return path


def read_table(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def table_rows(journal_rows: list[dict], kind: str, digest: str | None = None) -> list[dict]:
    rows = latest_rows(journal_rows, digest)
    return _with_r2(rows) if kind == "gmm-asymmetry" else rows


# -- drivers ---------------------------------------------------------------

def sweep_values(config: ExperimentConfig) -> list:
    kind = config.kind
    if kind in ("gmm-dim-sweep", "gmm-timing", "gmm-params"):
        return list(config.dims)
    if kind in ("gmm-trainsize", "dihedral-trainsize"):
        return list(config.n_samples)
    if kind == "gmm-asymmetry":
        return list(config.delta_fs)
    if kind == "dihedral-residues":
        return list(config.residues)
    return sorted({v for m in config.models for v in config.hp_values[m]})


def plan_cells(config: ExperimentConfig) -> list[tuple[str, object, int]]:
    cells = []
    values = sweep_values(config)
    if config.kind != "gmm-params":
        cells += [(BASELINE, v, 0) for v in values]
    for model in config.models:
        model_values = config.hp_values[model] if config.kind == "hp-sweep" else values
        cells += [(model, v, s) for v in model_values for s in config.seeds]
    return cells


def worker_count(config: ExperimentConfig) -> int:
    if config.kind == "gmm-timing":
        return 1  # timing needs exclusive use of the machine
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _run_cell_args(args):
    return run_cell(*args)


def run_experiment(config: ExperimentConfig) -> Path:
    """Run every pending cell, append its row, and rewrite the figure table. Returns the table path."""
    out = Path(config.out_dir)
    journal = out / f"{config.figure}.jsonl"
    digest = config_digest(config)
    done = {_key(r) for r in latest_rows(read_journal(journal), digest) if r["status"] == "ok"}
    pending = [c for c in plan_cells(config) if (c[0], json.dumps(c[1]), c[2]) not in done]
    log.info("%s: %d cells pending, %d complete", config.name, len(pending), len(done))
    workers = worker_count(config)
    if workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(workers) as pool:
            for row in pool.map(_run_cell_args, [(config, *c) for c in pending]):
                append_rows(journal, [row])
    else:
        for cell in pending:
            append_rows(journal, [run_cell(config, *cell)])
    rows = table_rows(read_journal(journal), config.kind, digest)
    table = write_table(out / f"{config.figure}.csv", rows)
    if config.kind == "hp-sweep":
        write_optimum(config, rows)
    return table


def select_optimum(rows: list[dict], model: str) -> dict | None:
    """Argmin of seed-averaged KLD; ties go to the smaller hyperparameter value."""
    by_value: dict = {}
    for row in rows:
        if row["model"] == model and row["status"] == "ok" and row.get("kld") is not None:
            by_value.setdefault(row["sweep_value"], []).append(float(row["kld"]))
    if not by_value:
        return None
    means = {v: float(np.mean(k)) for v, k in by_value.items()}
    best = min(means, key=lambda v: (means[v], v))
    return {"value": best, "mean_kld": means[best], "n_seeds": len(by_value[best])}


def write_optimum(config: ExperimentConfig, rows: list[dict]) -> Path:
    chosen = {}
    for model in config.models:
        opt = select_optimum(rows, model)
        if opt is not None:
            chosen[model] = {"parameter": HP_SWEEP_PARAMETER[model], **opt}
    path = Path(config.out_dir) / f"{config.figure}_optimum.json"
    path.write_text(json.dumps(chosen, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def run_hp_sweep(config: ExperimentConfig) -> Path:
    if config.kind != "hp-sweep":
        raise ValueError("run_hp_sweep needs a config of kind 'hp-sweep'")
    return run_experiment(config)


def write_reports(out_dir: str | Path) -> list[Path]:
    """Rebuild every per-figure CSV from the journals found in ``out_dir``."""
    from genbench.harness.config import KINDS

    out_dir = Path(out_dir)
    figure_kind = {fig: kind for kind, (fig, _) in KINDS.items()}
    written = []
    for journal in sorted(out_dir.glob("*.jsonl")):
        kind = figure_kind.get(journal.stem)
        if kind is None:
            continue
        rows = read_journal(journal)
        # several configs may share a journal; the most recent digest wins
        digest = rows[-1]["config_digest"] if rows else None
        written.append(write_table(out_dir / f"{journal.stem}.csv", table_rows(rows, kind, digest)))
    return written
