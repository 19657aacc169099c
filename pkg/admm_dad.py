#!/usr/bin/env python3
"""
ADMM-DAD experiment runner.

Trains unfolded ADMM decoders with a learned analysis operator over a grid of
(n, N, L) cells, records test MSE, empirical generalization error (EGE),
frame diagnostics and the closed-form generalization bounds, and writes a
deterministic CSV summary.

Usage:
  python admm_dad.py --config config_admm_dad_example.yml
  python admm_dad.py --n 50 --N 100 250 --L 5 10 --repeats 2 --out runs/desk
  python admm_dad.py --diagnostics runs/desk/cells/<cell>/checkpoint.bin
  python admm_dad.py --fetch-mnist data/mnist
  python admm_dad.py --config cfg.yml --export-pdf runs/desk/summary.pdf

Outputs (inside --out):
  results.jsonl   one ExperimentRecord per cell and repeat (append-only)
  summary.csv     mean/std per (n, N, L, s)
  cells/<tag>/    checkpoint.bin and history.csv per run
  admm_dad.log    rotating log file

Exit codes: 0 all cells succeeded, 1 some cells failed, 2 configuration or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields, replace
from logging.handlers import RotatingFileHandler
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from scipy import stats

import bounds
import data
import model
import training
import unfolded

LOGGER = logging.getLogger('admm_dad')

SUMMARY_METRICS = ("train_mse", "test_mse", "ege", "theorem4_excess", "theorem5_excess", "assumption2_value")
MNIST_DIM = 784


# -----------------------------
# Config models
# -----------------------------
@dataclass
class GridConfig:
    dataset: str = "synthetic"              # "synthetic" or "mnist"
    n_values: List[int] = field(default_factory=lambda: [50])
    N_values: List[int] = field(default_factory=lambda: [100, 250, 500])
    L_values: List[int] = field(default_factory=lambda: [5, 10, 15])
    cs_ratio: float = 0.25
    s_train: int = 2000
    s_test: int = 500
    repeats: int = 3
    seed: int = 0
    rho: float = 0.1
    lam: float = 1e-4
    noise_std: float = 1e-4
    delta: float = 0.05
    b_policy: str = "measured"              # "measured" or "equal"
    q_rule: str = "certified"               # "stated" or "certified"
    workers: int = 1
    out_dir: str = "admm_dad_out"
    mnist_dir: str = "mnist"
    train: training.TrainConfig = field(default_factory=training.TrainConfig)

    def validate(self) -> "GridConfig":
        if self.dataset not in ("synthetic", "mnist"):
            raise ValueError(f"Config: 'dataset' must be synthetic or mnist, got {self.dataset!r}")
        if not (self.n_values and self.N_values and self.L_values):
            raise ValueError("Config: 'n_values', 'N_values' and 'L_values' must be non-empty")
        if self.dataset == "mnist" and list(self.n_values) != [MNIST_DIM]:
            raise ValueError(f"Config: MNIST signals have n = {MNIST_DIM}")
        for n in self.n_values:
            for big_n in self.N_values:
                if big_n <= n:
                    raise ValueError(f"Config: every N must exceed n (n={n}, N={big_n})")
        if min(self.L_values) < 1:
            raise ValueError("Config: every L must be >= 1")
        if not 0.0 < self.cs_ratio < 1.0:
            raise ValueError("Config: 'cs_ratio' must lie in (0, 1)")
        if min(self.s_train, self.s_test, self.repeats, self.workers) < 1:
            raise ValueError("Config: 's_train', 's_test', 'repeats' and 'workers' must be >= 1")
        if not (self.rho > 0 and self.lam > 0):
            raise ValueError("Config: 'rho' and 'lam' must be > 0")
        if self.noise_std < 0:
            raise ValueError("Config: 'noise_std' must be >= 0")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("Config: 'delta' must lie in (0, 1)")
        if self.b_policy not in ("measured", "equal"):
            raise ValueError("Config: 'b_policy' must be measured or equal")
        if self.q_rule not in bounds.Q_RULES:
            raise ValueError(f"Config: 'q_rule' must be one of {bounds.Q_RULES}")
        try:
            self.train.validate()
        except ValueError as err:
            raise ValueError(f"Config: {err}") from err
        return self

    def measurements_for(self, n: int) -> int:
        return max(1, int(round(self.cs_ratio * n)))

    def cells(self) -> List["Cell"]:
        return [Cell(n, big_n, depth, rep)
                for n in sorted(self.n_values)
                for big_n in sorted(self.N_values)
                for depth in sorted(self.L_values)
                for rep in range(self.repeats)]


@dataclass(frozen=True, order=True)
class Cell:
    n: int
    N: int
    L: int
    repeat: int

    @property
    def tag(self) -> str:
        return f"n{self.n}_N{self.N}_L{self.L}_r{self.repeat}"


_LIST_KEYS = ("n_values", "N_values", "L_values")


def _as_int_list(key: str, value) -> List[int]:
    items = value if isinstance(value, (list, tuple)) else [value]
    try:
        return [int(v) for v in items]
    except (TypeError, ValueError) as err:
        raise ValueError(f"Config: '{key}' must be an integer or a list of integers") from err


def load_config(path: str) -> GridConfig:
    with open(path, "r", encoding="utf-8") as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise ValueError("Config: top level must be a mapping")
    known = {f.name for f in fields(GridConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"Config: unknown keys {unknown}")
    values: Dict[str, object] = {}
    for key, value in raw.items():
        if key == "train":
            train_raw = value or {}
            if not isinstance(train_raw, dict):
                raise ValueError("Config: 'train' must be a mapping")
            train_known = {f.name for f in fields(training.TrainConfig)}
            bad = sorted(set(train_raw) - train_known)
            if bad:
                raise ValueError(f"Config: unknown train keys {bad}")
            values["train"] = training.TrainConfig(**train_raw)
        elif key in _LIST_KEYS:
            values[key] = _as_int_list(key, value)
        else:
            values[key] = value
    return GridConfig(**values).validate()


_ARG_TO_FIELD = {
    "dataset": "dataset", "n": "n_values", "N": "N_values", "L": "L_values",
    "cs_ratio": "cs_ratio", "s_train": "s_train", "s_test": "s_test", "repeats": "repeats",
    "seed": "seed", "rho": "rho", "lam": "lam", "noise_std": "noise_std", "delta": "delta",
    "q_rule": "q_rule", "workers": "workers", "out": "out_dir", "mnist_dir": "mnist_dir",
}
_ARG_TO_TRAIN = {
    "lr": "learning_rate", "batch_size": "batch_size", "patience": "early_stop_patience",
    "max_epochs": "max_epochs", "frame_regularizer": "frame_regularizer",
}


def config_from_args(args: argparse.Namespace, base: Optional[GridConfig] = None) -> GridConfig:
    cfg = base if base is not None else GridConfig()
    updates = {dst: getattr(args, src) for src, dst in _ARG_TO_FIELD.items()
               if getattr(args, src, None) is not None}
    train_updates = {dst: getattr(args, src) for src, dst in _ARG_TO_TRAIN.items()
                     if getattr(args, src, None) is not None}
    if getattr(args, "b_equal", False):
        updates["b_policy"] = "equal"
    cfg = replace(cfg, train=replace(cfg.train, **train_updates), **updates)
    if cfg.dataset == "mnist" and "n_values" not in updates and base is None:
        cfg = replace(cfg, n_values=[MNIST_DIM])
        if "N_values" not in updates:
            cfg = replace(cfg, N_values=[2 * MNIST_DIM])
    return cfg.validate()


# -----------------------------
# Seeds
# -----------------------------
def _seed_from(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def cell_seeds(master: int, cell: Cell) -> Dict[str, int]:
    """Measurement matrix and data depend on (n, repeat), Phi init on (n, N, repeat),
    mini-batch order on the full cell, so cells differing only in L share A, data and init."""
    return {
        "a": _seed_from(master, 1, cell.n, cell.repeat),
        "data": _seed_from(master, 2, cell.n, cell.repeat),
        "noise": _seed_from(master, 3, cell.n, cell.repeat),
        "phi": _seed_from(master, 4, cell.n, cell.N, cell.repeat),
        "train": _seed_from(master, 5, cell.n, cell.N, cell.L, cell.repeat),
    }


# -----------------------------
# Progress
# -----------------------------
ProgressCB = Callable[[int, int, str], None]  # (done, total, status_line)


def _ascii_bar(done: int, total: int, width: int = 40) -> str:
    pct = 0 if total <= 0 else int(done * 100 / total)
    fill = int(width * pct / 100)
    return f"[{'#' * fill}{'.' * (width - fill)}] {pct:3d}%"


class _GridProgress:
    """Thread-safe progress reporter shared across cell workers."""

    def __init__(self, total: int, progress_cb: Optional[ProgressCB]):
        self._total = max(0, total)
        self._cb = progress_cb
        self._lock = threading.Lock()
        self._done = 0

    def advance(self, message: str) -> None:
        if not self._cb:
            return
        with self._lock:
            self._done = min(self._total, self._done + 1)
            status = f"{_ascii_bar(self._done, self._total)}  {message}".rstrip()
            try:
                self._cb(self._done, self._total, status)
            except Exception:
                LOGGER.debug('Progress callback failed', exc_info=True)


# -----------------------------
# Grid
# -----------------------------
def _cell_data(cfg: GridConfig, cell: Cell, seeds: Dict[str, int],
               mnist: Optional[Tuple[data.Dataset, data.Dataset]]) -> Tuple[data.Dataset, data.Dataset]:
    if cfg.dataset == "mnist":
        if mnist is None:
            raise ValueError("MNIST data not loaded")
        return mnist
    return data.generate_synthetic(cell.n, cfg.s_train, cfg.s_test, seeds["data"])


def run_cell(cfg: GridConfig, cell: Cell,
             mnist: Optional[Tuple[data.Dataset, data.Dataset]] = None) -> data.ExperimentRecord:
    seeds = cell_seeds(cfg.seed, cell)
    m = cfg.measurements_for(cell.n)
    mm = model.sample_measurement_matrix(m, cell.n, seeds["a"], noise_std=cfg.noise_std)
    train_raw, test_raw = _cell_data(cfg, cell, seeds, mnist)
    train = data.measure_dataset(train_raw, mm, cfg.noise_std, seeds["noise"])
    test = data.measure_dataset(test_raw, mm, cfg.noise_std, seeds["noise"] + 1)

    b_out = data.max_signal_norm(train)
    b_in = data.b_in(train)
    if cfg.b_policy == "equal":
        b_in = b_out = max(b_in, b_out)

    op = model.build_analysis_operator(training.he_init(cell.n, cell.N, seeds["phi"]))
    dec = unfolded.build_decoder(op, mm, cell.L, cfg.lam, cfg.rho, b_out)
    tcfg = replace(cfg.train, seed=seeds["train"])
    best, history = training.fit(dec, train, test, tcfg)
    final = training.evaluate(best, (train.x, train.y), (test.x, test.y))

    cell_dir = os.path.join(cfg.out_dir, "cells", cell.tag)
    unfolded.save_checkpoint(os.path.join(cell_dir, "checkpoint.bin"), best, seed=seeds["a"])
    training.write_history_csv(os.path.join(cell_dir, "history.csv"), history)

    bound_fields: Dict[str, object] = {"q_defined": True}
    inputs = bounds.bound_inputs_from(best.operator, mm, train.y, cfg.rho, cfg.lam, b_in, b_out,
                                      cell.L, cfg.delta, q_rule=cfg.q_rule)
    try:
        bound_fields.update(bounds.compute_report(inputs, final.train_mse).to_dict())
    except bounds.QUndefined as err:
        LOGGER.warning("%s: bounds undefined (%s)", cell.tag, err)
        bound_fields = {"q_defined": False, "reason": str(err)}
    excess = bound_fields.get("theorem5_excess")
    if excess is None:
        excess = bound_fields.get("theorem4_excess")
    dominance = None if excess is None else bool(final.ege <= excess)
    if dominance is False:
        LOGGER.warning("%s: EGE %.4g exceeds the generalization bound %.4g", cell.tag, final.ege, excess)

    return data.ExperimentRecord(
        config={
            "dataset": cfg.dataset, "n": cell.n, "N": cell.N, "m": m, "L": cell.L,
            "s": train.count, "s_test": test.count, "lam": cfg.lam, "rho": cfg.rho,
            "seed": cfg.seed, "repeat": cell.repeat, "cell_seeds": seeds,
            "q_rule": cfg.q_rule, "b_policy": cfg.b_policy, "noise_std": cfg.noise_std,
        },
        metrics={"train_mse": final.train_mse, "test_mse": final.test_mse, "ege": final.ege},
        diagnostics={
            "alpha": best.operator.alpha, "beta": best.operator.beta,
            "sinv_s_residual": final.sinv_s_residual, "assumption2_value": final.assumption2_value,
            "a_norm": mm.a_norm, "r_inv_norm": best.r_inv_norm(), "b_in": b_in, "b_out": b_out,
            "epochs_run": len(history) - 1, "best_epoch": training.best_epoch(history),
            "bound_dominance": dominance, "provenance": train.provenance,
        },
        bounds=bound_fields,
    )


def _failed_record(cfg: GridConfig, cell: Cell, err: BaseException) -> data.ExperimentRecord:
    return data.ExperimentRecord(
        config={"dataset": cfg.dataset, "n": cell.n, "N": cell.N, "L": cell.L,
                "s": cfg.s_train, "seed": cfg.seed, "repeat": cell.repeat},
        status="failed",
        error=f"{type(err).__name__}: {err}",
    )


def run_grid(cfg: GridConfig, store: Optional[data.ResultsStore] = None,
             progress: Optional[ProgressCB] = None) -> List[data.ExperimentRecord]:
    cfg.validate()
    cells = cfg.cells()
    mnist = None
    if cfg.dataset == "mnist":
        mnist = data.load_mnist_dir(cfg.mnist_dir, limit_train=cfg.s_train, limit_test=cfg.s_test)
    tracker = _GridProgress(len(cells), progress)
    results: Dict[Cell, data.ExperimentRecord] = {}

    def _work(cell: Cell) -> data.ExperimentRecord:
        try:
            return run_cell(cfg, cell, mnist)
        except Exception as err:
            LOGGER.warning("Cell %s failed: %s", cell.tag, err, exc_info=True)
            return _failed_record(cfg, cell, err)

    with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
        futures = {executor.submit(_work, cell): cell for cell in cells}
        for fut in as_completed(futures):
            cell = futures[fut]
            record = fut.result()
            results[cell] = record
            if store is not None:
                store.append(record)
            tracker.advance(f"{cell.tag} {record.status}")
    return [results[cell] for cell in sorted(results)]


# -----------------------------
# Reporting
# -----------------------------
def _metric(record: data.ExperimentRecord, name: str) -> float:
    for section in (record.metrics, record.diagnostics, record.bounds):
        if name in section:
            value = section[name]
            return float('nan') if value is None else float(value)
    return float('nan')


def _fmt(value: float) -> str:
    return "nan" if math.isnan(value) else repr(float(value))


def summarize(records: Sequence[data.ExperimentRecord]) -> List[Dict[str, object]]:
    groups: Dict[Tuple[int, int, int, int], List[data.ExperimentRecord]] = {}
    for rec in records:
        if rec.status != "ok":
            continue
        key = tuple(int(rec.config[k]) for k in ("n", "N", "L", "s"))
        groups.setdefault(key, []).append(rec)
    rows: List[Dict[str, object]] = []
    for key in sorted(groups):
        recs = sorted(groups[key], key=lambda r: int(r.config.get("repeat", 0)))
        row: Dict[str, object] = dict(zip(("n", "N", "L", "s"), key))
        row["runs"] = len(recs)
        for name in SUMMARY_METRICS:
            vals = np.array([_metric(r, name) for r in recs], dtype=np.float64)
            row[f"{name}_mean"] = float(np.mean(vals))
            row[f"{name}_std"] = float(np.std(vals))
        rows.append(row)
    return rows


def summary_columns() -> List[str]:
    cols = ["n", "N", "L", "s", "runs"]
    for name in SUMMARY_METRICS:
        cols += [f"{name}_mean", f"{name}_std"]
    return cols


def report(records: Sequence[data.ExperimentRecord], out_path: str) -> List[Dict[str, object]]:
    rows = summarize(records)
    directory = os.path.dirname(os.fspath(out_path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    cols = summary_columns()
    with open(out_path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(cols)
        for row in rows:
            writer.writerow([row[c] if c in ("n", "N", "L", "s", "runs") else _fmt(row[c]) for c in cols])
    return rows


def trend_summary(rows: Sequence[Dict[str, object]]) -> Dict[str, object]:
    """Monotonicity of test MSE in L per (n, N) and Spearman(EGE, N*L)."""
    inversions = 0
    by_n_big_n: Dict[Tuple[int, int], List[Dict[str, object]]] = {}
    for row in rows:
        by_n_big_n.setdefault((int(row["n"]), int(row["N"])), []).append(row)
    for group in by_n_big_n.values():
        group = sorted(group, key=lambda r: int(r["L"]))
        for prev, cur in zip(group, group[1:]):
            if float(cur["test_mse_mean"]) > float(prev["test_mse_mean"]) + float(prev["test_mse_std"]):
                inversions += 1
    spearman = float('nan')
    if len(rows) >= 3:
        nl = [int(r["N"]) * int(r["L"]) for r in rows]
        ege = [float(r["ege_mean"]) for r in rows]
        if len(set(nl)) > 1 and len(set(ege)) > 1:
            spearman = float(stats.spearmanr(nl, ege)[0])
    return {"test_mse_inversions": inversions, "ege_nl_spearman": spearman}


def run_diagnostics(checkpoint_path: str, mm: Optional[model.MeasurementModel] = None,
                    out_dir: Optional[str] = None) -> Dict[str, object]:
    header, phi = unfolded.read_checkpoint(checkpoint_path)
    if mm is None:
        mm = model.sample_measurement_matrix(int(header["m"]), int(header["n"]), int(header["seed"]))
    dec = unfolded.load_checkpoint(checkpoint_path, mm)
    op = dec.operator
    diag: Dict[str, object] = {
        "checkpoint": os.fspath(checkpoint_path),
        "alpha": op.alpha,
        "beta": op.beta,
        "sinv_s_residual": model.sinv_s_residual(op),
        "assumption2_value": model.assumption2_value(op, mm, dec.rho),
        "a_norm": mm.a_norm,
        "r_inv_norm": dec.r_inv_norm(),
    }
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "sinv_s.bin")
        model.write_matrix(path, model.sinv_s_matrix(op))
        diag["sinv_s_matrix"] = path
    return diag


def render_pdf_summary(rows: Sequence[Dict[str, object]], cfg: GridConfig, path: str,
                       trend: Optional[Dict[str, object]] = None) -> None:
    """One-page A4 table of the grid summary. Needs reportlab."""
    from reportlab.lib import colors
    from reportlab.lib.pagesizes import A4
    from reportlab.lib.units import mm
    from reportlab.pdfgen import canvas

    c = canvas.Canvas(path, pagesize=A4)
    c.setFillColor(colors.HexColor('#111111'))
    c.setFont('Helvetica-Bold', 16)
    c.drawString(20 * mm, 285 * mm, 'ADMM-DAD grid summary')
    c.setFont('Helvetica', 9)
    c.setFillColor(colors.HexColor('#555555'))
    c.drawString(20 * mm, 278 * mm,
                 f"dataset={cfg.dataset}  m/n={cfg.cs_ratio:g}  rho={cfg.rho:g}  lambda={cfg.lam:g}  "
                 f"s_train={cfg.s_train}  repeats={cfg.repeats}  seed={cfg.seed}  q_rule={cfg.q_rule}")
    if trend:
        c.drawString(20 * mm, 273 * mm,
                     f"test-MSE inversions in L: {trend['test_mse_inversions']}   "
                     f"Spearman(EGE, N*L): {trend['ege_nl_spearman']:.3f}")
    cols = [("n", 10), ("N", 14), ("L", 8), ("runs", 10), ("train MSE", 22), ("test MSE", 22),
            ("EGE", 20), ("Thm4 excess", 22), ("Thm5 excess", 22), ("Assump. 2", 18)]
    x0, y = 20 * mm, 262 * mm
    line_h = 5 * mm
    c.setFillColor(colors.HexColor('#f0f3ff'))
    c.rect(x0, y - 1.5 * mm, sum(w for _, w in cols) * mm, line_h, stroke=0, fill=True)
    c.setFillColor(colors.HexColor('#222222'))
    c.setFont('Helvetica-Bold', 8)
    cx = x0
    for name, w in cols:
        c.drawString(cx + 1 * mm, y, name)
        cx += w * mm
    c.setFont('Helvetica', 8)
    for i, row in enumerate(rows):
        y -= line_h
        if y < 20 * mm:
            c.drawString(x0, y, f"... {len(rows) - i} more rows in summary.csv")
            break
        if i % 2 == 0:
            c.setFillColor(colors.HexColor('#fafafa'))
            c.rect(x0, y - 1.5 * mm, sum(w for _, w in cols) * mm, line_h, stroke=0, fill=True)
            c.setFillColor(colors.HexColor('#222222'))
        cells = [str(row["n"]), str(row["N"]), str(row["L"]), str(row["runs"]),
                 f"{row['train_mse_mean']:.4g}", f"{row['test_mse_mean']:.4g}",
                 f"{row['ege_mean']:.3g}", f"{row['theorem4_excess_mean']:.3g}",
                 f"{row['theorem5_excess_mean']:.3g}",
                 f"{row['assumption2_value_mean']:.3g}"]
        cx = x0
        for (_, w), text in zip(cols, cells):
            c.drawString(cx + 1 * mm, y, text)
            cx += w * mm
    c.showPage()
    c.save()


# -----------------------------
# Logging
# -----------------------------
def setup_logging(out_dir: str, log_level: str = "INFO") -> logging.Logger:
    os.makedirs(out_dir, exist_ok=True)
    logger = logging.getLogger('admm_dad')
    for h in list(logger.handlers):
        logger.removeHandler(h)
        h.close()
    logger.setLevel(logging.DEBUG)
    lvl = getattr(logging, str(log_level).upper(), logging.INFO)
    if not isinstance(lvl, int):
        lvl = logging.INFO
    fh = RotatingFileHandler(os.path.join(out_dir, 'admm_dad.log'), maxBytes=2000000, backupCount=2,
                             encoding='utf-8')
    fh.setLevel(lvl)
    fh.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(message)s'))
    logger.addHandler(fh)
    sh = logging.StreamHandler(sys.stderr)
    sh.setLevel(max(lvl, logging.WARNING))
    sh.setFormatter(logging.Formatter('%(levelname)s %(message)s'))
    logger.addHandler(sh)
    logger.propagate = False
    return logger


# -----------------------------
# Entry point
# -----------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description="ADMM-DAD experiment runner")
    ap.add_argument("--config", help="Path to YAML config (flags override it)")
    ap.add_argument("--dataset", choices=["synthetic", "mnist"])
    ap.add_argument("--n", type=int, nargs="+", help="Signal dimensions")
    ap.add_argument("--N", type=int, nargs="+", help="Analysis operator row counts (N > n)")
    ap.add_argument("--L", type=int, nargs="+", help="Layer counts")
    ap.add_argument("--cs-ratio", type=float, help="m/n in (0, 1)")
    ap.add_argument("--s-train", type=int)
    ap.add_argument("--s-test", type=int)
    ap.add_argument("--repeats", type=int)
    ap.add_argument("--seed", type=int, help="Master seed")
    ap.add_argument("--rho", type=float)
    ap.add_argument("--lambda", dest="lam", type=float)
    ap.add_argument("--noise-std", type=float)
    ap.add_argument("--lr", type=float, help="Adam learning rate")
    ap.add_argument("--batch-size", type=int)
    ap.add_argument("--patience", type=int, help="Early-stopping patience in epochs")
    ap.add_argument("--max-epochs", type=int)
    ap.add_argument("--frame-regularizer", type=float, metavar="MU", help="Weight of ||S^-1 S - I||_F")
    ap.add_argument("--delta", type=float, help="Confidence parameter of the bounds")
    ap.add_argument("--q-rule", choices=list(bounds.Q_RULES))
    ap.add_argument("--b-equal", action="store_true", help="Use B_in = B_out (enables the equal-radius bound)")
    ap.add_argument("--out", help="Output directory")
    ap.add_argument("--workers", type=int)
    ap.add_argument("--mnist-dir", help="Directory holding the MNIST IDX files")
    ap.add_argument("--log-level", default="INFO", help="File log level (DEBUG, INFO, WARNING, ERROR)")
    ap.add_argument("--diagnostics", metavar="CHECKPOINT", help="Report frame diagnostics of a checkpoint and exit")
    ap.add_argument("--a-matrix", metavar="PATH", help="Measurement matrix container for --diagnostics")
    ap.add_argument("--fetch-mnist", metavar="DIR", help="Download the MNIST IDX files into DIR and exit")
    ap.add_argument("--export-pdf", metavar="PATH", help="Write a one-page PDF summary of the run")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    if args.fetch_mnist:
        setup_logging(args.fetch_mnist, args.log_level)
        try:
            paths = data.fetch_mnist(args.fetch_mnist)
        except OSError as e:
            print(f"MNIST download failed: {e}", file=sys.stderr)
            return 2
        for p in paths:
            print(p)
        return 0

    if args.diagnostics:
        out_dir = args.out or os.path.dirname(os.path.abspath(args.diagnostics))
        setup_logging(out_dir, args.log_level)
        try:
            mm = None
            if args.a_matrix:
                mm = model.measurement_model(model.read_matrix(args.a_matrix))
            diag = run_diagnostics(args.diagnostics, mm, out_dir=args.out)
        except (OSError, ValueError, ArithmeticError) as e:
            print(f"Diagnostics failed: {e}", file=sys.stderr)
            return 2
        for key in sorted(diag):
            print(f"{key}: {diag[key]}")
        return 0

    try:
        base = load_config(args.config) if args.config else None
        cfg = config_from_args(args, base)
    except (OSError, ValueError, yaml.YAMLError) as e:
        print(f"Invalid configuration: {e}", file=sys.stderr)
        return 2

    try:
        setup_logging(cfg.out_dir, args.log_level)
        store = data.ResultsStore(os.path.join(cfg.out_dir, "results.jsonl"))
    except OSError as e:
        print(f"Cannot prepare output directory: {e}", file=sys.stderr)
        return 2

    LOGGER.info("Grid: %s", asdict(cfg))
    try:
        records = run_grid(cfg, store, progress=lambda done, total, status: LOGGER.info(status))
        rows = report(records, os.path.join(cfg.out_dir, "summary.csv"))
    except OSError as e:
        LOGGER.error("Grid aborted: %s", e, exc_info=True)
        print(f"Grid aborted: {e}", file=sys.stderr)
        return 2

    trend = trend_summary(rows)
    LOGGER.info("Trend: %s", trend)
    failed = sum(1 for r in records if r.status != "ok")

    if args.export_pdf:
        try:
            render_pdf_summary(rows, cfg, args.export_pdf, trend)
        except ImportError:
            print("ReportLab not installed. Try: pip install reportlab", file=sys.stderr)
            return 2
        except OSError as e:
            print(f"Failed to write PDF: {e}", file=sys.stderr)
            return 2

    print(f"{len(records) - failed}/{len(records)} runs ok; summary in {os.path.join(cfg.out_dir, 'summary.csv')}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
