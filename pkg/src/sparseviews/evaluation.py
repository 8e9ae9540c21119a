"""Experiment suite: accuracy vs. views, lambda sweeps, MI view ranking, grid oracle."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from .dataset import (
    DatasetFeatures,
    MultiViewDataset,
    TrialSpec,
    extract_dataset_features,
    sample_indices,
)
from .errors import InvalidInputError, SparseViewsError
from .features import FeatureParams, load_image, resize, to_gray
from .recognition import recognize
from .solver import ProblemInstance, SolverConfig, objective

log = logging.getLogger(__name__)


class ExperimentError(SparseViewsError):
    """A trial failed; the message names the grid cell and trial."""


# --------------------------------------------------------------------------
# mutual information


def _quantized_gray(image, bins: int, size: int | None) -> np.ndarray:
    img = resize(image, size) if size else image
    gray = to_gray(img)
    return np.minimum((gray * bins / 256.0).astype(np.intp), bins - 1)


def _mi_from_labels(qa: np.ndarray, qb: np.ndarray, bins: int) -> float:
    joint = np.bincount((qa * bins + qb).ravel(), minlength=bins * bins).reshape(bins, bins)
    p = joint / joint.sum()
    pa = p.sum(axis=1)
    pb = p.sum(axis=0)
    nz = p > 0
    mi = np.sum(p[nz] * np.log(p[nz] / np.outer(pa, pb)[nz]))
    return max(float(mi), 0.0)


def mutual_information(a, b, bins: int = 32, size: int | None = 64) -> float:
    """Histogram estimate of I(A;B) in nats between two images' gray levels.

    Both images are resized to ``size`` x ``size`` first; pass ``size=None``
    to use them as they are, in which case their shapes must agree.
    """
    if bins < 2:
        raise InvalidInputError("bins must be >= 2")
    qa = _quantized_gray(a, bins, size)
    qb = _quantized_gray(b, bins, size)
    if qa.shape != qb.shape:
        raise InvalidInputError(f"image sizes differ: {qa.shape} vs {qb.shape}")
    return _mi_from_labels(qa, qb, bins)


def entropy(image, bins: int = 32, size: int | None = 64) -> float:
    q = _quantized_gray(image, bins, size)
    p = np.bincount(q.ravel(), minlength=bins) / q.size
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


# --------------------------------------------------------------------------
# accuracy experiments


@dataclass(frozen=True)
class ExperimentGrid:
    """Cells are the product lam1s x lam2s x sizes; each runs ``trials`` recognitions.

    Sizes are either ``fractions`` of each category's input views or absolute
    ``counts``. Trial ``t`` targets category ``t mod p``, so categories are
    visited in turn, and its view subset depends only on ``(base_seed, t)``.
    Every cell therefore sees the same subsets.
    """

    lam1s: tuple = (0.0, 0.1)
    lam2s: tuple = (0.0, 0.1)
    fractions: tuple = (0.25,)
    counts: tuple = ()
    trials: int = 10
    base_seed: int = 0

    def __post_init__(self):
        for name in ("lam1s", "lam2s", "fractions", "counts"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.lam1s or not self.lam2s:
            raise InvalidInputError("lambda lists must be non-empty")
        if bool(self.fractions) == bool(self.counts):
            raise InvalidInputError("give exactly one of fractions or counts")
        if self.trials < 1:
            raise InvalidInputError("trials must be >= 1")
        for size in self.sizes:
            self.spec(size)  # validates range

    @property
    def size_kind(self) -> str:
        return "fraction" if self.fractions else "count"

    @property
    def sizes(self) -> tuple:
        return self.fractions or self.counts

    def spec(self, size) -> TrialSpec:
        if self.fractions:
            return TrialSpec(fraction=float(size), seed=self.base_seed)
        return TrialSpec(count=int(size), seed=self.base_seed)

    def cells(self):
        return list(product(self.lam1s, self.lam2s, self.sizes))


@dataclass(frozen=True)
class AccuracyRow:
    lam1: float
    lam2: float
    size: float
    trials: int
    correct: int
    accuracy: float
    mean_iterations: float


@dataclass
class AccuracyTable:
    rows: list
    size_kind: str = "fraction"

    def lookup(self, lam1, lam2, size) -> AccuracyRow:
        for row in self.rows:
            if (row.lam1, row.lam2, row.size) == (lam1, lam2, size):
                return row
        raise KeyError((lam1, lam2, size))

    def to_csv(self) -> str:
        buf = io.StringIO(newline="")
        writer = csv.writer(buf)
        writer.writerow(["lam1", "lam2", self.size_kind, "trials", "correct", "accuracy", "mean_iterations"])
        for r in self.rows:
            writer.writerow(
                [repr(float(r.lam1)), repr(float(r.lam2)), repr(r.size), r.trials, r.correct,
                 repr(r.accuracy), repr(r.mean_iterations)]
            )
        return buf.getvalue()


def _as_features(ds, params, jobs) -> DatasetFeatures:
    if isinstance(ds, DatasetFeatures):
        return ds
    if isinstance(ds, MultiViewDataset):
        return extract_dataset_features(ds, params, jobs=jobs)
    raise TypeError(f"expected a dataset or extracted features, got {type(ds).__name__}")


def _map(fn, items, jobs: int):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _trial_views(feats: DatasetFeatures, spec: TrialSpec, t: int):
    label = feats.library.labels[t % feats.library.p]
    idx = sample_indices(feats.inputs[label].shape[0], spec, t)
    return label, idx


def run_accuracy_experiment(
    ds,
    grid: ExperimentGrid,
    params: FeatureParams | None = None,
    cfg: SolverConfig | None = None,
    jobs: int = 1,
) -> AccuracyTable:
    """Recognition accuracy for every grid cell.

    ``ds`` is a :class:`MultiViewDataset` (features are extracted with
    ``params``) or an already extracted :class:`DatasetFeatures`. ``cfg``
    supplies everything but ``lam1``/``lam2``, which come from the grid.
    """
    cfg = cfg or SolverConfig()
    feats = _as_features(ds, params, jobs)
    tasks = [(cell, t) for cell in grid.cells() for t in range(grid.trials)]

    def run(task):
        (lam1, lam2, size), t = task
        try:
            label, idx = _trial_views(feats, grid.spec(size), t)
            res = recognize(feats.inputs[label][idx], feats.library, cfg.replace(lam1=lam1, lam2=lam2))
        except SparseViewsError as exc:
            raise ExperimentError(f"lam1={lam1}, lam2={lam2}, {grid.size_kind}={size}, trial {t}: {exc}") from exc
        return res.label == label, float(np.mean(res.iterations))

    outcomes = _map(run, tasks, jobs)
    rows = []
    for c, (lam1, lam2, size) in enumerate(grid.cells()):
        chunk = outcomes[c * grid.trials : (c + 1) * grid.trials]
        correct = sum(ok for ok, _ in chunk)
        rows.append(
            AccuracyRow(
                lam1=float(lam1),
                lam2=float(lam2),
                size=size,
                trials=grid.trials,
                correct=correct,
                accuracy=correct / grid.trials,
                mean_iterations=float(np.mean([it for _, it in chunk])),
            )
        )
        log.info("lam1=%g lam2=%g %s=%s accuracy=%.3f", lam1, lam2, grid.size_kind, size, rows[-1].accuracy)
    return AccuracyTable(rows, grid.size_kind)


def sweep_heatmap(
    ds,
    lam1s,
    lam2s,
    fraction: float = 0.25,
    trials: int = 10,
    base_seed: int = 0,
    params: FeatureParams | None = None,
    cfg: SolverConfig | None = None,
    jobs: int = 1,
) -> np.ndarray:
    """Accuracy matrix with rows indexed by ``lam1s`` and columns by ``lam2s``."""
    grid = ExperimentGrid(tuple(lam1s), tuple(lam2s), (fraction,), (), trials, base_seed)
    table = run_accuracy_experiment(ds, grid, params, cfg, jobs)
    return np.array([r.accuracy for r in table.rows]).reshape(len(grid.lam1s), len(grid.lam2s))


def heatmap_csv(matrix, lam1s, lam2s) -> str:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf)
    writer.writerow(["lam1\\lam2"] + [repr(float(v)) for v in lam2s])
    for lam1, row in zip(lam1s, np.asarray(matrix)):
        writer.writerow([repr(float(lam1))] + [repr(float(v)) for v in row])
    return buf.getvalue()


# --------------------------------------------------------------------------
# MI ranking


@dataclass
class MIRankingReport:
    mean_mi: list
    counts: list
    trials: int
    skipped: int = 0

    @property
    def ranks(self) -> int:
        return len(self.mean_mi)

    def to_csv(self) -> str:
        buf = io.StringIO(newline="")
        writer = csv.writer(buf)
        writer.writerow(["rank", "mean_mi", "count"])
        for r, (mi, c) in enumerate(zip(self.mean_mi, self.counts), start=1):
            writer.writerow([r, repr(float(mi)), c])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "ranks": [
                {"rank": r, "mean_mi": float(mi), "count": int(c)}
                for r, (mi, c) in enumerate(zip(self.mean_mi, self.counts), start=1)
            ],
            "trials": self.trials,
            "skipped_single_view": self.skipped,
        }


def mi_ranking_report(
    ds,
    cfg: SolverConfig | None = None,
    trials: int = 200,
    fraction: float = 0.25,
    ranks: int = 10,
    base_seed: int = 0,
    params: FeatureParams | None = None,
    mi_bins: int = 32,
    mi_size: int = 64,
    jobs: int = 1,
) -> MIRankingReport:
    """Mean MI between the rank-r view and the recognized category's reference image.

    Trials are drawn like in :func:`run_accuracy_experiment`. Trials with a
    single view carry no ranking and are skipped.
    """
    if not 1 <= ranks <= 10:
        raise InvalidInputError("ranks must be in 1..10")
    cfg = cfg or SolverConfig()
    feats = _as_features(ds, params, jobs)
    spec = TrialSpec(fraction=fraction, seed=base_seed)
    cache: dict = {}

    def quantized(path):
        if path not in cache:
            cache[path] = _quantized_gray(load_image(path), mi_bins, mi_size)
        return cache[path]

    def run(t):
        label, idx = _trial_views(feats, spec, t)
        if len(idx) < 2:
            return None
        res = recognize(feats.inputs[label][idx], feats.library, cfg)
        ref = quantized(feats.references[res.label])
        paths = feats.paths[label]
        return [
            _mi_from_labels(quantized(paths[idx[v]]), ref, mi_bins)
            for v in res.view_ranking[:ranks]
        ]

    per_trial = _map(run, range(trials), jobs)
    sums = np.zeros(ranks)
    counts = np.zeros(ranks, dtype=int)
    for values in per_trial:
        if values is None:
            continue
        sums[: len(values)] += values
        counts[: len(values)] += 1
    used = counts > 0
    means = np.where(used, sums / np.maximum(counts, 1), np.nan)
    skipped = sum(v is None for v in per_trial)
    return MIRankingReport(means[used].tolist(), counts[used].tolist(), trials - skipped, skipped)


# --------------------------------------------------------------------------
# grid oracle

MAX_UNKNOWNS = 6
MAX_GRID_POINTS = 2_000_000  # per variable group (w or u)


@dataclass
class OracleResult:
    w: np.ndarray
    u: np.ndarray
    objective: float
    grid_value: float = field(default=float("nan"))


def _cartesian(axis: np.ndarray, k: int) -> np.ndarray:
    mesh = np.meshgrid(*([axis] * k), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _lower_envelope(slopes: np.ndarray, intercepts: np.ndarray):
    """Lines ``intercept + slope * s`` on the lower envelope, left to right.

    ``slopes`` must be strictly decreasing. Returns the line indices and the
    breakpoints between consecutive envelope lines.
    """
    hull: list[int] = []
    starts: list[float] = []
    for k in range(len(slopes)):
        while hull:
            j = hull[-1]
            x = (intercepts[k] - intercepts[j]) / (slopes[j] - slopes[k])
            if x <= starts[-1]:
                hull.pop()
                starts.pop()
            else:
                break
        if hull:
            starts.append(x)
        else:
            starts.append(-np.inf)
        hull.append(k)
    return np.array(hull), np.array(starts[1:])


def brute_force_oracle(
    inst: ProblemInstance, lam1: float, lam2: float, box: float = 2.0, step: float = 0.01
) -> OracleResult:
    """Exact minimum of the objective over the grid ``{-box, -box+step, ..., box}^(n+d)``.

    Every grid ``u`` and every grid value of ``w[:-1]`` is enumerated. For the
    last coordinate of ``w`` the objective is ``c_k - 2 w_k (X u)_last`` plus
    terms free of ``w_last``, so its minimum over the grid values ``w_k`` is
    read off the lower envelope of those lines. Refuses more than
    ``MAX_UNKNOWNS`` unknowns or more than ``MAX_GRID_POINTS`` grid points for
    either variable group.
    """
    if box <= 0 or step <= 0:
        raise InvalidInputError("box and step must be positive")
    n, d = inst.n, inst.d
    if n + d > MAX_UNKNOWNS:
        raise InvalidInputError(f"{n + d} unknowns; the grid oracle handles at most {MAX_UNKNOWNS}")
    k = int(round(2 * box / step))
    axis = np.linspace(-box, box, k + 1)
    for group, size in (("w", n), ("u", d)):
        if (k + 1) ** size > MAX_GRID_POINTS:
            raise InvalidInputError(
                f"{(k + 1) ** size} grid points for {group}; limit is {MAX_GRID_POINTS} "
                f"(use a coarser step or fewer unknowns)"
            )
    X, o = inst.X, inst.o
    U = _cartesian(axis, d)
    V = U @ X.T  # (X u) for every grid u
    group_norms = np.column_stack([np.linalg.norm(U[:, s], axis=1) for s in inst.layout.slices()])
    u_part = np.einsum("ij,ij->i", V, V) + lam2 * group_norms.sum(axis=1)
    slopes = -2.0 * axis  # strictly decreasing
    s_last = V[:, -1]

    best_val, best_w, best_u = np.inf, None, None
    prefixes = _cartesian(axis, n - 1) if n > 1 else np.zeros((1, 0))
    for prefix in prefixes:
        W = np.column_stack([np.repeat(prefix[None, :], k + 1, axis=0), axis])
        resid = W @ X - o
        w_part = np.einsum("ij,ij->i", resid, resid) + np.einsum("ij,ij->i", W, W) + lam1 * np.abs(W).sum(axis=1)
        lines, breaks = _lower_envelope(slopes, w_part)
        pick = lines[np.searchsorted(breaks, s_last)]
        total = u_part - 2.0 * V[:, :-1] @ prefix + w_part[pick] + slopes[pick] * s_last
        i = int(np.argmin(total))
        if total[i] < best_val:
            best_val = float(total[i])
            best_w = W[pick[i]].copy()
            best_u = U[i].copy()
    return OracleResult(best_w, best_u, objective(inst, best_w, best_u, lam1, lam2), best_val)


# --------------------------------------------------------------------------
# run metadata


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def run_metadata(command: str, config: dict, seed: int, manifest: dict | None = None) -> dict:
    meta = {"command": command, "seed": seed, "config": config, "config_hash": config_hash(config)}
    if manifest is not None:
        meta["dataset_manifest_hash"] = config_hash(manifest)
    return meta


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def solver_config_dict(cfg: SolverConfig) -> dict:
    return asdict(cfg)
