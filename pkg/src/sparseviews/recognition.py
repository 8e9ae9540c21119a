"""Pick the library category whose descriptor the views reconstruct best."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, NumericalError, RecognitionError
from .layout import ModalityLayout
from .solver import ProblemInstance, SolverConfig, SolverResult, solve


@dataclass(frozen=True)
class ViewSet:
    """Observation matrix (one view per row) plus where each row came from."""

    X: np.ndarray
    view_ids: tuple = ()
    sources: tuple = ()

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        object.__setattr__(self, "X", X)
        ids = tuple(self.view_ids) or tuple(str(i) for i in range(X.shape[0]))
        if len(ids) != X.shape[0]:
            raise InvalidInputError(f"{len(ids)} view ids for {X.shape[0]} views")
        object.__setattr__(self, "view_ids", ids)
        object.__setattr__(self, "sources", tuple(str(s) for s in self.sources))

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class ObjectLibrary:
    """Known objects: descriptor ``j`` is column ``j`` of the d x p matrix."""

    descriptors: np.ndarray
    labels: tuple
    layout: ModalityLayout

    def __post_init__(self):
        O = np.asarray(self.descriptors, dtype=float)
        if O.ndim == 1:
            O = O[:, None]
        labels = tuple(str(lab) for lab in self.labels)
        if O.ndim != 2 or O.shape[1] < 1:
            raise InvalidInputError("library needs at least one descriptor column")
        if O.shape[0] != self.layout.d:
            raise InvalidInputError(f"descriptors have d={O.shape[0]}, layout d={self.layout.d}")
        if len(labels) != O.shape[1]:
            raise InvalidInputError(f"{len(labels)} labels for {O.shape[1]} descriptors")
        if len(set(labels)) != len(labels):
            raise InvalidInputError("library labels must be unique")
        object.__setattr__(self, "descriptors", O)
        object.__setattr__(self, "labels", labels)

    @property
    def p(self) -> int:
        return self.descriptors.shape[1]


@dataclass
class RecognitionResult:
    label: str
    index: int
    objectives: np.ndarray
    w: np.ndarray
    u: np.ndarray
    view_ranking: np.ndarray
    modality_weights: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    modality_names: list = field(default_factory=list)
    labels: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "index": self.index,
            "objectives": dict(zip(self.labels, map(float, self.objectives))),
            "w": self.w.tolist(),
            "u": self.u.tolist(),
            "view_ranking": self.view_ranking.tolist(),
            "modality_weights": dict(zip(self.modality_names, map(float, self.modality_weights))),
            "converged": dict(zip(self.labels, map(bool, self.converged))),
            "iterations": dict(zip(self.labels, map(int, self.iterations))),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def rank_views(w) -> np.ndarray:
    """View indices (0-based) by decreasing ``|w_i|``; ties keep index order."""
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise InvalidInputError("w must be finite")
    return np.argsort(-np.abs(w), kind="stable")


def modality_weights(u, layout: ModalityLayout) -> np.ndarray:
    """l2-norm of each modality block of ``u``."""
    return layout.block_norms(u)


def recognize(
    views, library: ObjectLibrary, cfg: SolverConfig | None = None, jobs: int = 1
) -> RecognitionResult:
    """Solve once per library column and return the lowest-objective category.

    ``views`` is a :class:`ViewSet` or an n x d array. Solves for different
    categories are independent and run on ``jobs`` threads; the outcome does
    not depend on scheduling.
    """
    cfg = cfg or SolverConfig()
    X = views.X if isinstance(views, ViewSet) else np.atleast_2d(np.asarray(views, dtype=float))
    if X.shape[1] != library.layout.d:
        raise InvalidInputError(f"views have d={X.shape[1]}, library has d={library.layout.d}")

    def run(j: int) -> SolverResult:
        try:
            inst = ProblemInstance(X, library.descriptors[:, j], library.layout)
            return solve(inst, cfg)
        except NumericalError as exc:
            raise RecognitionError(library.labels[j], exc) from exc

    if jobs > 1 and library.p > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, range(library.p)))
    else:
        results = [run(j) for j in range(library.p)]
    return _select(results, library)


def _select(results: Sequence[SolverResult], library: ObjectLibrary) -> RecognitionResult:
    objectives = np.array([r.objective for r in results])
    best = int(np.argmin(objectives))  # first minimum wins ties
    win = results[best]
    return RecognitionResult(
        label=library.labels[best],
        index=best,
        objectives=objectives,
        w=win.w,
        u=win.u,
        view_ranking=rank_views(win.w),
        modality_weights=modality_weights(win.u, library.layout),
        converged=np.array([r.converged for r in results]),
        iterations=np.array([r.iterations for r in results]),
        modality_names=library.layout.names,
        labels=list(library.labels),
    )
