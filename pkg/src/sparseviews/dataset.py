"""Multi-view image datasets, trial sampling and synthetic planted scenes.

Two on-disk layouts are understood:

* ``root/<category>/<view>.png`` -- one directory per object, views ordered
  by filename (byte order);
* the flat COIL-20 layout ``root/obj<k>__<angle>.png`` -- grouped by the
  ``obj<k>`` prefix, objects ordered by ``k`` and views by ``angle``.

An optional ``references.json`` (``{"category": "file name"}``) in ``root``
overrides which view becomes the reference for a category; by default it is
the first view.
"""

from __future__ import annotations

import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DatasetError, InvalidInputError
from .features import FeatureParams, extract_feature_vector, load_image
from .layout import ModalityLayout
from .recognition import ObjectLibrary, ViewSet

IMAGE_SUFFIXES = {".png", ".pgm", ".ppm", ".pnm", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg"}
REFERENCES_FILE = "references.json"
_COIL_NAME = re.compile(r"^obj(\d+)__(\d+)$")


@dataclass(frozen=True)
class MultiViewDataset:
    categories: tuple  # ((label, (path, ...)), ...)
    root: Path

    @property
    def labels(self) -> list[str]:
        return [label for label, _ in self.categories]

    def views(self, label: str) -> tuple:
        return dict(self.categories)[label]


def _is_image(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES


def _byte_order(path: Path) -> bytes:
    return path.name.encode("utf-8", "surrogateescape")


def _scan(root: Path) -> list[tuple[str, list[Path]]]:
    subdirs = sorted((p for p in root.iterdir() if p.is_dir()), key=_byte_order)
    if subdirs:
        return [
            (d.name, sorted((p for p in d.iterdir() if _is_image(p)), key=_byte_order))
            for d in subdirs
        ]
    groups: dict[int, list[tuple[int, Path]]] = {}
    for p in root.iterdir():
        match = _COIL_NAME.match(p.stem) if _is_image(p) else None
        if match:
            groups.setdefault(int(match.group(1)), []).append((int(match.group(2)), p))
    return [
        (f"obj{k}", [p for _, p in sorted(groups[k], key=lambda t: (t[0], _byte_order(t[1])))])
        for k in sorted(groups)
    ]


def _check_readable(path: Path) -> None:
    load_image(path)


def load_dataset(root, references: dict | None = None, validate: bool = True, jobs: int = 1):
    """Scan ``root`` into a :class:`MultiViewDataset`.

    ``references`` maps a category to the file name of its reference view and
    takes precedence over ``root/references.json``. With ``validate`` every
    image is decoded once so unreadable files fail here, naming the path.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    overrides = {}
    ref_file = root / REFERENCES_FILE
    if ref_file.is_file():
        overrides.update(json.loads(ref_file.read_text()))
    overrides.update(references or {})

    categories = []
    for label, views in _scan(root):
        if not views:
            raise DatasetError(f"category {label!r} has no images")
        if len(views) < 2:
            raise DatasetError(f"category {label!r} has 1 view; need a reference plus an input")
        if label in overrides:
            names = [v.name for v in views]
            if overrides[label] not in names:
                raise DatasetError(f"reference {overrides[label]!r} not found in {label!r}")
            ref = views.pop(names.index(overrides[label]))
            views.insert(0, ref)
        categories.append((label, tuple(views)))
    if not categories:
        raise DatasetError(f"no categories found under {root}")
    unknown = set(overrides) - {label for label, _ in categories}
    if unknown:
        raise DatasetError(f"reference overrides for unknown categories {sorted(unknown)}")

    if validate:
        paths = [p for _, views in categories for p in views]
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                list(pool.map(_check_readable, paths))
        else:
            for p in paths:
                _check_readable(p)
    return MultiViewDataset(tuple(categories), root)


def dataset_manifest(ds: MultiViewDataset) -> dict:
    """JSON-ready audit record: categories, view counts and the chosen references."""
    return {
        "root": str(ds.root),
        "categories": [
            {
                "label": label,
                "views": len(views),
                "reference": views[0].name,
                "files": [v.name for v in views],
            }
            for label, views in ds.categories
        ],
    }


def split_reference(ds: MultiViewDataset, params: FeatureParams | None = None):
    """Build the object library from each category's first view.

    Returns ``(library, inputs)`` where ``inputs`` maps each label to its
    remaining view paths; the reference view never appears among them.
    """
    params = params or FeatureParams()
    layout = params.layout()
    columns = [extract_feature_vector(load_image(views[0]), params).values for _, views in ds.categories]
    library = ObjectLibrary(np.column_stack(columns), tuple(ds.labels), layout)
    inputs = {label: list(views[1:]) for label, views in ds.categories}
    return library, inputs


@dataclass
class DatasetFeatures:
    """All feature vectors of a split dataset, extracted once."""

    library: ObjectLibrary
    inputs: dict  # label -> (n_views x d) array
    paths: dict  # label -> list of input view paths
    references: dict  # label -> reference view path

    @property
    def layout(self) -> ModalityLayout:
        return self.library.layout


def extract_dataset_features(ds: MultiViewDataset, params: FeatureParams | None = None, jobs: int = 1):
    params = params or FeatureParams()

    def features(path):
        return extract_feature_vector(load_image(path), params).values

    all_paths = [p for _, views in ds.categories for p in views]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            vectors = list(pool.map(features, all_paths))
    else:
        vectors = [features(p) for p in all_paths]
    lookup = dict(zip(all_paths, vectors))

    library = ObjectLibrary(
        np.column_stack([lookup[views[0]] for _, views in ds.categories]),
        tuple(ds.labels),
        params.layout(),
    )
    inputs = {label: np.vstack([lookup[p] for p in views[1:]]) for label, views in ds.categories}
    paths = {label: list(views[1:]) for label, views in ds.categories}
    references = {label: views[0] for label, views in ds.categories}
    return DatasetFeatures(library, inputs, paths, references)


# --------------------------------------------------------------------------
# trial sampling


@dataclass(frozen=True)
class TrialSpec:
    """How many views a trial uses: an absolute ``count`` or a ``fraction``."""

    count: int | None = None
    fraction: float | None = None
    seed: int = 0
    repetitions: int = 1

    def __post_init__(self):
        if (self.count is None) == (self.fraction is None):
            raise InvalidInputError("give exactly one of count or fraction")
        if self.fraction is not None and not 0 < self.fraction <= 1:
            raise InvalidInputError(f"fraction {self.fraction} outside (0, 1]")
        if self.count is not None and self.count < 1:
            raise InvalidInputError(f"count {self.count} < 1")
        if self.repetitions < 1:
            raise InvalidInputError("repetitions must be >= 1")

    def n_views(self, available: int) -> int:
        if self.count is not None:
            k = self.count
        else:
            # guard against 0.1 * 30 = 3.0000000000000004 rounding up to 4
            k = max(1, math.ceil(self.fraction * available - 1e-9))
        if k > available:
            raise InvalidInputError(f"requested {k} views but only {available} available")
        return k


def trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, trial_index)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, trial_index])))


def sample_indices(available: int, spec: TrialSpec, trial_index: int) -> np.ndarray:
    k = spec.n_views(available)
    picked = trial_rng(spec.seed, trial_index).choice(available, size=k, replace=False)
    return np.sort(picked)


def sample_views(views: Sequence, spec: TrialSpec, trial_index: int) -> list:
    """Uniform subset without replacement, in the original order."""
    return [views[i] for i in sample_indices(len(views), spec, trial_index)]


# --------------------------------------------------------------------------
# synthetic scenes


@dataclass(frozen=True)
class SyntheticSceneParams:
    """Shape of a planted scene.

    ``noise`` is a relative level: the perturbation added to a view has
    expected norm ``noise`` (descriptors have unit norm).
    """

    n_views: int = 6
    block_dim: int = 20
    n_blocks: int = 3
    noise: float = 0.05
    n_occluded: int = 2
    planted_category: int = 0
    n_categories: int = 8

    def __post_init__(self):
        if self.n_views < 1 or self.block_dim < 1 or self.n_blocks < 1 or self.n_categories < 1:
            raise InvalidInputError(f"sizes must be positive: {self}")
        if self.noise < 0:
            raise InvalidInputError("noise must be non-negative")
        if not 0 <= self.n_occluded < self.n_views:
            raise InvalidInputError(f"occluded count {self.n_occluded} must be in [0, n_views)")
        if not 0 <= self.planted_category < self.n_categories:
            raise InvalidInputError("planted_category out of range")

    @property
    def d(self) -> int:
        return self.block_dim * self.n_blocks


@dataclass
class SyntheticScene:
    views: ViewSet
    library: ObjectLibrary
    label: str
    planted_view: int
    occluded: list = field(default_factory=list)


def _unit(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def generate_synthetic_scene(params: SyntheticSceneParams, seed: int) -> SyntheticScene:
    """Views of one library object, one of them a near-exact copy.

    The planted view is the target descriptor plus noise; occluded views are
    random unit vectors unrelated to any object; the rest mix the target
    (weight 0.3-0.7) with an unrelated direction, i.e. partial views.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    d, n = params.d, params.n_views
    layout = ModalityLayout.uniform(params.n_blocks, params.block_dim)
    O = np.column_stack([_unit(rng, d) for _ in range(params.n_categories)])
    target = O[:, params.planted_category]

    order = rng.permutation(n)
    planted = int(order[0])
    occluded = sorted(int(i) for i in order[1 : 1 + params.n_occluded])
    sigma = params.noise / math.sqrt(d)

    X = np.empty((n, d))
    for i in range(n):
        if i == planted:
            X[i] = target + sigma * rng.standard_normal(d)
        elif i in occluded:
            X[i] = _unit(rng, d)
        else:
            a = rng.uniform(0.3, 0.7)
            X[i] = a * target + math.sqrt(1 - a * a) * _unit(rng, d) + sigma * rng.standard_normal(d)

    labels = tuple(f"object{j}" for j in range(params.n_categories))
    views = ViewSet(X, tuple(f"view{i}" for i in range(n)))
    return SyntheticScene(
        views=views,
        library=ObjectLibrary(O, labels, layout),
        label=labels[params.planted_category],
        planted_view=planted,
        occluded=occluded,
    )
