"""Command-line front end.

Usage::

    sparseviews <command> [--config FILE] [--key value ...] [args]

Commands: ``extract``, ``recognize``, ``evaluate``, ``sweep``, ``mi-rank``,
``synth``. Every config key can be overridden by a flag of the same name,
e.g. ``--lam1 0.1 --fractions 0.25,0.5``.

The config file holds one ``key = value`` per line; ``#`` starts a comment
and lists are comma separated. Keys and defaults are in :data:`SCHEMA`.

Outputs are named ``<command>-<confighash>-<seed>.<kind>.<ext>`` inside
``output_dir``. Exit status: 0 success, 1 runtime or numerical failure,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import (
    SyntheticSceneParams,
    TrialSpec,
    dataset_manifest,
    extract_dataset_features,
    generate_synthetic_scene,
    load_dataset,
)
from .errors import ConfigurationError, DatasetError, InvalidInputError, SparseViewsError
from .evaluation import (
    ExperimentGrid,
    config_hash,
    heatmap_csv,
    mi_ranking_report,
    run_accuracy_experiment,
    run_metadata,
    sweep_heatmap,
    write_text,
)
from .features import (
    FeatureParams,
    extract_feature_vector,
    load_image,
    read_feature_table,
    write_feature_table,
)
from .recognition import ObjectLibrary, recognize
from .solver import SolverConfig

log = logging.getLogger("sparseviews")


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


# key -> (parser, default)
SCHEMA = {
    "dataset_root": (str, ""),
    "output_dir": (str, "out"),
    "seed": (int, 0),
    "jobs": (int, 1),
    # features
    "resize_edge": (int, 128),
    "color_bins": (int, 4),
    "hog_cell": (int, 8),
    "hog_block": (int, 2),
    "hog_bins": (int, 9),
    "hog_eps": (float, 1e-6),
    # solver
    "lam1": (float, 0.1),
    "lam2": (float, 0.1),
    "eps": (float, 1e-8),
    "delta": (float, 1e-10),
    "tol": (float, 1e-6),
    "max_iter": (int, 100),
    "u_solver": (str, "auto"),
    "stop_rule": (str, "dual"),
    # accuracy grid and sweep
    "lam1_grid": (_floats, (0.0, 0.1)),
    "lam2_grid": (_floats, (0.0, 0.1)),
    "fractions": (_floats, (0.25, 0.5, 0.75, 1.0)),
    "trials": (int, 10),
    "sweep_lam1": (_floats, (0.0, 0.01, 0.1, 1.0, 10.0)),
    "sweep_lam2": (_floats, (0.0, 0.01, 0.1, 1.0, 10.0)),
    "sweep_fraction": (float, 0.25),
    # MI ranking
    "mi_trials": (int, 200),
    "mi_fraction": (float, 0.25),
    "mi_ranks": (int, 10),
    "mi_bins": (int, 32),
    "mi_size": (int, 64),
    # synthetic scenes
    "n_views": (int, 6),
    "block_dim": (int, 20),
    "n_blocks": (int, 3),
    "noise": (float, 0.05),
    "n_occluded": (int, 2),
    "planted_category": (int, 0),
    "n_categories": (int, 8),
}


NON_RESULT_KEYS = ("output_dir", "jobs")


class UsageError(SparseViewsError):
    pass


@dataclass
class RunConfig:
    values: dict

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        raw: dict = {}
        if path:
            path = Path(path)
            if not path.is_file():
                raise UsageError(f"config file {path} not found")
            parser = configparser.ConfigParser(
                interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",)
            )
            parser.optionxform = str
            try:
                parser.read_string("[run]\n" + path.read_text())
            except configparser.Error as exc:
                raise UsageError(f"malformed config {path}: {exc}") from exc
            raw.update(parser["run"])
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        unknown = sorted(set(raw) - set(SCHEMA))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        values = {}
        for key, (parse, default) in SCHEMA.items():
            if key in raw:
                try:
                    values[key] = parse(str(raw[key]).strip())
                except ValueError as exc:
                    raise UsageError(f"bad value for {key}: {raw[key]!r}") from exc
            else:
                values[key] = default
        cfg = cls(values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        """Check every numeric field against the invariants of the module using it."""
        try:
            self.feature_params()
            self.solver_config()
            self.grid()
            ExperimentGrid(self["sweep_lam1"], self["sweep_lam2"], (self["sweep_fraction"],), (), self["trials"])
            TrialSpec(fraction=self["mi_fraction"])
        except (InvalidInputError, ConfigurationError) as exc:
            raise UsageError(str(exc)) from exc
        if self["jobs"] < 1:
            raise UsageError("jobs must be >= 1")
        if not 1 <= self["mi_ranks"] <= 10 or self["mi_trials"] < 1 or self["mi_bins"] < 2 or self["mi_size"] < 1:
            raise UsageError("mi_ranks must be in 1..10, mi_trials >= 1, mi_bins >= 2, mi_size >= 1")

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.values.items()}

    def result_dict(self) -> dict:
        """Settings that can change results; output location and worker count cannot."""
        return {k: v for k, v in self.to_dict().items() if k not in NON_RESULT_KEYS}

    @property
    def hash(self) -> str:
        return config_hash(self.result_dict())[:12]

    def output_path(self, command: str, kind: str, ext: str) -> Path:
        name = f"{command}-{self.hash}-{self['seed']}.{kind}.{ext}"
        return Path(self["output_dir"]) / name

    def feature_params(self) -> FeatureParams:
        keys = ("resize_edge", "color_bins", "hog_cell", "hog_block", "hog_bins", "hog_eps")
        return FeatureParams(**{k: self[k] for k in keys})

    def solver_config(self) -> SolverConfig:
        keys = ("lam1", "lam2", "eps", "delta", "tol", "max_iter", "u_solver", "stop_rule")
        return SolverConfig(**{k: self[k] for k in keys})

    def grid(self) -> ExperimentGrid:
        return ExperimentGrid(
            self["lam1_grid"], self["lam2_grid"], self["fractions"], (), self["trials"], self["seed"]
        )

    def synth_params(self) -> SyntheticSceneParams:
        keys = ("n_views", "block_dim", "n_blocks", "noise", "n_occluded", "planted_category", "n_categories")
        try:
            return SyntheticSceneParams(**{k: self[k] for k in keys})
        except InvalidInputError as exc:
            raise UsageError(str(exc)) from exc

    def dataset_root(self) -> Path:
        root = self["dataset_root"]
        if not root:
            raise UsageError("dataset_root is not set")
        root = Path(root)
        if not root.is_dir():
            raise UsageError(f"dataset_root {root} does not exist")
        return root


# --------------------------------------------------------------------------
# commands


def cmd_extract(cfg: RunConfig, images) -> int:
    if not images:
        raise UsageError("extract needs at least one image path")
    params = cfg.feature_params()
    failures = 0
    for image_path in images:
        try:
            vec = extract_feature_vector(load_image(image_path), params)
        except (OSError, SparseViewsError) as exc:
            print(f"error: {image_path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        out = cfg.output_path("extract", Path(image_path).stem, "csv")
        out.parent.mkdir(parents=True, exist_ok=True)
        write_feature_table(out, [Path(image_path).name], vec.values[None, :], vec.layout)
        print(out)
    return 1 if failures else 0


def _library_from_dataset(cfg: RunConfig):
    ds = load_dataset(cfg.dataset_root(), jobs=cfg["jobs"])
    params = cfg.feature_params()
    from .dataset import split_reference

    library, _ = split_reference(ds, params)
    return library


def cmd_recognize(cfg: RunConfig, images, views_file=None, library_file=None) -> int:
    solver_cfg = cfg.solver_config()
    if library_file:
        labels, O, layout = read_feature_table(library_file)
        library = ObjectLibrary(O.T, tuple(labels), layout)
    else:
        library = _library_from_dataset(cfg)
    if views_file:
        if images:
            raise UsageError("give either view images or --views-features, not both")
        _, X, layout = read_feature_table(views_file)
        if layout != library.layout:
            raise UsageError(f"view layout {layout.to_string()} != library layout {library.layout.to_string()}")
    elif images:
        params = cfg.feature_params()
        X = np.vstack([extract_feature_vector(load_image(p), params).values for p in images])
    else:
        raise UsageError("recognize needs view images or --views-features")
    result = recognize(X, library, solver_cfg, jobs=cfg["jobs"])
    print(result.to_json(indent=2))
    return 0


def _load_features(cfg: RunConfig):
    ds = load_dataset(cfg.dataset_root(), jobs=cfg["jobs"])
    return ds, extract_dataset_features(ds, cfg.feature_params(), jobs=cfg["jobs"])


def _write_meta(cfg: RunConfig, command: str, manifest: dict) -> None:
    meta = run_metadata(command, cfg.result_dict(), cfg["seed"], manifest)
    meta["output_dir"] = cfg["output_dir"]
    meta["dataset_manifest"] = manifest
    write_text(cfg.output_path(command, "meta", "json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _run_sweep(cfg: RunConfig, feats, command: str) -> Path:
    matrix = sweep_heatmap(
        feats, cfg["sweep_lam1"], cfg["sweep_lam2"], cfg["sweep_fraction"], cfg["trials"],
        cfg["seed"], cfg=cfg.solver_config(), jobs=cfg["jobs"],
    )
    return write_text(
        cfg.output_path(command, "heatmap", "csv"), heatmap_csv(matrix, cfg["sweep_lam1"], cfg["sweep_lam2"])
    )


def _run_mi(cfg: RunConfig, feats, command: str) -> list[Path]:
    report = mi_ranking_report(
        feats, cfg.solver_config(), cfg["mi_trials"], cfg["mi_fraction"], cfg["mi_ranks"],
        cfg["seed"], mi_bins=cfg["mi_bins"], mi_size=cfg["mi_size"], jobs=cfg["jobs"],
    )
    return [
        write_text(cfg.output_path(command, "mi", "csv"), report.to_csv()),
        write_text(cfg.output_path(command, "mi", "json"), json.dumps(report.to_dict(), indent=2) + "\n"),
    ]


def cmd_evaluate(cfg: RunConfig) -> int:
    ds, feats = _load_features(cfg)
    table = run_accuracy_experiment(feats, cfg.grid(), cfg=cfg.solver_config(), jobs=cfg["jobs"])
    outputs = [write_text(cfg.output_path("evaluate", "accuracy", "csv"), table.to_csv())]
    outputs.append(_run_sweep(cfg, feats, "evaluate"))
    outputs.extend(_run_mi(cfg, feats, "evaluate"))
    _write_meta(cfg, "evaluate", dataset_manifest(ds))
    for path in outputs:
        print(path)
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    ds, feats = _load_features(cfg)
    print(_run_sweep(cfg, feats, "sweep"))
    _write_meta(cfg, "sweep", dataset_manifest(ds))
    return 0


def cmd_mi_rank(cfg: RunConfig) -> int:
    ds, feats = _load_features(cfg)
    for path in _run_mi(cfg, feats, "mi-rank"):
        print(path)
    _write_meta(cfg, "mi-rank", dataset_manifest(ds))
    return 0


def cmd_synth(cfg: RunConfig) -> int:
    scene = generate_synthetic_scene(cfg.synth_params(), cfg["seed"])
    lib = scene.library
    views_path = cfg.output_path("synth", "views", "csv")
    views_path.parent.mkdir(parents=True, exist_ok=True)
    write_feature_table(views_path, scene.views.view_ids, scene.views.X, lib.layout)
    lib_path = cfg.output_path("synth", "library", "csv")
    write_feature_table(lib_path, lib.labels, lib.descriptors.T, lib.layout)
    truth = {
        "label": scene.label,
        "planted_view": scene.planted_view,
        "occluded_views": scene.occluded,
        "seed": cfg["seed"],
        "views": views_path.name,
        "library": lib_path.name,
    }
    truth_path = write_text(cfg.output_path("synth", "truth", "json"), json.dumps(truth, indent=2) + "\n")
    for path in (views_path, lib_path, truth_path):
        print(path)
    return 0


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparseviews", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value config file")
        for key in SCHEMA:
            p.add_argument(f"--{key}", dest=f"opt_{key}", metavar=key.upper())
        return p

    p = add("extract", "write one feature file per image")
    p.add_argument("images", nargs="*")
    p = add("recognize", "recognize an object from view images or a feature table")
    p.add_argument("images", nargs="*")
    p.add_argument("--views-features", help="feature table of views (rows)")
    p.add_argument("--library-features", help="feature table of library objects (rows)")
    add("evaluate", "accuracy table, lambda heatmap and MI ranking")
    add("sweep", "lambda1 x lambda2 accuracy heatmap")
    add("mi-rank", "mean MI per view rank")
    add("synth", "write a synthetic planted scene as feature tables")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("opt_")}
        cfg = RunConfig.load(args.config, overrides)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
        if args.command == "extract":
            return cmd_extract(cfg, args.images)
        if args.command == "recognize":
            return cmd_recognize(cfg, args.images, args.views_features, args.library_features)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        if args.command == "mi-rank":
            return cmd_mi_rank(cfg)
        return cmd_synth(cfg)
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SparseViewsError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
