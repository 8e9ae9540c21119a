import json
import math

import numpy as np
import pytest

from sparseviews.dataset import (
    SyntheticSceneParams,
    TrialSpec,
    dataset_manifest,
    extract_dataset_features,
    generate_synthetic_scene,
    load_dataset,
    sample_indices,
    sample_views,
    split_reference,
)
from sparseviews.errors import DatasetError, InvalidInputError
from sparseviews.recognition import recognize
from sparseviews.solver import SolverConfig

from conftest import make_image_dataset


class TestLoad:
    def test_layout_and_order(self, image_dataset):
        ds = load_dataset(image_dataset)
        assert ds.labels == ["cat0", "cat1", "cat2"]
        assert [p.name for p in ds.views("cat1")] == [f"view{v:02d}.png" for v in range(6)]

    def test_coil_flat_layout(self, tmp_path):
        root = make_image_dataset(tmp_path / "coil", categories=2, views=3, flat=True)
        for angle in (0, 5, 10):
            (root / f"obj1__{angle}.png").rename(root / f"obj10__{angle}.png")
        ds = load_dataset(root)
        assert ds.labels == ["obj2", "obj10"]  # numeric object order
        assert [p.name for p in ds.views("obj2")] == ["obj2__0.png", "obj2__5.png", "obj2__10.png"]

    def test_coil_angles_sorted_numerically(self, tmp_path):
        root = make_image_dataset(tmp_path / "coil", categories=1, views=3, flat=True)
        (root / "obj1__10.png").rename(root / "obj1__100.png")
        ds = load_dataset(root)
        assert [p.name for p in ds.views("obj1")] == ["obj1__0.png", "obj1__5.png", "obj1__100.png"]

    def test_byte_order(self, tmp_path):
        root = make_image_dataset(tmp_path / "d", categories=1, views=2)
        (root / "cat0" / "view00.png").rename(root / "cat0" / "B.png")
        (root / "cat0" / "view01.png").rename(root / "cat0" / "a.png")
        assert [p.name for p in load_dataset(root).views("cat0")] == ["B.png", "a.png"]

    def test_empty_root(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(tmp_path)

    def test_missing_root(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(tmp_path / "nope")

    def test_empty_category(self, tmp_path):
        root = make_image_dataset(tmp_path / "d", categories=1, views=2)
        (root / "empty").mkdir()
        with pytest.raises(DatasetError, match="empty"):
            load_dataset(root)

    def test_single_view_category(self, tmp_path):
        root = make_image_dataset(tmp_path / "d", categories=1, views=1)
        with pytest.raises(DatasetError, match="1 view"):
            load_dataset(root)

    def test_unreadable_image(self, tmp_path):
        root = make_image_dataset(tmp_path / "d", categories=1, views=2)
        (root / "cat0" / "zz.png").write_bytes(b"garbage")
        with pytest.raises(OSError, match="zz.png"):
            load_dataset(root)

    def test_reference_override(self, tmp_path):
        root = make_image_dataset(tmp_path / "d", categories=2, views=3)
        (root / "references.json").write_text(json.dumps({"cat1": "view02.png"}))
        ds = load_dataset(root)
        assert ds.views("cat1")[0].name == "view02.png"
        manifest = dataset_manifest(ds)
        assert [c["reference"] for c in manifest["categories"]] == ["view00.png", "view02.png"]
        with pytest.raises(DatasetError):
            load_dataset(root, references={"cat9": "x.png"})
        with pytest.raises(DatasetError):
            load_dataset(root, references={"cat0": "x.png"})


class TestSplit:
    def test_reference_excluded(self, image_dataset, small_params):
        ds = load_dataset(image_dataset)
        library, inputs = split_reference(ds, small_params)
        assert library.descriptors.shape == (small_params.layout().d, 3)
        for label, views in ds.categories:
            assert views[0] not in inputs[label]
            assert len(inputs[label]) == len(views) - 1

    def test_two_view_category(self, tmp_path, small_params):
        root = make_image_dataset(tmp_path / "d", categories=2, views=2)
        _, inputs = split_reference(load_dataset(root), small_params)
        assert all(len(v) == 1 for v in inputs.values())

    def test_features_match_split(self, image_dataset, small_params):
        ds = load_dataset(image_dataset)
        library, _ = split_reference(ds, small_params)
        feats = extract_dataset_features(ds, small_params, jobs=2)
        np.testing.assert_array_equal(feats.library.descriptors, library.descriptors)
        assert feats.inputs["cat0"].shape == (5, small_params.layout().d)


class TestSampling:
    def test_fraction_ceiling(self):
        assert TrialSpec(fraction=0.25).n_views(72) == 18
        assert TrialSpec(fraction=0.25).n_views(71) == math.ceil(0.25 * 71) == 18
        assert TrialSpec(fraction=0.1).n_views(30) == 3
        assert TrialSpec(fraction=0.01).n_views(5) == 1

    def test_all_views(self):
        views = list("abcdefg")
        assert sample_views(views, TrialSpec(count=7), 3) == views

    def test_reproducible(self):
        spec = TrialSpec(fraction=0.5, seed=42)
        a = sample_indices(20, spec, 7)
        np.testing.assert_array_equal(a, sample_indices(20, spec, 7))
        assert len(np.unique(a)) == 10
        assert not np.array_equal(a, sample_indices(20, spec, 8))

    def test_too_many(self):
        with pytest.raises(InvalidInputError):
            sample_views(list("abc"), TrialSpec(count=4), 0)

    @pytest.mark.parametrize("kwargs", [{}, {"count": 2, "fraction": 0.5}, {"fraction": 0}, {"fraction": 1.5}, {"count": 0}])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(InvalidInputError):
            TrialSpec(**kwargs)

    def test_uniform_marginals(self):
        spec = TrialSpec(count=3, seed=1)
        hits = np.zeros(10)
        for t in range(3000):
            hits[sample_indices(10, spec, t)] += 1
        np.testing.assert_allclose(hits / 3000, 0.3, atol=0.03)


class TestSynthetic:
    def test_noiseless_single_view(self):
        scene = generate_synthetic_scene(
            SyntheticSceneParams(n_views=1, noise=0.0, n_occluded=0, planted_category=3), seed=5
        )
        np.testing.assert_array_equal(scene.views.X[0], scene.library.descriptors[:, 3])
        assert scene.label == "object3" and scene.planted_view == 0

    def test_deterministic(self):
        p = SyntheticSceneParams()
        a, b = generate_synthetic_scene(p, 9), generate_synthetic_scene(p, 9)
        assert a.views.X.tobytes() == b.views.X.tobytes()
        assert a.occluded == b.occluded and a.planted_view == b.planted_view

    def test_library_unit_columns(self):
        scene = generate_synthetic_scene(SyntheticSceneParams(), 0)
        np.testing.assert_allclose(np.linalg.norm(scene.library.descriptors, axis=0), 1.0)
        assert scene.planted_view not in scene.occluded and len(scene.occluded) == 2

    def test_noiseless_scene_recognized(self):
        for seed in range(10):
            scene = generate_synthetic_scene(SyntheticSceneParams(noise=0.0), seed)
            res = recognize(scene.views, scene.library, SolverConfig(lam1=0.1, lam2=0.1))
            assert res.label == scene.label

    def test_top_view_is_planted(self):
        hits = 0
        for seed in range(100):
            scene = generate_synthetic_scene(SyntheticSceneParams(), seed)
            res = recognize(scene.views, scene.library, SolverConfig(lam1=0.1, lam2=0.1))
            hits += res.view_ranking[0] == scene.planted_view
        assert hits >= 95

    @pytest.mark.parametrize("kwargs", [{"n_occluded": 6}, {"noise": -1}, {"planted_category": 8}, {"n_views": 0}])
    def test_invalid_params(self, kwargs):
        with pytest.raises(InvalidInputError):
            SyntheticSceneParams(**kwargs)
