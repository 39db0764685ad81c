import json

import numpy as np
import pytest

from condensate.nn import DivergenceError
from condensate.recipes import RECIPES, RecipeError, resolve_params, run_recipe


def test_fig1_dry_run(tmp_path):
    r = run_recipe("fig1_condensation_process", {"max_epochs": 0}, tmp_path / "f")
    rows = np.loadtxt(tmp_path / "f" / "feature_map_epoch0.csv", delimiter=",", skiprows=1)
    # init N(0, m^-4): amplitude is Rayleigh with sigma = m^-2, median sigma * sqrt(2 ln 2)
    assert rows.shape == (100, 4)
    assert np.median(rows[:, 2]) == pytest.approx(1e-4 * np.sqrt(2 * np.log(2)), rel=0.2)
    assert rows[:, 2].max() < 1e-3
    assert (tmp_path / "f" / "feature_map_epoch0.svg").exists()
    assert r.summary["final_epoch"] == 0


def test_manifest_records_everything(tmp_path):
    r = run_recipe("fig6_initial_multiplicity", {"width": 10, "epochs": [3]}, tmp_path / "r")
    manifest = json.loads(r.manifest_path.read_text())
    assert manifest["params"] == resolve_params(RECIPES["fig6_initial_multiplicity"].table,
                                                {"width": 10, "epochs": [3]})
    assert set(manifest["outputs"]) == {p.name for p in (tmp_path / "r").iterdir()} - {"manifest.json"}
    assert manifest["status"] == "ok"


def test_byte_identical_reruns(tmp_path):
    ov = {"width": 8, "n_samples": 30, "max_epochs": 40, "snapshot_epochs": [20, 40]}
    run_recipe("fig1_condensation_process", ov, tmp_path / "a")
    run_recipe("fig1_condensation_process", ov, tmp_path / "b")
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes(), p.name


def test_seed_changes_output(tmp_path):
    ov = {"width": 8, "n_samples": 30, "max_epochs": 10, "snapshot_epochs": [10]}
    run_recipe("fig1_condensation_process", {**ov, "seed": 1}, tmp_path / "a")
    run_recipe("fig1_condensation_process", {**ov, "seed": 2}, tmp_path / "b")
    assert (tmp_path / "a" / "trace.jsonl").read_bytes() != (tmp_path / "b" / "trace.jsonl").read_bytes()


class TestOverrides:
    table = RECIPES["fig2_tanh_terminal"].table

    def test_unknown(self):
        with pytest.raises(RecipeError, match="bogus"):
            resolve_params(self.table, {"bogus": 1})

    @pytest.mark.parametrize("key,value", [("width", 1.5), ("width", True), ("gammas", 4.0),
                                           ("gammas", ["a"]), ("learning_rate", "fast")])
    def test_type_errors(self, key, value):
        with pytest.raises(RecipeError):
            resolve_params(self.table, {key: value})

    def test_int_promotes_to_float(self):
        assert resolve_params(self.table, {"learning_rate": 1})["learning_rate"] == 1.0

    def test_unknown_recipe(self, tmp_path):
        with pytest.raises(RecipeError):
            run_recipe("fig99", {}, tmp_path)

    def test_grid_cells(self):
        table = RECIPES["phase_sweep"].table
        assert resolve_params(table, {"grid": [[1, 2]]})["grid"] == [[1.0, 2.0]]
        with pytest.raises(RecipeError):
            resolve_params(table, {"grid": [[1, 2, 3]]})


def test_divergence_keeps_manifest(tmp_path):
    with pytest.raises(DivergenceError), np.errstate(all="ignore"):
        run_recipe("fig2_tanh_terminal", {"width": 10, "gammas": [0.0], "learning_rate": 1e3, "max_epochs": 200},
                   tmp_path / "d")
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert manifest["status"] == "diverged"


def test_dropout_recipe_small(tmp_path):
    r = run_recipe("fig7_8_dropout", {"width": 16, "max_epochs": 20, "n_samples": 20}, tmp_path / "d")
    assert set(r.summary) == {"two_layer_keep1", "two_layer_keep0.9", "three_layer_keep1", "three_layer_keep0.9",
                              "two_layer_small_init"}
    assert (tmp_path / "d" / "loss_comparison.svg").exists()


def test_fig3_on_synthetic_idx(tmp_path, monkeypatch):
    import functools

    from condensate import data, recipes

    rng = np.random.default_rng(0)
    labels = np.arange(30) % 3
    images = np.zeros((30, 28, 28), dtype=np.uint8)
    for i, c in enumerate(labels):
        images[i, 4 + 8 * c:10 + 8 * c, 4:24] = 200 + rng.integers(0, 50)
    d = tmp_path / "mnist"
    d.mkdir()
    data.write_idx_images(d / data.TRAIN_IMAGES, images[:20])
    data.write_idx_labels(d / data.TRAIN_LABELS, labels[:20])
    data.write_idx_images(d / data.TEST_IMAGES, images[20:])
    data.write_idx_labels(d / data.TEST_LABELS, labels[20:])
    monkeypatch.setattr(recipes, "load_mnist", functools.partial(data.load_mnist, expected_counts=None))
    r = run_recipe("fig3_mnist_cnn", {"mnist_dir": str(d), "channels": 4, "init_std": 0.1, "learning_rate": 0.01,
                                      "batch_size": 8, "max_epochs": 60, "eval_every": 2}, tmp_path / "o")
    s = r.summary
    assert s["train_accuracy"] == 1.0 and s["stop_reason"] == "stop_fn"
    assert s["test_accuracy"] == 1.0
    assert 0.0 <= s["kernel_pair_fraction_init"] <= 1.0
    assert set(s["mnist_sha256"]) == {data.TRAIN_IMAGES, data.TRAIN_LABELS, data.TEST_IMAGES, data.TEST_LABELS}
    sim = np.loadtxt(tmp_path / "o" / "output_similarity_final.csv", delimiter=",")
    assert sim.shape == (4, 4)
