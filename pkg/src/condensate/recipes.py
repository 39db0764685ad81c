"""Scripted end-to-end runs, one per figure pipeline.

Every recipe writes a bundle directory: ``manifest.json`` (resolved parameters,
outputs, summary), traces as ``.jsonl``, matrices as ``.csv`` and figures as
``.svg``.  Output depends only on (recipe, overrides), never on wall time.
"""

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np

from . import __version__, svg
from .activations import get_activation
from .data import (
    PIECEWISE_RELU4,
    SIN_TARGET,
    TANH_TARGET,
    TargetSpec,
    file_digests,
    generate_regression_data,
    load_mnist,
)
from .metrics import (
    cluster_count,
    condensation_report,
    detect_static,
    feature_arrays,
    kernel_pair_fraction,
    output_similarity,
    weight_similarity,
)
from .morph import EnergyRecipe, loss_histogram
from .nn import (
    CROSS_ENTROPY,
    MSE,
    ConvSpec,
    DivergenceError,
    InitSpec,
    NetworkConfig,
    forward,
    init_parameters,
)
from .optim import ADAM, GD, DropoutConfig, OptimizerSpec, accuracy, log_schedule, train
from .phase import (
    RegimeCoords,
    SweepRecipe,
    agrees,
    sweep_phase,
    sweep_rows,
)
from .serialize import save_params, write_matrix_csv

OUT_ENV = "CONDENSATE_OUT"


class RecipeError(ValueError):
    """Bad recipe name or override (a user error)."""


# ---------------------------------------------------------------------------
# parameter tables


@dataclass(frozen=True)
class Param:
    default: Any
    kind: str  # int | float | str | bool | ints | floats | strs | cells
    optional: bool = False
    help: str = ""


def _check(name, kind, value, optional):
    if value is None:
        if optional:
            return None
        raise RecipeError(f"{name}: value required")
    if kind == "cells":
        return _check_cells(value)
    scalar = {"ints": "int", "floats": "float", "strs": "str"}.get(kind)
    if scalar is not None:
        if not isinstance(value, (list, tuple)):
            raise RecipeError(f"{name}: expected a list, got {type(value).__name__}")
        return [_check(f"{name}[{i}]", scalar, v, False) for i, v in enumerate(value)]
    if kind == "bool":
        if not isinstance(value, bool):
            raise RecipeError(f"{name}: expected true/false, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise RecipeError(f"{name}: expected an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise RecipeError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise RecipeError(f"{name}: expected a string, got {value!r}")
        return value
    raise AssertionError(kind)


def resolve_params(table: Dict[str, Param], overrides: Optional[dict]) -> dict:
    overrides = dict(overrides or {})
    unknown = sorted(set(overrides) - set(table))
    if unknown:
        raise RecipeError(f"unknown parameter(s): {', '.join(unknown)}; known: {', '.join(sorted(table))}")
    out = {}
    for name, spec in table.items():
        value = overrides.get(name, spec.default)
        out[name] = _check(name, spec.kind, value, spec.optional)
    return out


# ---------------------------------------------------------------------------
# bundle writer


class Bundle:
    def __init__(self, directory: Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.outputs = []

    def _path(self, name):
        self.outputs.append(name)
        return self.dir / name

    def csv(self, name, matrix, header=None):
        return write_matrix_csv(self._path(name), matrix, header)

    def svg(self, name, text):
        return svg.write(self._path(name), text)

    def json(self, name, obj):
        p = self._path(name)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        return p

    def trace(self, name, trace):
        return trace.to_jsonl(self._path(name))

    def params(self, name, params, config):
        path = save_params(self._path(name), params, config)
        self.outputs.append(Path(name).with_suffix(".json").name)
        return path


@dataclass
class RecipeResult:
    name: str
    directory: Path
    params: dict
    summary: dict
    status: str = "ok"

    @property
    def manifest_path(self):
        return self.directory / "manifest.json"


def _regression(kind, domain, n):
    return generate_regression_data(TargetSpec(kind, tuple(domain), n))


def _two_layer(width, activation, init):
    return NetworkConfig((1, width, 1), get_activation(activation), 1.0, init)


def _feature_rows(theta, amp, static):
    return [[k, theta[k], amp[k], int(k in static)] for k in range(theta.size)]


def _label(v):
    return f"{v:g}"


# ---------------------------------------------------------------------------
# recipes


FIG1 = {
    "seed": Param(0, "int"),
    "width": Param(100, "int"),
    "learning_rate": Param(0.1, "float"),
    "init_power": Param(4.0, "float", help="parameters ~ N(0, m^-init_power)"),
    "n_samples": Param(1000, "int"),
    "max_epochs": Param(100_000, "int"),
    "snapshot_epochs": Param([100, 1000, 5000, 10_000, 12_000, 100_000], "ints"),
    "epsilon": Param(0.05, "float"),
    "engaged_amplitude": Param(1e-2, "float",
                               help="extra count over neurons with amplitude >= this (diagnostic column)"),
}


def _engaged_clusters(params, config, static, amplitude, floor, epsilon):
    excluded = set(static) | {int(k) for k in np.nonzero(amplitude < floor)[0]}
    if len(excluded) == amplitude.size:
        return 0
    return cluster_count(weight_similarity(params, config), epsilon, exclude=excluded).directional_clusters


def _fig1(p, bundle: Bundle, workers):
    m = p["width"]
    std = m ** (-p["init_power"] / 2.0)
    config = _two_layer(m, "relu", InitSpec.direct(std, std, seed=p["seed"]))
    x, y = _regression(PIECEWISE_RELU4, (-1.0, 1.0), p["n_samples"])
    maps = sorted(e for e in set(p["snapshot_epochs"]) if 0 <= e <= p["max_epochs"]) or [0]
    schedule = sorted(set(log_schedule(p["max_epochs"])) | set(maps))
    trace = train(config, init_parameters(config), MSE, x, y, OptimizerSpec(GD, p["learning_rate"]),
                  schedule=schedule, max_epochs=p["max_epochs"], snapshots=True)
    rows = []
    thetas, amps = [], []
    for cp in trace.checkpoints:
        report = condensation_report(cp.snapshot, config, x, epsilon=p["epsilon"])
        th, am = feature_arrays(cp.snapshot)
        engaged = _engaged_clusters(cp.snapshot, config, report.static_set, am, p["engaged_amplitude"],
                                    p["epsilon"])
        cp.cluster_count = report.directional_clusters
        cp.extra = {"axis_clusters": report.axis_clusters, "n_static": len(report.static_set),
                    "engaged_clusters": engaged}
        rows.append([cp.epoch, cp.loss, cp.rd, report.directional_clusters, report.axis_clusters,
                     len(report.static_set), engaged])
        thetas.append(th)
        amps.append(am)
    bundle.trace("trace.jsonl", trace)
    bundle.csv("clusters.csv", rows, ["epoch", "loss", "rd", "directional_clusters", "axis_clusters", "n_static",
                                       "engaged_clusters"])
    thetas, amps = np.array(thetas), np.array(amps)
    epochs = trace.epochs
    counts, engaged = {}, {}
    for e in maps:
        i = epochs.index(e)
        snap = trace.checkpoints[i].snapshot
        static = detect_static(snap, config, x)
        mask = np.array([k in static for k in range(m)])
        bundle.csv(f"feature_map_epoch{e}.csv", _feature_rows(thetas[i], amps[i], static),
                   ["index", "theta", "amplitude", "is_static"])
        bundle.svg(f"feature_map_epoch{e}.svg",
                   svg.feature_scatter_svg(thetas[i], amps[i], mask, (thetas[:i + 1], amps[:i + 1]),
                                           title=f"epoch = {e}"))
        counts[str(e)] = trace.checkpoints[i].cluster_count
        engaged[str(e)] = trace.checkpoints[i].extra["engaged_clusters"]
    bundle.svg("loss.svg", svg.line_plot_svg([("loss", epochs, trace.losses)], "training loss", log_y=True,
                                             xlabel="epoch"))
    bundle.params("params_final.bin", trace.final_params, config)
    return {"directional_clusters": counts, "engaged_clusters": engaged, "final_loss": float(trace.losses[-1]),
            "final_epoch": trace.final_epoch}


FIG2 = {
    "seed": Param(0, "int"),
    "width": Param(1000, "int"),
    "learning_rate": Param(0.03, "float"),
    "gammas": Param([4.0, 6.0], "floats", help="parameters ~ N(0, m^-gamma)"),
    "domain": Param([-15.0, 15.0], "floats"),
    "n_samples": Param(200, "int"),
    "max_epochs": Param(30_000, "int", help="inferred; the stopping epoch is not stated"),
    "epsilon": Param(0.05, "float"),
}


def _fig2(p, bundle: Bundle, workers):
    m = p["width"]
    x, y = _regression(TANH_TARGET, p["domain"], p["n_samples"])
    summary = {}
    for g in p["gammas"]:
        std = m ** (-g / 2.0)
        config = _two_layer(m, "tanh", InitSpec.direct(std, std, seed=p["seed"]))
        trace = train(config, init_parameters(config), MSE, x, y, OptimizerSpec(GD, p["learning_rate"]),
                      max_epochs=p["max_epochs"])
        final = trace.final_params
        sim = weight_similarity(final, config)
        report = condensation_report(final, config, x, epsilon=p["epsilon"])
        th, am = feature_arrays(final)
        tag = _label(g)
        bundle.trace(f"trace_gamma{tag}.jsonl", trace)
        bundle.csv(f"feature_map_gamma{tag}.csv", _feature_rows(th, am, set()),
                   ["index", "theta", "amplitude", "is_static"])
        bundle.svg(f"feature_map_gamma{tag}.svg", svg.feature_scatter_svg(th, am, title=f"gamma = {tag}"))
        bundle.csv(f"similarity_gamma{tag}.csv", sim.values)
        bundle.svg(f"similarity_gamma{tag}.svg", svg.heatmap_svg(sim.values, f"gamma = {tag}"))
        summary[tag] = {"directional_clusters": report.directional_clusters,
                        "axis_clusters": report.axis_clusters,
                        "mean_abs_offdiag": report.mean_abs_offdiag,
                        "final_loss": float(trace.losses[-1]), "final_epoch": trace.final_epoch}
    return summary


FIG3 = {
    "mnist_dir": Param(None, "str", optional=True, help="directory with the four IDX files"),
    "seed": Param(0, "int"),
    "channels": Param(32, "int"),
    "learning_rate": Param(2e-4, "float"),
    "init_std": Param(96.0 ** -4, "float", help="all parameters ~ N(0, init_std^2)"),
    "padding": Param(1, "int"),
    "batch_size": Param(512, "int"),
    "full_batch": Param(False, "bool"),
    "max_epochs": Param(300, "int"),
    "eval_every": Param(5, "int"),
    "verify_checksums": Param(True, "bool"),
}


def _fig3(p, bundle: Bundle, workers):
    if p["mnist_dir"] is None:
        raise RecipeError("fig3_mnist_cnn needs mnist_dir (MNIST is not downloaded automatically)")
    ds = load_mnist(p["mnist_dir"], verify_checksums=p["verify_checksums"])
    config = NetworkConfig((1, p["channels"], 10), get_activation("tanh"), 1.0,
                           InitSpec.direct(p["init_std"], p["init_std"], seed=p["seed"]),
                           conv=ConvSpec(3, (28, 28), p["padding"]))
    params0 = init_parameters(config)
    x, labels = ds.train_images, ds.train_labels
    opt = OptimizerSpec(ADAM, p["learning_rate"], None if p["full_batch"] else p["batch_size"])
    schedule = list(range(0, p["max_epochs"] + 1, max(1, p["eval_every"])))

    def done(params, epoch):
        return accuracy(params, config, x, labels) >= 1.0

    trace = train(config, params0, CROSS_ENTROPY, x, labels, opt, schedule=schedule,
                  max_epochs=p["max_epochs"], stop_fn=done, eval_chunk=2000)
    final = trace.final_params
    combined = ds.combined_images()
    out = {}
    for tag, params in (("init", params0), ("final", final)):
        ws = weight_similarity(params, config)
        os_ = output_similarity(params, config, combined)
        bundle.csv(f"weight_similarity_{tag}.csv", ws.values)
        bundle.svg(f"weight_similarity_{tag}.svg", svg.heatmap_svg(ws.values, f"kernels, {tag}"))
        bundle.csv(f"output_similarity_{tag}.csv", os_.values)
        bundle.svg(f"output_similarity_{tag}.svg", svg.heatmap_svg(os_.values, f"outputs, {tag}"))
        out[f"kernel_pair_fraction_{tag}"] = kernel_pair_fraction(ws)
    bundle.trace("trace.jsonl", trace)
    bundle.params("params_final.bin", final, config)
    out.update(
        train_accuracy=accuracy(final, config, x, labels),
        test_accuracy=accuracy(final, config, ds.test_images, ds.test_labels),
        final_epoch=trace.final_epoch,
        stop_reason=trace.stop_reason,
        mnist_sha256=file_digests(p["mnist_dir"]),
    )
    return out


FIG6 = {
    "seed": Param(0, "int"),
    "width": Param(100, "int"),
    "learning_rate": Param(5e-4, "float"),
    "init_power": Param(4.0, "float"),
    "activations": Param(["tanh", "xtanh"], "strs"),
    "epochs": Param([100, 200], "ints"),
    "domain": Param([-4.0, 4.0], "floats"),
    "n_samples": Param(100, "int"),
    "epsilon": Param(0.05, "float"),
}


def _fig6(p, bundle: Bundle, workers):
    m = p["width"]
    std = m ** (-p["init_power"] / 2.0)
    x, y = _regression(SIN_TARGET, p["domain"], p["n_samples"])
    epochs = sorted(set(p["epochs"]))
    summary = {}
    rows = []
    for name in p["activations"]:
        act = get_activation(name)
        config = _two_layer(m, name, InitSpec.direct(std, std, seed=p["seed"]))
        trace = train(config, init_parameters(config), MSE, x, y, OptimizerSpec(ADAM, p["learning_rate"]),
                      schedule=[0] + epochs, max_epochs=epochs[-1], snapshots=True)
        bundle.trace(f"trace_{name}.jsonl", trace)
        summary[name] = {"multiplicity": act.multiplicity_p, "directional_clusters": {}, "axis_clusters": {}}
        for e in epochs:
            snap = trace.at(e).snapshot
            sim = weight_similarity(snap, config)
            report = condensation_report(snap, config, x, epsilon=p["epsilon"])
            bundle.csv(f"similarity_{name}_epoch{e}.csv", sim.values)
            bundle.svg(f"similarity_{name}_epoch{e}.svg", svg.heatmap_svg(sim.values, f"{name}, epoch {e}"))
            summary[name]["directional_clusters"][str(e)] = report.directional_clusters
            summary[name]["axis_clusters"][str(e)] = report.axis_clusters
            rows.append([e, act.multiplicity_p or 0, report.directional_clusters, report.axis_clusters])
    bundle.csv("clusters.csv", rows, ["epoch", "multiplicity", "directional_clusters", "axis_clusters"])
    return summary


FIG9 = {
    "seed": Param(0, "int", help="first trial seed"),
    "widths": Param([10, 100, 1000], "ints"),
    "trials": Param(50, "int"),
    "max_epochs": Param(100_000, "int"),
    "learning_rate": Param(0.1, "float"),
    "init_power": Param(4.0, "float"),
    "n_samples": Param(1000, "int"),
    "bins": Param(40, "int"),
    "bright_quantile": Param(0.9, "float"),
}


def _fig9(p, bundle: Bundle, workers):
    recipe = EnergyRecipe(target=TargetSpec(PIECEWISE_RELU4, (-1.0, 1.0), p["n_samples"]),
                          learning_rate=p["learning_rate"], init_power=p["init_power"],
                          max_epochs=p["max_epochs"])
    hist = loss_histogram(p["widths"], p["trials"], recipe, bins=p["bins"], workers=workers,
                          base_seed=p["seed"])
    bundle.csv("loss_histogram.csv", hist.rows(), ["width", "bin_low", "bin_high", "frequency"])
    bundle.svg("loss_histogram.svg", svg.loss_histogram_svg(hist.table, hist.widths, hist.bin_edges,
                                                            "loss frequency per width"))
    bright = hist.bright_bins(p["bright_quantile"])
    shared = sorted(set.intersection(*bright)) if bright else []
    return {
        "bright_bins": {str(m): sorted(b) for m, b in zip(hist.widths, bright)},
        "shared_bright_bins": shared,
        "min_bins": {str(m): b for m, b in zip(hist.widths, hist.min_bins())},
        "min_loss_bin_low": {str(m): float(hist.bin_edges[b]) for m, b in zip(hist.widths, hist.min_bins())},
        "excluded": {str(k): v for k, v in hist.excluded.items()},
    }


DROPOUT = {
    "seed": Param(0, "int"),
    "width": Param(1000, "int"),
    "learning_rate": Param(1e-3, "float"),
    "optimizer": Param("adam", "str"),
    "keep_probabilities": Param([1.0, 0.9], "floats"),
    "variants": Param(["two_layer", "three_layer"], "strs"),
    "init_scale": Param(1.0, "float", help="fan-in Gaussian: N(0, scale^2 / fan_in)"),
    "domain": Param([-15.0, 15.0], "floats"),
    "n_samples": Param(100, "int"),
    "max_epochs": Param(5000, "int"),
    "small_init_power": Param(4.0, "float", help="comparison run: N(0, m^-power), no dropout"),
    "compare": Param(True, "bool"),
    "epsilon": Param(0.05, "float"),
}


def _dropout_run(p, depth, keep, init, label, bundle, x, y, opt):
    m = p["width"]
    widths = (1, m, 1) if depth == 2 else (1, m, m, 1)
    config = NetworkConfig(widths, get_activation("tanh"), 1.0, init)
    placement = tuple(range(depth - 1))
    dropout = DropoutConfig(keep, placement)
    params0 = init_parameters(config)
    trace = train(config, params0, MSE, x, y, opt, dropout, max_epochs=p["max_epochs"], seed=p["seed"])
    final = trace.final_params
    bundle.trace(f"trace_{label}.jsonl", trace)
    th0, am0 = feature_arrays(params0)
    th1, am1 = feature_arrays(final)
    bundle.csv(f"features_{label}.csv", [[k, th0[k], am0[k], th1[k], am1[k]] for k in range(m)],
               ["index", "theta_init", "amplitude_init", "theta_final", "amplitude_final"])
    bundle.svg(f"features_{label}.svg", svg.feature_scatter_svg(th1, am1, trajectories=(np.array([th0, th1]),
                                                                                        np.array([am0, am1])),
                                                                title=label))
    grid = np.linspace(p["domain"][0], p["domain"][1], 400)[:, None]
    bundle.csv(f"output_{label}.csv", np.hstack([grid, forward(final, config, grid)]), ["x", "f"])
    sim = weight_similarity(final, config, layer=depth - 2)
    report = condensation_report(final, config, x, layer=depth - 2, epsilon=p["epsilon"])
    bundle.svg(f"similarity_{label}.svg", svg.heatmap_svg(sim.values, label))
    return trace, {"mean_abs_offdiag": report.mean_abs_offdiag,
                   "directional_clusters": report.directional_clusters,
                   "axis_clusters": report.axis_clusters,
                   "final_loss": float(trace.losses[-1])}


def _fig7_8(p, bundle: Bundle, workers):
    if p["optimizer"] not in (ADAM, GD):
        raise RecipeError(f"optimizer must be {ADAM!r} or {GD!r}")
    x, y = _regression(TANH_TARGET, p["domain"], p["n_samples"])
    opt = OptimizerSpec(p["optimizer"], p["learning_rate"])
    summary = {}
    series = []
    for variant in p["variants"]:
        if variant not in ("two_layer", "three_layer"):
            raise RecipeError(f"unknown variant {variant!r}")
        depth = 2 if variant == "two_layer" else 3
        for keep in p["keep_probabilities"]:
            label = f"{variant}_keep{_label(keep)}"
            trace, summary[label] = _dropout_run(p, depth, keep, InitSpec.fan_in(p["init_scale"], p["seed"]),
                                                 label, bundle, x, y, opt)
            if variant == "two_layer" and keep < 1.0:
                series.append((f"dropout keep={_label(keep)}", trace.epochs, trace.losses))
    if p["compare"]:
        m = p["width"]
        std = m ** (-p["small_init_power"] / 2.0)
        label = "two_layer_small_init"
        trace, summary[label] = _dropout_run(p, 2, 1.0, InitSpec.direct(std, std, p["seed"]), label, bundle,
                                             x, y, opt)
        series.append(("small init", trace.epochs, trace.losses))
        bundle.svg("loss_comparison.svg", svg.line_plot_svg(series, "loss", log_y=True, xlabel="epoch"))
    return summary


PHASE = {
    "seed": Param(0, "int", help="first trial seed"),
    "grid": Param([[0.5, 0.0], [0.5, -0.5], [1.5, 1.0], [2.0, 0.0], [3.0, 0.0], [2.5, 0.5]], "cells"),
    "widths": Param([100, 1000, 10_000], "ints"),
    "trials": Param(3, "int"),
    "learning_rate": Param(0.03, "float"),
    "lr_safety": Param(1.0, "float"),
    "max_epochs": Param(3000, "int"),
    "n_samples": Param(200, "int"),
    "domain": Param([-15.0, 15.0], "floats"),
    "loss_threshold": Param(1e-5, "float", optional=True),
    "linear_cut": Param(0.1, "float"),
    "condensed_cut": Param(1.0, "float"),
}


def _phase(p, bundle: Bundle, workers):
    recipe = SweepRecipe(target=TargetSpec(TANH_TARGET, tuple(p["domain"]), p["n_samples"]),
                         learning_rate=p["learning_rate"], lr_safety=p["lr_safety"],
                         max_epochs=p["max_epochs"], loss_threshold=p["loss_threshold"])
    cells = sweep_phase([RegimeCoords(*c) for c in p["grid"]], p["widths"], p["trials"], recipe, workers,
                        p["linear_cut"], p["condensed_cut"], base_seed=p["seed"])
    rows = sweep_rows(cells)
    path = bundle._path("sweep.csv")
    with open(path, "w") as fh:
        fh.write("gamma,gamma_prime,m,seed,sup_RD,oracle,verdict\n")
        for r in rows:
            fh.write(f"{r[0]!r},{r[1]!r},{r[2]},{r[3]},{r[4]!r},{r[5]},{r[6]}\n")
    bundle.csv("runs.csv", [[r["gamma"], r["gamma_prime"], r["m"], r["seed"], r["learning_rate"], r["sup_rd"],
                             r["final_loss"], r["epochs"], int(r["diverged"])] for c in cells for r in c.runs],
               ["gamma", "gamma_prime", "m", "seed", "learning_rate", "sup_RD", "final_loss", "epochs",
                "diverged"])
    bundle.svg("phase_diagram.svg", svg.phase_diagram_svg(
        [(c.coords.gamma, c.coords.gamma_prime, c.verdict) for c in cells], title="empirical verdicts"))
    return {
        "cells": [{"gamma": c.coords.gamma, "gamma_prime": c.coords.gamma_prime, "oracle": c.oracle,
                   "verdict": c.verdict, "median_sup_rd": [[m, s] for m, s in c.empirical],
                   "agrees": agrees(c), "reason": c.reason} for c in cells],
        "agreement": sum(agrees(c) for c in cells),
        "cuts": {"linear": p["linear_cut"], "condensed": p["condensed_cut"]},
    }


@dataclass(frozen=True)
class Recipe:
    table: Dict[str, Param]
    run: Callable
    notes: tuple = ()


RECIPES = {
    "fig1_condensation_process": Recipe(FIG1, _fig1),
    "fig2_tanh_terminal": Recipe(FIG2, _fig2, ("max_epochs default 30000 is inferred",
                                               "n_samples is not stated; 200 evenly spaced points")),
    "fig3_mnist_cnn": Recipe(FIG3, _fig3, ("same padding keeps the 28x28 output grid",
                                           "mini-batch Adam by default; set full_batch for the full-batch run")),
    "fig6_initial_multiplicity": Recipe(FIG6, _fig6, ("domain and n_samples are not stated",)),
    "fig9_energy_bar": Recipe(FIG9, _fig9),
    "fig7_8_dropout": Recipe(DROPOUT, _fig7_8, ("input task is not stated; synthetic tanh target",
                                                "inverted dropout")),
    "phase_sweep": Recipe(PHASE, _phase, ("GD step capped at lr_safety / initial kernel eigenvalue",)),
}


def _check_cells(value):
    if not isinstance(value, (list, tuple)) or not value:
        raise RecipeError("grid: expected a non-empty list of [gamma, gamma_prime] pairs")
    out = []
    for i, c in enumerate(value):
        if not isinstance(c, (list, tuple)) or len(c) != 2:
            raise RecipeError(f"grid[{i}]: expected [gamma, gamma_prime]")
        out.append([_check(f"grid[{i}]", "float", v, False) for v in c])
    return out


def recipe_names():
    return sorted(RECIPES)


def default_out_dir(name):
    return Path(os.environ.get(OUT_ENV, "runs")) / name


def run_recipe(name: str, overrides: Optional[dict] = None, out_dir=None, workers=None) -> RecipeResult:
    """Run a named recipe and write its bundle.

    On divergence the manifest is still written (status "diverged") and the
    :class:`DivergenceError` propagates.
    """
    if name not in RECIPES:
        raise RecipeError(f"unknown recipe {name!r}; choose from {', '.join(recipe_names())}")
    recipe = RECIPES[name]
    params = resolve_params(recipe.table, overrides)
    directory = Path(out_dir) if out_dir is not None else default_out_dir(name)
    bundle = Bundle(directory)
    status, summary, error = "ok", {}, None
    try:
        summary = recipe.run(params, bundle, workers)
    except DivergenceError as exc:
        status, error = "diverged", exc
        if exc.trace is not None and exc.trace.checkpoints:
            bundle.trace("trace_partial.jsonl", exc.trace)
        summary = {"error": str(exc)}
    manifest = {
        "recipe": name,
        "params": params,
        "notes": list(recipe.notes),
        "status": status,
        "summary": _jsonable(summary),
        "outputs": sorted(set(bundle.outputs)),
        "version": __version__,
        "numpy": np.__version__,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if error is not None:
        raise error
    return RecipeResult(name, directory, params, manifest["summary"], status)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj
