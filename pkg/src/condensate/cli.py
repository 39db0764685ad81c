"""``condensate`` command-line entry point.

Exit codes: 0 success, 1 user error (bad flag, config or input), 2 numerical
failure (divergence; partial artifacts are kept).
"""

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, svg
from .activations import get_activation
from .data import IdxFormatError, TargetSpec, generate_regression_data
from .metrics import (
    cluster_count,
    condensation_report,
    detect_static,
    feature_arrays,
    output_similarity,
    weight_similarity,
)
from .morph import (
    MergeError,
    SplitPlan,
    gradient_norm,
    hessian_signature,
    merge_neurons,
    merge_plan_from_clusters,
    split_neuron,
)
from .nn import (
    DIRECT,
    FAN_IN,
    MSE,
    RATE,
    DivergenceError,
    InitSpec,
    NetworkConfig,
    ParameterSet,
    forward,
    hessian,
    init_parameters,
)
from .optim import DropoutConfig, OptimizerSpec, train
from .recipes import OUT_ENV, Bundle, RecipeError, recipe_names, run_recipe
from .serialize import load_params, read_matrix_csv, save_params

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# argument helpers


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _cells(text):
    try:
        return [[float(v) for v in cell.split(",")] for cell in str(text).split(";") if cell.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'g,gp;g,gp;...', got {text!r}")


def _toml_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _common(parser):
    g = parser.add_argument_group("global")
    g.add_argument("--config", type=Path, help="TOML file; flags override its values")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", type=Path, help=f"output directory (else ${OUT_ENV}, else runs/<command>)")
    g.add_argument("--threads", type=int, help="worker processes for multi-trial commands")


def _data_flags(parser, target="piecewise_relu4", domain=None, n=1000):
    parser.add_argument("--target", choices=["piecewise_relu4", "tanh", "sin"], default=None,
                        help=f"regression target (default {target})")
    parser.add_argument("--domain", type=_floats, help="lo,hi")
    parser.add_argument("--n-samples", type=int)
    parser.set_defaults(_data_defaults={"target": target, "domain": domain or [-1.0, 1.0], "n_samples": n})


def build_parser():
    p = _Parser(prog="condensate", description="Condensation experiments for small neural networks.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="train a dense network on a 1-D regression target")
    _common(t)
    _data_flags(t)
    t.add_argument("--activation", choices=["relu", "tanh", "xtanh"])
    t.add_argument("--widths", type=_ints, help="layer widths, e.g. 1,100,1")
    t.add_argument("--init", choices=[DIRECT, RATE, FAN_IN])
    t.add_argument("--beta1", type=float)
    t.add_argument("--beta2", type=float)
    t.add_argument("--gamma", type=float)
    t.add_argument("--gamma-prime", type=float)
    t.add_argument("--alpha", type=float)
    t.add_argument("--no-bias", action="store_true", default=None)
    t.add_argument("--optimizer", choices=["gd", "adam"])
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--keep-prob", type=float)
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--loss-threshold", type=float)
    t.add_argument("--epsilon", type=float)

    m = sub.add_parser("metrics", help="similarity matrices, clusters and feature maps of saved weights")
    _common(m)
    _data_flags(m)
    m.add_argument("--weights", type=Path, help=".bin file (read from stdin when omitted)")
    m.add_argument("--layer", type=int)
    m.add_argument("--cosine", action="store_true", default=None, help="input-weight similarity")
    m.add_argument("--outputs", action="store_true", default=None, help="layer-output similarity on the data")
    m.add_argument("--heatmap", action="store_true", default=None, help="write SVG heatmaps")
    m.add_argument("--feature-map", action="store_true", default=None)
    m.add_argument("--epsilon", type=float)

    ps = sub.add_parser("phase-sweep", help="RD-vs-width sweep over (gamma, gamma') cells")
    _common(ps)
    ps.add_argument("--grid", type=_cells, help="'g,gp;g,gp;...'")
    ps.add_argument("--widths", type=_ints)
    ps.add_argument("--trials", type=int)
    ps.add_argument("--lr", type=float)
    ps.add_argument("--max-epochs", type=int)
    ps.add_argument("--n-samples", type=int)

    e = sub.add_parser("embed", help="split one hidden neuron (width m -> m+1)")
    _common(e)
    _data_flags(e)
    e.add_argument("--weights", type=Path)
    e.add_argument("--neuron", type=int)
    e.add_argument("--fraction", type=float)
    e.add_argument("--layer", type=int)
    e.add_argument("--hessian", action="store_true", default=None, help="report Hessian signatures")

    r = sub.add_parser("reduce", help="merge condensed neurons")
    _common(r)
    _data_flags(r)
    r.add_argument("--weights", type=Path)
    r.add_argument("--epsilon", type=float)
    r.add_argument("--mode", choices=["exact-relu", "approx"])
    r.add_argument("--layer", type=int)

    eb = sub.add_parser("energy-bar", help="loss-frequency histogram across widths")
    _common(eb)
    eb.add_argument("--widths", type=_ints)
    eb.add_argument("--trials", type=int)
    eb.add_argument("--max-epochs", type=int)
    eb.add_argument("--bins", type=int)
    eb.add_argument("--lr", type=float)

    rc = sub.add_parser("recipe", help="run a named figure pipeline")
    _common(rc)
    rc.add_argument("name", choices=recipe_names())
    rc.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a recipe parameter (TOML value syntax)")

    iw = sub.add_parser("import-weights", help="convert CSV weight matrices to a .bin; prints its path")
    _common(iw)
    iw.add_argument("--csv", type=Path, required=True, help="one row per neuron / flattened kernel")
    iw.add_argument("--bias-csv", type=Path)
    iw.add_argument("--output-csv", type=Path, help="output-layer weights (rows = outputs)")
    return p


# ---------------------------------------------------------------------------
# config resolution

DEFAULTS = {
    "train": {"activation": "relu", "widths": [1, 100, 1], "init": DIRECT, "beta1": 1e-4, "beta2": 1e-4,
              "gamma": 4.0, "gamma_prime": 0.0, "alpha": 1.0, "no_bias": False, "optimizer": "gd", "lr": 0.1,
              "batch_size": None, "keep_prob": 1.0, "max_epochs": 10_000, "loss_threshold": None,
              "epsilon": 0.05},
    "metrics": {"weights": None, "layer": 0, "cosine": False, "outputs": False, "heatmap": False,
                "feature_map": False, "epsilon": 0.05},
    "phase-sweep": {"grid": None, "widths": None, "trials": None, "lr": None, "max_epochs": None,
                    "n_samples": None},
    "embed": {"weights": None, "neuron": 0, "fraction": 0.5, "layer": 0, "hessian": False},
    "reduce": {"weights": None, "epsilon": 0.05, "mode": "exact-relu", "layer": 0},
    "energy-bar": {"widths": None, "trials": None, "max_epochs": None, "bins": None, "lr": None},
    "recipe": {"set": {}},
    "import-weights": {},
}
GLOBAL_KEYS = ("seed", "out", "threads")
GLOBAL_ALIASES = {"output_dir": "out", "thread_count": "threads"}
DATA_KEYS = ("target", "domain", "n_samples")


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise UserError(f"config file {path} not found")
    except tomllib.TOMLDecodeError as exc:
        raise UserError(f"{path}: {exc}")


def resolve(args, command):
    """Merge defaults < config file < flags into one dict."""
    cfg = _load_config(args.config)
    unknown = sorted(set(cfg) - {"global", *DEFAULTS})
    if unknown:
        raise UserError(f"{args.config}: unknown section(s) {', '.join(unknown)}")
    allowed = set(DEFAULTS[command]) | set(getattr(args, "_data_defaults", {}) or {})
    section = dict(cfg.get(command, {}))
    if command == "recipe":
        section = {"set": dict(section.get(args.name, {}))}
    bad = sorted(set(section) - allowed)
    if bad:
        raise UserError(f"{args.config}: unknown key(s) in [{command}]: {', '.join(bad)}")
    glob = {GLOBAL_ALIASES.get(k, k): v for k, v in cfg.get("global", {}).items()}
    bad = sorted(set(glob) - set(GLOBAL_KEYS))
    if bad:
        raise UserError(f"{args.config}: unknown key(s) in [global]: {', '.join(bad)}")

    out = copy.deepcopy(DEFAULTS[command])
    out.update(getattr(args, "_data_defaults", {}) or {})
    out.update({"seed": 0, "out": None, "threads": None})
    out.update(glob)
    out.update(section)
    if os.environ.get(OUT_ENV):
        # the environment beats the config file, an explicit --out beats both
        leaf = args.name if command == "recipe" else command
        out["out"] = str(Path(os.environ[OUT_ENV]) / leaf)
    for key in list(out):
        flag = getattr(args, key, None)
        if key == "set":
            for item in args.set:
                if "=" not in item:
                    raise UserError(f"--set expects KEY=VALUE, got {item!r}")
                k, v = item.split("=", 1)
                out["set"][k.strip()] = _toml_value(v.strip())
        elif flag is not None:
            out[key] = flag
    if out["out"] is None:
        leaf = args.name if command == "recipe" else command
        out["out"] = str(Path("runs") / leaf)
    out["out"] = str(out["out"])
    return out


def _manifest(bundle, command, resolved, summary, status="ok"):
    manifest = {"command": command, "config": resolved, "status": status, "summary": summary,
                "outputs": sorted(set(bundle.outputs)), "version": __version__}
    (bundle.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _data(c):
    spec = TargetSpec(c["target"], tuple(c["domain"]), c["n_samples"])
    return generate_regression_data(spec)


def _read_weights_path(c):
    if c["weights"] is not None:
        return Path(c["weights"])
    if sys.stdin is None or sys.stdin.isatty():
        raise UserError("no --weights given and nothing on stdin")
    text = sys.stdin.read().strip().splitlines()
    if not text:
        raise UserError("no --weights given and stdin is empty")
    return Path(text[-1].strip())


def _load(path):
    try:
        return load_params(path)
    except FileNotFoundError as exc:
        raise UserError(f"weights file not found: {exc.filename}")


def _require_config(config, what):
    if config is None:
        raise UserError(f"{what} needs a network config in the weights sidecar (imported weights have none)")
    return config


# ---------------------------------------------------------------------------
# commands


def cmd_train(c):
    widths = tuple(c["widths"])
    act = get_activation(c["activation"])
    if c["init"] == RATE:
        init = InitSpec.rate(c["gamma"], c["gamma_prime"], c["seed"])
    elif c["init"] == FAN_IN:
        init = InitSpec.fan_in(c["beta1"], c["seed"])
    else:
        init = InitSpec.direct(c["beta1"], c["beta2"], c["seed"])
    config = NetworkConfig(widths, act, c["alpha"], init, has_bias=not c["no_bias"])
    if widths[0] != 1 or widths[-1] != 1:
        raise UserError("train fits 1-D regression targets: first and last widths must be 1")
    x, y = _data(c)
    bundle = Bundle(c["out"])
    opt = OptimizerSpec(c["optimizer"], c["lr"], c["batch_size"])
    dropout = DropoutConfig(c["keep_prob"], tuple(range(config.n_hidden)))

    def monitor(params):
        return condensation_report(params, config, x, epsilon=c["epsilon"]).directional_clusters

    params0 = init_parameters(config)
    try:
        trace = train(config, params0, MSE, x, y, opt, dropout, max_epochs=c["max_epochs"],
                      loss_threshold=c["loss_threshold"], monitor=monitor, seed=c["seed"])
    except DivergenceError as exc:
        if exc.trace is not None:
            bundle.trace("trace.jsonl", exc.trace)
        _manifest(bundle, "train", c, {"error": str(exc)}, "diverged")
        raise
    bundle.trace("trace.jsonl", trace)
    bundle.params("params.bin", trace.final_params, config)
    bundle.svg("loss.svg", svg.line_plot_svg([("loss", trace.epochs, trace.losses)], "training loss",
                                             log_y=True, xlabel="epoch"))
    th, am = feature_arrays(trace.final_params)
    static = detect_static(trace.final_params, config, x) if not act.smooth else set()
    mask = np.array([k in static for k in range(th.size)])
    bundle.svg("feature_map.svg", svg.feature_scatter_svg(th, am, mask, title=f"epoch {trace.final_epoch}"))
    summary = {"final_loss": float(trace.losses[-1]), "final_epoch": trace.final_epoch,
               "stop_reason": trace.stop_reason, "directional_clusters": trace.checkpoints[-1].cluster_count}
    _manifest(bundle, "train", c, summary)
    print(bundle.dir / "params.bin")
    return summary


def cmd_metrics(c):
    path = _read_weights_path(c)
    params, config, _ = _load(path)
    bundle = Bundle(c["out"])
    layer = c["layer"]
    if not 0 <= layer < len(params.weights) - 1:
        raise UserError(f"layer {layer} is not a hidden layer")
    do_cos = c["cosine"] or not (c["outputs"] or c["feature_map"])
    summary = {"weights": str(path)}
    if do_cos:
        sim = weight_similarity(params, config, layer)
        bundle.csv("cosine_weights.csv", sim.values)
        if c["heatmap"]:
            bundle.svg("cosine_weights.svg", svg.heatmap_svg(sim.values, "input-weight similarity"))
        x = _data(c)[0] if config is not None and config.input_dim == 1 and config.conv is None else None
        exclude = set()
        if x is not None and not config.activation.smooth:
            exclude = detect_static(params, config, x, layer=layer)
            if len(exclude) >= sim.size:
                exclude = set()
        report = cluster_count(sim, c["epsilon"], exclude)
        summary["clusters"] = {"directional": report.directional_clusters, "axis": report.axis_clusters,
                               "mean_abs_offdiag": report.mean_abs_offdiag, "members": report.members,
                               "static": report.static_set, "excluded": report.excluded}
    if c["outputs"]:
        config = _require_config(config, "--outputs")
        if config.input_dim != 1 or config.conv is not None:
            raise UserError("--outputs on the CLI supports 1-D regression inputs")
        sim = output_similarity(params, config, _data(c)[0], layer)
        bundle.csv("cosine_outputs.csv", sim.values)
        if c["heatmap"]:
            bundle.svg("cosine_outputs.svg", svg.heatmap_svg(sim.values, "layer-output similarity"))
    if c["feature_map"]:
        if params.weights[0].shape[1] != 1:
            raise UserError("feature maps need one-dimensional input weights")
        th, am = feature_arrays(params)
        static = set()
        if config is not None and not config.activation.smooth:
            static = detect_static(params, config, _data(c)[0])
        bundle.csv("feature_map.csv", [[k, th[k], am[k], int(k in static)] for k in range(th.size)],
                   ["index", "theta", "amplitude", "is_static"])
        mask = np.array([k in static for k in range(th.size)])
        bundle.svg("feature_map.svg", svg.feature_scatter_svg(th, am, mask))
    bundle.json("clusters.json", summary.get("clusters", {}))
    _manifest(bundle, "metrics", c, summary)
    return summary


def cmd_phase_sweep(c):
    overrides = {"seed": c["seed"]}
    for key, name in (("grid", "grid"), ("widths", "widths"), ("trials", "trials"), ("lr", "learning_rate"),
                      ("max_epochs", "max_epochs"), ("n_samples", "n_samples")):
        if c[key] is not None:
            overrides[name] = c[key]
    result = run_recipe("phase_sweep", overrides, c["out"], c["threads"])
    for cell in result.summary["cells"]:
        print(f"gamma={cell['gamma']:g} gamma'={cell['gamma_prime']:g} oracle={cell['oracle']} "
              f"verdict={cell['verdict']}")
    return result.summary


def cmd_embed(c):
    params, config, _ = _load(_read_weights_path(c))
    config = _require_config(config, "embed")
    wide, wcfg = split_neuron(params, config, SplitPlan(c["neuron"], c["fraction"], c["layer"]))
    x, y = _data(c)
    diff = float(np.abs(forward(wide, wcfg, x) - forward(params, config, x)).max())
    summary = {"width_before": config.layer_widths[c["layer"] + 1], "width_after": wcfg.layer_widths[c["layer"] + 1],
               "max_abs_output_change": diff}
    if c["hessian"]:
        before = hessian_signature(hessian(params, config, MSE, x, y))
        after = hessian_signature(hessian(wide, wcfg, MSE, x, y))
        summary.update(signature_before=before.as_tuple(), signature_after=after.as_tuple(),
                       gradient_norm_before=gradient_norm(params, config, MSE, x, y),
                       gradient_norm_after=gradient_norm(wide, wcfg, MSE, x, y))
    bundle = Bundle(c["out"])
    bundle.params("embedded.bin", wide, wcfg)
    bundle.json("embed_report.json", summary)
    _manifest(bundle, "embed", c, summary)
    print(bundle.dir / "embedded.bin")
    return summary


def cmd_reduce(c):
    params, config, _ = _load(_read_weights_path(c))
    config = _require_config(config, "reduce")
    x, _ = _data(c)
    exclude = set()
    if not config.activation.smooth:
        exclude = detect_static(params, config, x, layer=c["layer"])
        if len(exclude) >= config.layer_widths[c["layer"] + 1]:
            exclude = set()
    plan = merge_plan_from_clusters(params, config, c["epsilon"], c["mode"], c["layer"], exclude)
    reduced, rcfg, report = merge_neurons(params, config, plan, x)
    bundle = Bundle(c["out"])
    bundle.params("reduced.bin", reduced, rcfg)
    report.write_json(bundle._path("merge_report.json"))
    _manifest(bundle, "reduce", c, report.to_dict())
    print(bundle.dir / "reduced.bin")
    return report.to_dict()


def cmd_energy_bar(c):
    overrides = {"seed": c["seed"]}
    for key, name in (("widths", "widths"), ("trials", "trials"), ("max_epochs", "max_epochs"),
                      ("bins", "bins"), ("lr", "learning_rate")):
        if c[key] is not None:
            overrides[name] = c[key]
    return run_recipe("fig9_energy_bar", overrides, c["out"], c["threads"]).summary


def cmd_recipe(c, name):
    overrides = dict(c["set"])
    overrides.setdefault("seed", c["seed"])
    result = run_recipe(name, overrides, c["out"], c["threads"])
    print(result.manifest_path)
    return result.summary


def cmd_import_weights(args, c):
    w = read_matrix_csv(args.csv)
    b = None
    if args.bias_csv is not None:
        b = read_matrix_csv(args.bias_csv).ravel()
        if b.size != w.shape[0]:
            raise UserError(f"{args.bias_csv}: {b.size} biases for {w.shape[0]} neurons")
    a = read_matrix_csv(args.output_csv) if args.output_csv is not None else np.zeros((1, w.shape[0]))
    if a.shape[1] != w.shape[0]:
        raise UserError(f"{args.output_csv}: {a.shape[1]} columns for {w.shape[0]} neurons")
    params = ParameterSet([w, a], [b, None])
    bundle = Bundle(c["out"])
    path = bundle.params("imported.bin", params, None)
    _manifest(bundle, "import-weights", {**c, "csv": str(args.csv)}, {"neurons": w.shape[0], "inputs": w.shape[1]})
    print(path)
    return {}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USER
        c = resolve(args, args.command)
        if args.command == "train":
            cmd_train(c)
        elif args.command == "metrics":
            cmd_metrics(c)
        elif args.command == "phase-sweep":
            cmd_phase_sweep(c)
        elif args.command == "embed":
            cmd_embed(c)
        elif args.command == "reduce":
            cmd_reduce(c)
        elif args.command == "energy-bar":
            cmd_energy_bar(c)
        elif args.command == "recipe":
            cmd_recipe(c, args.name)
        elif args.command == "import-weights":
            cmd_import_weights(args, c)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc} (partial artifacts kept)", file=sys.stderr)
        return EXIT_NUMERIC
    except MergeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (UserError, RecipeError, IdxFormatError, FileNotFoundError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
