"""Width-changing transforms: neuron splitting, condensation-based merging,
and Hessian-signature bookkeeping at critical points."""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .activations import RELU, get_activation
from .data import TargetSpec, generate_regression_data
from .metrics import DEFAULT_EPSILON, cluster_count, cosine_matrix
from .nn import (
    MSE,
    DivergenceError,
    InitSpec,
    NetworkConfig,
    ParameterSet,
    _as_batch,
    forward,
    hessian,
    hidden_outputs,
    init_parameters,
    loss_and_gradient,
)
from .optim import GD, OptimizerSpec, train
from .parallel import run_jobs

EXACT_RELU = "exact-relu"
APPROX = "approx"


class MergeError(ValueError):
    pass


@dataclass(frozen=True)
class SplitPlan:
    neuron_index: int
    fraction: float = 0.5
    layer: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("split fraction must lie in [0, 1]")

    @property
    def fractions(self):
        return self.fraction, 1.0 - self.fraction


@dataclass
class MergePlan:
    clusters: List[List[int]]
    mode: str = EXACT_RELU
    layer: int = 0

    def __post_init__(self):
        if self.mode not in (EXACT_RELU, APPROX):
            raise ValueError(f"unknown merge mode {self.mode!r}")
        seen = set()
        for c in self.clusters:
            if not c:
                raise ValueError("empty cluster")
            for k in c:
                if k in seen:
                    raise ValueError(f"neuron {k} appears in more than one cluster")
                seen.add(k)


@dataclass
class MergeReport:
    mode: str
    width_before: int
    width_after: int
    max_abs_change: float
    mean_abs_change: float
    clusters: List[List[int]] = field(default_factory=list)

    def to_dict(self):
        return {
            "mode": self.mode,
            "width_before": self.width_before,
            "width_after": self.width_after,
            "max_abs_change": self.max_abs_change,
            "mean_abs_change": self.mean_abs_change,
            "clusters": self.clusters,
        }

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class HessianSignature:
    n_positive: int
    n_zero: int
    n_negative: int
    zero_threshold: float
    eigenvalues: tuple = field(default=(), compare=False, repr=False)

    def as_tuple(self):
        return self.n_positive, self.n_zero, self.n_negative

    def dominates(self, other: "HessianSignature") -> bool:
        """Every count at least the other's."""
        return all(a >= b for a, b in zip(self.as_tuple(), other.as_tuple()))


def split_neuron(params: ParameterSet, config: NetworkConfig, plan: SplitPlan):
    """Duplicate one hidden neuron; its outgoing weights are shared as (lam, 1-lam).

    The copy is appended as the last neuron of the layer.  Returns (params, config).
    """
    if config.conv is not None:
        raise ValueError("splitting is defined for dense layers")
    layer, k = plan.layer, plan.neuron_index
    if not 0 <= layer < config.n_hidden:
        raise ValueError(f"layer {layer} is not a hidden layer")
    width = config.layer_widths[layer + 1]
    if not 0 <= k < width:
        raise IndexError(f"neuron {k} out of range for width {width}")
    lam, rest = plan.fractions
    out = params.copy()
    out.weights[layer] = np.vstack([params.weights[layer], params.weights[layer][k:k + 1]])
    if params.biases[layer] is not None:
        out.biases[layer] = np.append(params.biases[layer], params.biases[layer][k])
    nxt = params.weights[layer + 1]
    col = nxt[:, k:k + 1]
    new_next = np.hstack([nxt, rest * col])
    new_next[:, k] = lam * nxt[:, k]
    out.weights[layer + 1] = new_next
    return out, config.with_width(layer, width + 1)


def _layer_inputs(params, config, x, layer):
    x = _as_batch(config, x)
    if layer == 0:
        return x
    return hidden_outputs(params, config, x, layer - 1)


def merge_neurons(params: ParameterSet, config: NetworkConfig, plan: MergePlan, probe_x,
                  exact_tol: float = 1e-10):
    """Replace each cluster by one neuron.  Returns (params, config, MergeReport).

    exact-relu: the merged neuron points along the cluster's common unit direction
    u_hat and carries outgoing weight sum_k a_k |u_k| (positive homogeneity).
    approx: direction is the amplitude-weighted mean of unit directions (sign-aligned
    for odd activations), amplitude the |a|-weighted mean amplitude, and the outgoing
    weight sum_k a_k c_k with c_k the least-squares scale of neuron k's output onto
    the representative's output over ``probe_x``.
    """
    if config.conv is not None:
        raise ValueError("merging is defined for dense layers")
    layer = plan.layer
    act = config.activation
    if plan.mode == EXACT_RELU and act.kind != RELU:
        raise MergeError(f"exact-relu merging needs ReLU activation, network uses {act.label}; "
                         "use approx mode")
    w = params.weights[layer]
    b = params.biases[layer]
    u = np.hstack([w, b[:, None]]) if b is not None else w.copy()
    nxt = params.weights[layer + 1]
    width = w.shape[0]
    probe_in = _layer_inputs(params, config, probe_x, layer)
    probe_ext = np.hstack([probe_in, np.ones((probe_in.shape[0], 1))]) if b is not None else probe_in

    clustered = {k for c in plan.clusters for k in c}
    if any(not 0 <= k < width for k in clustered):
        raise IndexError("cluster member out of range")
    groups = [sorted(c) for c in plan.clusters] + [[k] for k in range(width) if k not in clustered]
    groups.sort(key=lambda g: g[0])

    new_u, new_out = [], []
    for group in groups:
        if len(group) == 1:
            new_u.append(u[group[0]])
            new_out.append(nxt[:, group[0]])
            continue
        vecs = u[group]
        amps = np.linalg.norm(vecs, axis=1)
        live = amps > 0
        if plan.mode == EXACT_RELU:
            if not np.any(live):
                continue  # all-zero neurons contribute nothing
            units = vecs[live] / amps[live, None]
            sim = units @ units.T
            if np.min(sim) < 1.0 - exact_tol:
                raise MergeError(f"cluster {group} is not exactly aligned (min D = {np.min(sim):.12g}); "
                                 "exact-relu needs D = 1 within tolerance, use approx mode")
            direction = units.mean(axis=0)
            direction /= np.linalg.norm(direction)
            new_u.append(direction)
            new_out.append(nxt[:, group] @ amps)
        else:
            u_rep, a_rep = _approx_representative(act, vecs, amps, nxt[:, group], probe_ext)
            if u_rep is None:
                continue
            new_u.append(u_rep)
            new_out.append(a_rep)

    new_u = np.array(new_u)
    out = params.copy()
    if b is not None:
        out.weights[layer] = new_u[:, :-1].copy()
        out.biases[layer] = new_u[:, -1].copy()
    else:
        out.weights[layer] = new_u
    out.weights[layer + 1] = np.array(new_out).T.reshape(nxt.shape[0], -1)
    new_config = config.with_width(layer, new_u.shape[0])

    before = forward(params, config, probe_x)
    after = forward(out, new_config, probe_x)
    diff = np.abs(after - before)
    report = MergeReport(plan.mode, width, new_u.shape[0], float(diff.max()), float(diff.mean()),
                         [list(g) for g in groups if len(g) > 1])
    return out, new_config, report


def _approx_representative(act, vecs, amps, out_w, probe_ext):
    live = amps > 0
    if not np.any(live):
        return None, None
    vecs, amps, out_w = vecs[live], amps[live], out_w[:, live]
    units = vecs / amps[:, None]
    ref = units[np.argmax(amps)]
    signs = np.ones(len(units))
    if act.is_odd:
        # sigma(-z) = -sigma(z): flipping a neuron's input and output signs is exact
        signs = np.where(units @ ref < 0, -1.0, 1.0)
    units = units * signs[:, None]
    out_w = out_w * signs[None, :]
    direction = (amps[:, None] * units).sum(axis=0)
    direction /= np.linalg.norm(direction)
    weight = np.abs(out_w).sum(axis=0)
    amplitude = float(np.dot(weight, amps) / weight.sum()) if weight.sum() > 0 else float(amps.mean())
    u_rep = amplitude * direction
    s_rep = act(probe_ext @ u_rep)
    denom = float(s_rep @ s_rep)
    if denom == 0.0:
        scales = np.ones(len(units))
    else:
        s_each = act(probe_ext @ (units * amps[:, None]).T)
        scales = (s_rep @ s_each) / denom
    return u_rep, out_w @ scales


def merge_plan_from_clusters(params: ParameterSet, config: NetworkConfig, epsilon: float = DEFAULT_EPSILON,
                             mode: str = EXACT_RELU, layer: int = 0, exclude=()) -> MergePlan:
    """Build a MergePlan from the cluster report of a hidden layer's input weights.

    Odd activations merge by axis clusters in approx mode; everything else by direction.
    """
    vecs = params.neuron_vectors(layer, include_bias=True)
    sim = cosine_matrix(vecs)
    report = cluster_count(sim, epsilon, exclude)
    groups = report.axis_members if (mode == APPROX and config.activation.is_odd) else report.members
    return MergePlan([g for g in groups if len(g) > 1], mode, layer)


def hessian_signature(H, zero_threshold: float = 1e-6, symmetry_tol: float = 1e-9) -> HessianSignature:
    """Count eigenvalues above tau, within +-tau and below -tau, tau = threshold*max(1, max|lambda|)."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("Hessian must be square")
    if not zero_threshold > 0:
        raise ValueError("zero_threshold must be positive")
    scale = max(1.0, float(np.abs(H).max())) if H.size else 1.0
    if np.abs(H - H.T).max(initial=0.0) > symmetry_tol * scale:
        raise ValueError("Hessian is not symmetric")
    eig = np.linalg.eigvalsh(0.5 * (H + H.T))
    tau = zero_threshold * max(1.0, float(np.abs(eig).max(initial=0.0)))
    return HessianSignature(
        n_positive=int(np.sum(eig > tau)),
        n_zero=int(np.sum(np.abs(eig) <= tau)),
        n_negative=int(np.sum(eig < -tau)),
        zero_threshold=zero_threshold,
        eigenvalues=tuple(float(e) for e in eig),
    )


def gradient_norm(params, config, loss, x, y) -> float:
    return float(np.linalg.norm(loss_and_gradient(params, config, loss, x, y)[1].flatten()))


def refine_critical_point(params: ParameterSet, config: NetworkConfig, loss: str, x, y,
                          tol: float = 1e-10, max_iter: int = 500, damping: float = 1e-3):
    """Levenberg-Marquardt descent on the full-batch loss until the gradient norm drops below ``tol``.

    Each step solves (H + s I) d = g with s = max(0, -lambda_min) + mu, so it is always a
    descent direction; mu shrinks on success and grows on failure.  Returns (params,
    gradient norm).  Meant for the small nets used in Hessian studies.
    """
    params = params.copy()
    value, g = loss_and_gradient(params, config, loss, x, y)
    g = g.flatten()
    g_norm = float(np.linalg.norm(g))
    mu = damping
    for _ in range(max_iter):
        if g_norm < tol:
            break
        eig, vec = np.linalg.eigh(hessian(params, config, loss, x, y))
        theta = params.flatten()
        improved = False
        for _ in range(40):
            shift = max(0.0, -float(eig[0])) + mu
            step = vec @ ((vec.T @ g) / (eig + shift))
            cand = params.unflatten(theta - step)
            try:
                cand_value, cand_g = loss_and_gradient(cand, config, loss, x, y)
            except ArithmeticError:
                mu *= 10.0
                continue
            cand_g = cand_g.flatten()
            cand_norm = float(np.linalg.norm(cand_g))
            flat = cand_value <= value + 1e-14 * max(abs(value), 1e-300)
            if cand_value < value or (flat and cand_norm < g_norm):
                params, value, g, g_norm = cand, cand_value, cand_g, cand_norm
                mu = max(mu / 10.0, 1e-15)
                improved = True
                break
            mu *= 10.0
        if not improved:
            break
    return params, g_norm


@dataclass(frozen=True)
class EnergyRecipe:
    """Two-layer ReLU regression run whose per-epoch losses feed the histogram."""

    activation: str = "relu"
    target: TargetSpec = TargetSpec()
    learning_rate: float = 0.1
    init_power: float = 4.0  # weights ~ N(0, m^-init_power)
    max_epochs: int = 10_000

    def to_dict(self):
        return {"activation": self.activation, "target": self.target.to_dict(),
                "learning_rate": self.learning_rate, "init_power": self.init_power,
                "max_epochs": self.max_epochs}


@dataclass
class LossHistogram:
    widths: List[int]
    bin_edges: np.ndarray
    table: np.ndarray  # (len(widths), bins); each row sums to 1
    excluded: dict = field(default_factory=dict)  # width -> seeds that diverged

    def rows(self):
        """(width, bin_low, bin_high, frequency) records."""
        out = []
        for i, m in enumerate(self.widths):
            for j in range(self.table.shape[1]):
                out.append([m, self.bin_edges[j], self.bin_edges[j + 1], self.table[i, j]])
        return out

    def bright_bins(self, quantile: float = 0.9):
        """Per width, bins whose frequency exceeds that row's ``quantile``."""
        return [set(np.nonzero(row > np.quantile(row, quantile))[0].tolist()) for row in self.table]

    def min_bins(self):
        """Per width, the lowest occupied bin."""
        return [int(np.nonzero(row > 0)[0][0]) for row in self.table]


def energy_trial(width: int, seed: int, recipe: EnergyRecipe):
    """Per-epoch losses of one run; None when it diverges."""
    std = width ** (-recipe.init_power / 2.0)
    config = NetworkConfig((1, width, 1), get_activation(recipe.activation), 1.0,
                           InitSpec.direct(std, std, seed=seed))
    x, y = generate_regression_data(recipe.target)
    try:
        trace = train(config, init_parameters(config), MSE, x, y, OptimizerSpec(GD, recipe.learning_rate),
                      schedule=[0, recipe.max_epochs], max_epochs=recipe.max_epochs, record_losses=True)
    except DivergenceError:
        return None
    return trace.epoch_losses


def histogram_from_losses(widths, losses_by_width, bins=40, bin_edges=None) -> LossHistogram:
    """Bin epoch losses into shared log-spaced bins; each width's row is normalised to 1.

    ``losses_by_width[i]`` is a list of per-trial loss arrays (None for diverged trials).
    """
    kept = []
    excluded = {}
    for m, runs in zip(widths, losses_by_width):
        good = [np.asarray(r, dtype=np.float64) for r in runs if r is not None]
        bad = [i for i, r in enumerate(runs) if r is None]
        if bad:
            excluded[m] = bad
        if not good:
            raise ValueError(f"every trial diverged at width {m}")
        kept.append(np.concatenate(good))
    if bin_edges is None:
        everything = np.concatenate(kept)
        positive = everything[everything > 0]
        lo = positive.min() if positive.size else 1e-300
        hi = everything.max()
        if hi <= lo:
            lo, hi = lo / 2.0, lo * 2.0
        bin_edges = np.logspace(np.log10(lo), np.log10(hi), bins + 1)
        bin_edges[0], bin_edges[-1] = lo, hi
    bin_edges = np.asarray(bin_edges, dtype=np.float64)
    nb = bin_edges.size - 1
    table = np.zeros((len(widths), nb))
    for i, vals in enumerate(kept):
        idx = np.clip(np.searchsorted(bin_edges, vals, side="right") - 1, 0, nb - 1)
        counts = np.bincount(idx, minlength=nb).astype(np.float64)
        table[i] = counts / counts.sum()
    return LossHistogram(list(widths), bin_edges, table, excluded)


def loss_histogram(widths, trials: int, recipe: EnergyRecipe = EnergyRecipe(), bins=40, workers=None,
                   base_seed: int = 0) -> LossHistogram:
    """Train ``trials`` seeds per width and histogram every epoch's loss."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    widths = list(widths)
    jobs = [(m, base_seed + s, recipe) for m in widths for s in range(trials)]
    results = run_jobs(energy_trial, jobs, workers)
    grouped = [results[i * trials:(i + 1) * trials] for i in range(len(widths))]
    return histogram_from_losses(widths, grouped, bins=bins)
