"""Linear vs condensed regime: the (gamma, gamma') oracle and the RD-vs-width sweep."""

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .activations import get_activation
from .data import TANH_TARGET, TargetSpec, generate_regression_data
from .nn import MSE, DivergenceError, InitSpec, NetworkConfig, hidden_outputs, init_parameters
from .optim import GD, OptimizerSpec, log_schedule, train
from .parallel import run_jobs

LINEAR = "Linear"
CONDENSED = "Condensed"
BOUNDARY = "Boundary"

CONSISTENT_LINEAR = "ConsistentLinear"
CONSISTENT_CONDENSED = "ConsistentCondensed"
INCONCLUSIVE = "Inconclusive"

LINEAR_CUT = 0.1
CONDENSED_CUT = 1.0


@dataclass(frozen=True)
class RegimeCoords:
    gamma: float
    gamma_prime: float

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and math.isfinite(self.gamma_prime)):
            raise ValueError("regime coordinates must be finite")

    def resolve(self, width):
        """(beta1, beta2) with alpha = 1."""
        return InitSpec.rate(self.gamma, self.gamma_prime).resolve(width)


def coords_from_scales(beta1, beta2, alpha, width) -> RegimeCoords:
    """Finite-width reading of gamma = -log(b1 b2 / alpha)/log m, gamma' = -log(b1/b2)/log m."""
    lm = math.log(width)
    return RegimeCoords(-math.log(beta1 * beta2 / alpha) / lm, -math.log(beta1 / beta2) / lm)


def classify_regime(coords: RegimeCoords) -> str:
    g, gp = coords.gamma, coords.gamma_prime
    if g < 1 or gp > g - 1:
        return LINEAR
    if g > 1 and gp < g - 1:
        return CONDENSED
    return BOUNDARY


@dataclass(frozen=True)
class SweepRecipe:
    """How each (cell, width, seed) job trains.

    GD step size is ``min(learning_rate, lr_safety / lambda_max)`` where lambda_max is the
    top eigenvalue of the initial Gauss-Newton matrix (2/n) J J^T; large-init cells
    would otherwise diverge at wide widths.
    """

    activation: str = "tanh"
    target: TargetSpec = TargetSpec(TANH_TARGET, (-15.0, 15.0), 200)
    learning_rate: float = 0.03
    lr_safety: float = 1.0
    max_epochs: int = 3000
    loss_threshold: Optional[float] = 1e-5

    def to_dict(self):
        return {
            "activation": self.activation,
            "target": self.target.to_dict(),
            "learning_rate": self.learning_rate,
            "lr_safety": self.lr_safety,
            "max_epochs": self.max_epochs,
            "loss_threshold": self.loss_threshold,
        }


@dataclass
class PhaseCell:
    coords: RegimeCoords
    oracle: str
    empirical: List[tuple] = field(default_factory=list)  # (width, median sup_RD)
    verdict: str = INCONCLUSIVE
    runs: List[dict] = field(default_factory=list)
    reason: str = ""


def initial_kernel_scale(params, config, x) -> float:
    """Top eigenvalue of (2/n) J J^T at ``params`` for a two-layer, single-output net."""
    n = x.shape[0]
    h = hidden_outputs(params, config, x)  # (n, m)
    w, b = params.weights[0], params.biases[0]
    z = x @ w.T + (b if b is not None else 0.0)
    dsig = config.activation.deriv(z)
    a = params.weights[-1][0]
    xt = np.hstack([x, np.ones((n, 1))]) if b is not None else x
    alpha = config.scaling_alpha
    ja = h / alpha
    g = dsig * a / alpha  # (n, m)
    k = ja @ ja.T + (g @ g.T) * (xt @ xt.T)
    return float(2.0 / n * np.linalg.eigvalsh(k)[-1])


def run_cell_job(coords: RegimeCoords, width: int, seed: int, recipe: SweepRecipe):
    """Train one (cell, width, seed) job; returns a result dict with sup_RD."""
    init = InitSpec.rate(coords.gamma, coords.gamma_prime, seed=seed)
    config = NetworkConfig((1, width, 1), get_activation(recipe.activation), 1.0, init)
    x, y = generate_regression_data(recipe.target)
    params = init_parameters(config)
    if recipe.learning_rate == 0.0:
        lr = 0.0
    else:
        lam = initial_kernel_scale(params, config, x)
        lr = min(recipe.learning_rate, recipe.lr_safety / lam) if lam > 0 else recipe.learning_rate
    result = {"gamma": coords.gamma, "gamma_prime": coords.gamma_prime, "m": width, "seed": seed,
              "learning_rate": lr}
    try:
        trace = train(config, params, MSE, x, y, OptimizerSpec(GD, lr),
                      schedule=log_schedule(recipe.max_epochs), max_epochs=recipe.max_epochs,
                      loss_threshold=recipe.loss_threshold)
    except DivergenceError as exc:
        rds = exc.trace.rds if exc.trace is not None and exc.trace.checkpoints else np.array([np.nan])
        result.update(sup_rd=float(np.nanmax(rds)), final_loss=float("nan"), epochs=-1, diverged=True)
        return result
    result.update(sup_rd=float(trace.rds.max()), final_loss=float(trace.checkpoints[-1].loss),
                  epochs=trace.final_epoch, diverged=False)
    return result


def judge(empirical, linear_cut=LINEAR_CUT, condensed_cut=CONDENSED_CUT):
    """Verdict from (width, sup_RD) pairs sorted by width."""
    sups = [s for _, s in empirical]
    if any(not math.isfinite(s) for s in sups):
        return INCONCLUSIVE
    decreasing = all(b <= a for a, b in zip(sups, sups[1:]))
    increasing = all(b > a for a, b in zip(sups, sups[1:]))
    if decreasing and sups[-1] < linear_cut:
        return CONSISTENT_LINEAR
    if increasing and sups[-1] > condensed_cut:
        return CONSISTENT_CONDENSED
    return INCONCLUSIVE


def sweep_phase(grid, widths, trials: int = 3, recipe: SweepRecipe = SweepRecipe(), workers=None,
                linear_cut=LINEAR_CUT, condensed_cut=CONDENSED_CUT, base_seed: int = 0) -> List[PhaseCell]:
    """Train every (cell, width, seed); median sup_RD per width; verdict per cell."""
    widths = list(widths)
    if len(widths) < 3 or any(b <= a for a, b in zip(widths, widths[1:])):
        raise ValueError("widths must be strictly increasing with at least 3 values")
    grid = [c if isinstance(c, RegimeCoords) else RegimeCoords(*c) for c in grid]
    jobs = [(c, m, base_seed + s, recipe) for c in grid for m in widths for s in range(trials)]
    results = run_jobs(run_cell_job, jobs, workers)
    cells = []
    pos = 0
    for c in grid:
        cell = PhaseCell(c, classify_regime(c))
        for m in widths:
            runs = results[pos:pos + trials]
            pos += trials
            cell.runs.extend(runs)
            if any(r["diverged"] for r in runs):
                cell.reason = f"training diverged at m={m}"
            cell.empirical.append((m, float(np.median([r["sup_rd"] for r in runs]))))
        cell.verdict = INCONCLUSIVE if cell.reason else judge(cell.empirical, linear_cut, condensed_cut)
        cells.append(cell)
    return cells


def agrees(cell: PhaseCell) -> bool:
    return (cell.oracle, cell.verdict) in ((LINEAR, CONSISTENT_LINEAR), (CONDENSED, CONSISTENT_CONDENSED))


def sweep_rows(cells):
    """CSV rows: gamma, gamma_prime, m, seed, sup_RD, oracle, verdict."""
    rows = []
    for cell in cells:
        for r in cell.runs:
            rows.append([cell.coords.gamma, cell.coords.gamma_prime, r["m"], r["seed"], r["sup_rd"],
                         cell.oracle, cell.verdict])
    return rows


def with_recipe(recipe: SweepRecipe, **overrides) -> SweepRecipe:
    return replace(recipe, **overrides)
