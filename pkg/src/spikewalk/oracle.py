"""Non-spiking Monte-Carlo reference for the same walk processes.

Everything here samples the target stochastic process directly (categorical
steps for independent walkers, multinomial redistribution for densities) so
the circuit implementations can be checked against an independent pathway.
Also provides exact step-distribution convolution, analytic moments, and a
chi-square goodness-of-fit helper.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaincc


@dataclass(frozen=True)
class WalkTrace:
    """Positions of one walker, one row per step (step 0 = origin)."""

    walker_id: int
    positions: np.ndarray  # shape (steps + 1, dims), integer

    def displacement(self) -> np.ndarray:
        return self.positions[-1] - self.positions[0]


@dataclass(frozen=True)
class DensitySeries:
    """Per-step per-node walker counts, row 0 = initial distribution."""

    counts: np.ndarray  # shape (steps + 1, nodes), integer

    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)


@dataclass(frozen=True)
class GofResult:
    statistic: float
    degrees_of_freedom: int
    p_value: float


def oracle_particle_walk(
    seed: int,
    dims: int,
    policy: Sequence[tuple[float, float]],
    steps: int,
    walkers: int,
) -> list[WalkTrace]:
    """K independent lattice walks sampled directly from the step law.

    policy gives (p_neg, p_pos) per dimension; the stay probability is the
    remainder.  Sampling is vectorised over walkers and steps, which keeps
    this pathway structurally different from the circuit controller's
    per-step scalar draws.
    """
    if len(policy) != dims:
        raise ValueError("policy must provide (p_neg, p_pos) per dimension")
    for p_neg, p_pos in policy:
        _check_policy(p_neg, p_pos)
    rng = np.random.default_rng(seed)
    moves = np.zeros((walkers, steps, dims), dtype=np.int64)
    for d, (p_neg, p_pos) in enumerate(policy):
        u = rng.random((walkers, steps))
        moves[:, :, d] = np.where(u < p_neg, -1, np.where(u < p_neg + p_pos, 1, 0))
    positions = np.zeros((walkers, steps + 1, dims), dtype=np.int64)
    positions[:, 1:, :] = np.cumsum(moves, axis=1)
    return [WalkTrace(w, positions[w]) for w in range(walkers)]


def _check_policy(p_neg: float, p_pos: float) -> None:
    if not (0.0 <= p_neg <= 1.0 and 0.0 <= p_pos <= 1.0 and p_neg + p_pos <= 1.0):
        raise ValueError(f"invalid move probabilities ({p_neg}, {p_pos})")


def oracle_density_walk(graph, counts: Sequence[int], steps: int, seed: int) -> DensitySeries:
    """Multinomial redistribution of node counts along the transition rows."""
    n = graph.n_nodes
    state = np.asarray(counts, dtype=np.int64)
    if state.shape != (n,) or (state < 0).any():
        raise ValueError("counts must be nonnegative and match the node count")
    rng = np.random.default_rng(seed)
    rows = [
        (np.array([t for t, _ in row], dtype=np.int64), np.array([p for _, p in row]))
        for row in graph.rows
    ]
    out = np.zeros((steps + 1, n), dtype=np.int64)
    out[0] = state
    for t in range(steps):
        nxt = np.zeros(n, dtype=np.int64)
        cur = out[t]
        for i in np.nonzero(cur)[0]:
            targets, probs = rows[i]
            nxt[targets] += rng.multinomial(cur[i], probs)
        out[t + 1] = nxt
    return DensitySeries(out)


def density_expected_counts(graph, counts: Sequence[int], steps: int) -> np.ndarray:
    """Exact expected per-node counts after `steps` transitions."""
    n = graph.n_nodes
    state = np.asarray(counts, dtype=np.float64)
    matrix = graph.matrix()
    for _ in range(steps):
        state = state @ matrix
    return state


def displacement_pmf(p_neg: float, p_pos: float, steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact distribution of the one-dimensional displacement after T steps.

    Returns (support, probabilities) with support -T..T, computed by
    convolving the single-step law; this is the enumeration oracle used for
    chi-square comparisons against sampled walks.
    """
    _check_policy(p_neg, p_pos)
    step = np.array([p_neg, 1.0 - p_neg - p_pos, p_pos])
    pmf = np.array([1.0])
    for _ in range(steps):
        pmf = np.convolve(pmf, step)
    support = np.arange(-steps, steps + 1)
    return support, pmf


def chi_square_gof(observed: Sequence[float], expected: Sequence[float]) -> GofResult:
    """Pearson goodness-of-fit with the usual merge of sparse bins.

    Bins are accumulated in order until each merged bin has expected count
    >= 5.  Expected values are rescaled to the observed total when the sums
    differ.  The p-value is the upper tail of the chi-square distribution,
    evaluated through the regularized incomplete gamma function.
    """
    obs = np.asarray(observed, dtype=np.float64)
    exp = np.asarray(expected, dtype=np.float64)
    if obs.shape != exp.shape or obs.ndim != 1:
        raise ValueError("observed and expected must be 1-d and the same length")
    if (exp <= 0).any():
        raise ValueError("expected counts must be positive")
    total_obs = obs.sum()
    if total_obs == 0:
        raise ValueError("observed counts are all zero")
    exp = exp * (total_obs / exp.sum())

    merged_obs: list[float] = []
    merged_exp: list[float] = []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= 5.0:
            merged_obs.append(acc_o)
            merged_exp.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0.0:
        if merged_obs:
            merged_obs[-1] += acc_o
            merged_exp[-1] += acc_e
        else:
            merged_obs.append(acc_o)
            merged_exp.append(acc_e)
    mo = np.array(merged_obs)
    me = np.array(merged_exp)
    if len(mo) < 2:
        raise ValueError("not enough well-populated bins for a chi-square test")
    statistic = float(((mo - me) ** 2 / me).sum())
    dof = len(mo) - 1
    p_value = float(gammaincc(dof / 2.0, statistic / 2.0))
    return GofResult(statistic, dof, p_value)


def displacement_stats(traces: Sequence[WalkTrace]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-dimension sample mean, variance, and standard error of the final displacement."""
    if len(traces) == 0:
        raise ValueError("no traces given")
    disp = np.stack([t.displacement() for t in traces]).astype(np.float64)
    mean = disp.mean(axis=0)
    variance = disp.var(axis=0, ddof=1) if len(traces) > 1 else np.zeros(disp.shape[1])
    stderr = np.sqrt(variance / len(traces))
    return mean, variance, stderr


def analytic_variance(p_neg: float, p_pos: float, steps: int) -> float:
    """Variance of the T-step displacement: T * (p+ + p- - (p+ - p-)^2)."""
    _check_policy(p_neg, p_pos)
    return steps * (p_pos + p_neg - (p_pos - p_neg) ** 2)
