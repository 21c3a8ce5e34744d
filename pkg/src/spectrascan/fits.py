"""Regression and rank-statistics kernel.

Ordinary least squares, log-log power-law fits, Spearman correlation with a
seeded permutation p-value, and the depth scaling-law report built on top of
them. Sample sizes here are small (often 3-12 points), which is why the
p-value comes from an exact-style permutation test rather than an asymptotic
approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

__all__ = [
    "LineFit",
    "PowerFit",
    "RankCorr",
    "ScalingReport",
    "FitError",
    "DegenerateX",
    "NonPositiveInput",
    "TooFewPoints",
    "TooFewModels",
    "ols",
    "power_fit",
    "midranks",
    "spearman",
    "fit_scaling_laws",
]


class FitError(Exception):
    pass


class DegenerateX(FitError):
    pass


class NonPositiveInput(FitError):
    pass


class TooFewPoints(FitError):
    pass


class TooFewModels(FitError):
    pass


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    r2: float
    n: int


@dataclass(frozen=True)
class PowerFit:
    """y = prefactor * x**exponent, fitted by OLS on (ln x, ln y).

    r2 is reported in log space, the space of the fit.
    """

    exponent: float
    prefactor: float
    r2: float
    n: int


@dataclass(frozen=True)
class RankCorr:
    rho: float
    p_value: float
    n: int
    permutations: int
    seed: int


@dataclass(frozen=True)
class ScalingReport:
    delta_alpha_fit: PowerFit
    alpha_max_fit: PowerFit
    peak_position_fit: LineFit
    wave_velocity_summary: dict

    def to_dict(self) -> dict:
        return {
            "delta_alpha_fit": asdict(self.delta_alpha_fit),
            "alpha_max_fit": asdict(self.alpha_max_fit),
            "peak_position_fit": asdict(self.peak_position_fit),
            "wave_velocity_summary": dict(self.wave_velocity_summary),
        }


def ols(x, y) -> LineFit:
    """Simple least squares of y on x with R^2 (1 when both SS terms vanish)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise TooFewPoints(f"need matching n >= 2, got {x.size} and {y.size}")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0:
        raise DegenerateX("all x values equal")
    slope = float(np.sum((x - xm) * (y - ym))) / sxx
    intercept = ym - slope * xm
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return LineFit(slope=slope, intercept=float(intercept), r2=r2, n=int(x.size))


def power_fit(x, y) -> PowerFit:
    """Fit y = c * x**e by least squares on logarithms."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(x <= 0.0) or np.any(y <= 0.0):
        raise NonPositiveInput("power-law fit needs strictly positive x and y")
    line = ols(np.log(x), np.log(y))
    return PowerFit(
        exponent=line.slope, prefactor=math.exp(line.intercept), r2=line.r2, n=line.n
    )


def midranks(v) -> np.ndarray:
    """Tie-averaged (mid) ranks, 1-based."""
    v = np.asarray(v, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _rank_pearson(rx: np.ndarray, ry: np.ndarray) -> float:
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    denom = math.sqrt(float(np.sum(dx**2)) * float(np.sum(dy**2)))
    if denom == 0.0:
        return 0.0  # zero-variance ranks: no monotone association
    return float(np.sum(dx * dy)) / denom


def spearman(x, y, permutations: int = 100_000, seed: int = 0) -> RankCorr:
    """Spearman rho on mid-ranks with a two-sided permutation p-value.

    p = (1 + #{|rho_perm| >= |rho|}) / (permutations + 1), add-one smoothed
    so p stays strictly positive. Deterministic for a fixed seed.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 3:
        raise TooFewPoints(f"need matching n >= 3, got {x.size} and {y.size}")
    rx = midranks(x)
    ry = midranks(y)
    rho = _rank_pearson(rx, ry)

    rng = np.random.default_rng(seed)
    dx = rx - rx.mean()
    sx = math.sqrt(float(np.sum(dx**2)))
    dy = ry - ry.mean()
    sy = math.sqrt(float(np.sum(dy**2)))
    if sx == 0.0 or sy == 0.0:
        return RankCorr(rho=rho, p_value=1.0, n=int(x.size),
                        permutations=permutations, seed=seed)

    # vectorized permutations in blocks: rho_perm = dx . shuffle(dy) / (sx*sy)
    count = 0
    target = abs(rho) - 1e-12  # guard against roundoff on exact ties
    remaining = permutations
    block = 20_000
    while remaining > 0:
        b = min(block, remaining)
        perm = rng.permuted(np.broadcast_to(dy, (b, dy.size)).copy(), axis=1)
        rhos = perm @ dx / (sx * sy)
        count += int(np.sum(np.abs(rhos) >= target))
        remaining -= b
    p = (count + 1) / (permutations + 1)
    return RankCorr(rho=rho, p_value=float(p), n=int(x.size),
                    permutations=permutations, seed=seed)


def fit_scaling_laws(summaries) -> ScalingReport:
    """Fit depth scaling laws over per-model summary rows.

    Each row is (L, delta_alpha, alpha_max, peak_ratio, wave_velocity);
    wave_velocity may be None. Spread and peak alpha are fitted as power
    laws of depth, the peak position as a line.
    """
    rows = list(summaries)
    if len(rows) < 3:
        raise TooFewModels(f"need >= 3 models, got {len(rows)}")
    L = np.array([r[0] for r in rows], dtype=np.float64)
    dalpha = np.array([r[1] for r in rows], dtype=np.float64)
    amax = np.array([r[2] for r in rows], dtype=np.float64)
    peak = np.array([r[3] for r in rows], dtype=np.float64)
    vel = [r[4] for r in rows]

    vels = np.array([v for v in vel if v is not None], dtype=np.float64)
    vel_summary = {
        "n": int(vels.size),
        "mean": float(vels.mean()) if vels.size else None,
        "min": float(vels.min()) if vels.size else None,
        "max": float(vels.max()) if vels.size else None,
    }
    return ScalingReport(
        delta_alpha_fit=power_fit(L, dalpha),
        alpha_max_fit=power_fit(L, amax),
        peak_position_fit=ols(L, peak),
        wave_velocity_summary=vel_summary,
    )
