"""Per-matrix spectral metrics: singular values, stable rank, power-law
tail exponent, spectral entropy, and spectral gap.

All metrics depend only on the singular values, so they are invariant
under transposition, positive rescaling (the tail exponent's intercept
shifts, the slope does not), and orthogonal rotations of either side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor_io import ParamCoord, TensorView

__all__ = [
    "SpectrumVec",
    "AlphaFit",
    "SpectralRecord",
    "SpectraError",
    "ConvergenceFailure",
    "ZeroMatrix",
    "SingleValue",
    "DegenerateGap",
    "ZeroInFitRange",
    "TooFewValues",
    "singular_values",
    "stable_rank",
    "fit_alpha",
    "spectral_entropy",
    "spectral_gap",
    "analyze_matrix",
]


class SpectraError(Exception):
    pass


class ConvergenceFailure(SpectraError):
    pass


class ZeroMatrix(SpectraError):
    pass


class SingleValue(SpectraError):
    pass


class DegenerateGap(SpectraError):
    pass


class ZeroInFitRange(SpectraError):
    pass


class TooFewValues(SpectraError):
    pass


@dataclass(frozen=True)
class SpectrumVec:
    """Descending singular values of one matrix."""

    sigma: np.ndarray  # shape (k,), descending, nonnegative

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=np.float64)
        object.__setattr__(self, "sigma", s)

    @property
    def k(self) -> int:
        return self.sigma.size


@dataclass(frozen=True)
class AlphaFit:
    """Least-squares power-law fit of the top-of-spectrum decay.

    alpha is the negated slope of log sigma_i vs log i (natural logs) over
    the first n_points indices; intercept_c is in natural-log units.
    """

    alpha: float
    intercept_c: float
    fit_r2: float
    n_points: int
    tail_fraction: float
    low_confidence: bool = False


@dataclass
class SpectralRecord:
    """One (step, layer, matrix type) spectral measurement.

    Metric fields are None when their computation failed for a structural
    reason (e.g. spectral gap of a rank-1 matrix); `notes` carries one
    reason code per absent field.
    """

    step: int
    coord: ParamCoord
    rows: int
    cols: int
    stable_rank: float | None
    alpha: float | None
    alpha_r2: float | None
    entropy: float | None
    spectral_gap: float | None
    frob_norm: float
    notes: dict[str, str] = field(default_factory=dict)

    @property
    def layer(self) -> int:
        return self.coord.layer

    @property
    def type_label(self) -> str:
        return self.coord.type_label()


def singular_values(t: TensorView | np.ndarray) -> SpectrumVec:
    """Values-only SVD in float64, descending."""
    w = t.values if isinstance(t, TensorView) else np.asarray(t, dtype=np.float64)
    try:
        s = np.linalg.svd(w, compute_uv=False)
    except np.linalg.LinAlgError as e:
        raise ConvergenceFailure(f"SVD did not converge: {e}") from e
    return SpectrumVec(sigma=s)


def stable_rank(s: SpectrumVec) -> float:
    """Squared Frobenius over squared spectral norm, in [1, k]."""
    sig = s.sigma
    if sig.size == 0 or sig[0] <= 0.0:
        raise ZeroMatrix("stable rank undefined for the zero matrix")
    return float(np.sum((sig / sig[0]) ** 2))


def fit_alpha(s: SpectrumVec, tail_fraction: float = 0.2) -> AlphaFit:
    """Fit log sigma_i ~ -alpha log i + c over the top tail_fraction of indices.

    Uses max(2, floor(tail_fraction * k)) points; when the floor is below 2
    the fit is flagged low-confidence rather than rejected.
    """
    k = s.k
    if k < 2:
        raise TooFewValues(f"need at least 2 singular values, got {k}")
    n = max(2, math.floor(tail_fraction * k))
    head = s.sigma[:n]
    if np.any(head <= 0.0):
        raise ZeroInFitRange("zero singular value inside the fit window")
    x = np.log(np.arange(1, n + 1, dtype=np.float64))
    y = np.log(head)
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    sxy = float(np.sum((x - xm) * (y - ym)))
    slope = sxy / sxx
    intercept = ym - slope * xm
    ss_tot = float(np.sum((y - ym) ** 2))
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    # flat spectrum: the zero-slope model fits exactly
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return AlphaFit(
        alpha=-slope,
        intercept_c=intercept,
        fit_r2=r2,
        n_points=n,
        tail_fraction=tail_fraction,
        low_confidence=math.floor(tail_fraction * k) < 2,
    )


def spectral_entropy(s: SpectrumVec) -> float:
    """Shannon entropy of normalized squared singular values, scaled to [0, 1]."""
    sig = s.sigma
    if sig.size < 2:
        raise SingleValue("entropy normalizer log2(k) is zero for k = 1")
    total = float(np.sum(sig**2))
    if total <= 0.0:
        raise ZeroMatrix("entropy undefined for the zero matrix")
    p = (sig**2) / total
    nz = p[p > 0.0]
    h = -float(np.sum(nz * np.log2(nz)))
    return h / math.log2(sig.size)


def spectral_gap(s: SpectrumVec) -> float:
    """Leading-value dominance sigma_1 / sigma_2."""
    if s.k < 2:
        raise DegenerateGap(f"need at least 2 singular values, got {s.k}")
    if s.sigma[1] <= 0.0:
        raise DegenerateGap("sigma_2 is zero")
    return float(s.sigma[0] / s.sigma[1])


def analyze_matrix(
    t: TensorView,
    step: int,
    coord: ParamCoord,
    tail_fraction: float = 0.2,
) -> SpectralRecord:
    """Compute all metrics for one matrix; metric failures become absent
    fields with reason codes instead of aborting the record."""
    s = singular_values(t)
    frob = float(np.sqrt(np.sum(s.sigma**2)))
    notes: dict[str, str] = {}

    sr = al = r2 = ent = gap = None
    try:
        sr = stable_rank(s)
    except SpectraError as e:
        notes["stable_rank"] = type(e).__name__
    try:
        fit = fit_alpha(s, tail_fraction)
        al, r2 = fit.alpha, fit.fit_r2
        if fit.low_confidence:
            notes["alpha"] = "LowConfidenceFit"
    except SpectraError as e:
        notes["alpha"] = type(e).__name__
    try:
        ent = spectral_entropy(s)
    except SpectraError as e:
        notes["entropy"] = type(e).__name__
    try:
        gap = spectral_gap(s)
    except SpectraError as e:
        notes["spectral_gap"] = type(e).__name__

    return SpectralRecord(
        step=step,
        coord=coord,
        rows=t.rows,
        cols=t.cols,
        stable_rank=sr,
        alpha=al,
        alpha_r2=r2,
        entropy=ent,
        spectral_gap=gap,
        frob_norm=frob,
        notes=notes,
    )
