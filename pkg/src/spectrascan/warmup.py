"""Synthesis of weight matrices with a prescribed singular spectrum.

Builds W = U diag(s * sigma) V^T from independently seeded Haar-uniform
orthogonal factors, so the output's singular values equal the scaled target
spectrum exactly (up to floating-point) while its singular directions are
random.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_io import TensorView

__all__ = [
    "WarmupSpec",
    "random_orthogonal",
    "spectral_warmup_matrix",
    "derive_seed",
    "target_spectrum_from_record",
]


@dataclass(frozen=True)
class WarmupSpec:
    rows: int
    cols: int
    target_sigma: tuple[float, ...]  # descending, length min(rows, cols)
    scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        k = min(self.rows, self.cols)
        if len(self.target_sigma) != k:
            raise ValueError(
                f"target spectrum length {len(self.target_sigma)} != min(m, n) = {k}"
            )
        if any(a < b for a, b in zip(self.target_sigma, self.target_sigma[1:])):
            raise ValueError("target spectrum must be descending")
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")


def random_orthogonal(n: int, seed: int | np.random.Generator) -> np.ndarray:
    """Haar-uniform random n x n orthogonal matrix.

    QR of a standard Gaussian matrix, with the sign of each R diagonal
    entry folded into the corresponding Q column; without that correction
    the distribution is biased toward positive diagonals.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    g = rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    d = np.sign(np.diag(r))
    d[d == 0.0] = 1.0
    return q * d


def derive_seed(base_seed: int, layer: int, type_label: str) -> int:
    """Stable per-matrix seed so each synthesized matrix gets independent
    orthogonal factors."""
    ss = np.random.SeedSequence([base_seed, layer, *type_label.encode()])
    return int(ss.generate_state(1)[0])


def target_spectrum_from_record(alpha: float, frob_norm: float, k: int) -> tuple[float, ...]:
    """Target spectrum consistent with one logged spectral record.

    The log stores summary metrics, not raw singular values, so the target
    is reconstructed as the power law sigma_i = c * i**(-alpha) with c chosen
    so the squared values sum to the logged squared Frobenius norm.
    """
    if k < 1:
        raise ValueError("k must be positive")
    i = np.arange(1, k + 1, dtype=np.float64)
    shape = i ** (-alpha)
    c = frob_norm / float(np.sqrt(np.sum(shape**2)))
    return tuple(float(x) for x in c * shape)


def spectral_warmup_matrix(spec: WarmupSpec) -> TensorView:
    """m x n matrix whose singular values are scale * target_sigma.

    Uses the leading min(m, n) columns of two independent seeded orthogonal
    factors of sizes m and n.
    """
    m, n = spec.rows, spec.cols
    k = min(m, n)
    ss = np.random.SeedSequence(spec.seed)
    seed_u, seed_v = ss.spawn(2)
    u = random_orthogonal(m, np.random.default_rng(seed_u))[:, :k]
    v = random_orthogonal(n, np.random.default_rng(seed_v))[:, :k]
    sigma = spec.scale * np.asarray(spec.target_sigma, dtype=np.float64)
    w = (u * sigma) @ v.T
    return TensorView(
        name=f"warmup_{m}x{n}_seed{spec.seed}",
        rows=m,
        cols=n,
        values=np.ascontiguousarray(w),
    )
