"""Layer-removal planning and three-zone depth classification.

Zone-aware selection removes the lowest-tail-exponent interior layers while
protecting boundary zones and keeping removed layers apart; baseline
strategies (Last-N, random, magnitude, worst-first control) exist for
comparison. Selection is purely order-based over the per-layer alpha
profile, so shifting every alpha by a constant changes nothing.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .fits import RankCorr, spearman
from .timelapse import AlphaProfile

__all__ = [
    "Strategy",
    "Zone",
    "ZoneMap",
    "PrunePlan",
    "PruneError",
    "BoundaryTooLarge",
    "InfeasibleSelection",
    "MissingInput",
    "default_boundary",
    "classify_zones",
    "zone_aware_select",
    "baseline_select",
    "importance_correlation",
]


class PruneError(Exception):
    pass


class BoundaryTooLarge(PruneError):
    pass


class InfeasibleSelection(PruneError):
    def __init__(self, msg: str, partial: list[int]):
        super().__init__(msg)
        self.partial = partial


class MissingInput(PruneError):
    pass


class Strategy(str, Enum):
    ZONE_AWARE = "ZONE_AWARE"
    LAST_N = "LAST_N"
    RANDOM = "RANDOM"
    MAGNITUDE = "MAGNITUDE"
    SPECTRAL_WORST = "SPECTRAL_WORST"


class Zone(str, Enum):
    INPUT_BOUNDARY = "INPUT_BOUNDARY"
    CORE = "CORE"
    OUTPUT_BOUNDARY = "OUTPUT_BOUNDARY"


@dataclass(frozen=True)
class ZoneMap:
    labels: tuple[Zone, ...]

    @property
    def core_layers(self) -> list[int]:
        return [l for l, z in enumerate(self.labels) if z is Zone.CORE]


@dataclass
class PrunePlan:
    strategy: Strategy
    removed_layers: list[int]
    k: int
    b: int | None = None
    min_gap: int | None = None
    seed: int | None = None
    alpha_profile_digest: str | None = None

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "removed_layers": list(self.removed_layers),
            "k": self.k,
            "b": self.b,
            "min_gap": self.min_gap,
            "seed": self.seed,
            "alpha_profile_digest": self.alpha_profile_digest,
        }


def default_boundary(L: int) -> int:
    """Boundary size heuristic: 2 for deep models, 1 otherwise."""
    return 2 if L >= 14 else 1


def _digest(profile: AlphaProfile) -> str:
    payload = json.dumps(
        {"step": profile.step, "type": profile.matrix_type, "alphas": profile.as_sequence()},
        sort_keys=True,
    ).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def classify_zones(L: int, b: int) -> ZoneMap:
    """First b layers are input boundary, last b output boundary, rest core."""
    if b < 0 or 2 * b >= L:
        raise BoundaryTooLarge(f"boundary {b} leaves no interior for L = {L}")
    labels = tuple(
        Zone.INPUT_BOUNDARY if l < b else Zone.OUTPUT_BOUNDARY if l >= L - b else Zone.CORE
        for l in range(L)
    )
    return ZoneMap(labels=labels)


def zone_aware_select(
    profile: AlphaProfile, k: int, b: int | None = None, min_gap: int = 2
) -> PrunePlan:
    """Greedily pick k interior layers in ascending alpha order (ties break to
    the lower layer index), accepting a layer only if it is at least min_gap
    indices away from every already-accepted layer."""
    L = profile.layer_count
    if b is None:
        b = default_boundary(L)
    zones = classify_zones(L, b)
    interior = zones.core_layers
    alphas = profile.alphas
    order = sorted(interior, key=lambda l: (alphas[l], l))
    chosen: list[int] = []
    for l in order:
        if len(chosen) == k:
            break
        if all(abs(l - c) >= min_gap for c in chosen):
            chosen.append(l)
    if len(chosen) < k:
        raise InfeasibleSelection(
            f"gap constraint exhausted candidates at {len(chosen)} of {k}",
            partial=sorted(chosen),
        )
    return PrunePlan(
        strategy=Strategy.ZONE_AWARE,
        removed_layers=sorted(chosen),
        k=k,
        b=b,
        min_gap=min_gap,
        alpha_profile_digest=_digest(profile),
    )


def baseline_select(
    strategy: Strategy,
    L: int,
    k: int,
    profile: AlphaProfile | None = None,
    layer_norms: dict[int, float] | None = None,
    seed: int | None = None,
) -> PrunePlan:
    """Comparison strategies: last-N, seeded random, smallest per-layer
    Frobenius norm, and highest-alpha (worst-first control, deliberately
    unrestricted by zones)."""
    if k > L:
        raise PruneError(f"cannot remove {k} of {L} layers")
    digest = _digest(profile) if profile is not None else None
    if strategy is Strategy.LAST_N:
        removed = list(range(L - k, L))
    elif strategy is Strategy.RANDOM:
        if seed is None:
            raise MissingInput("RANDOM strategy needs a seed")
        rng = np.random.default_rng(seed)
        removed = sorted(int(x) for x in rng.choice(L, size=k, replace=False))
    elif strategy is Strategy.MAGNITUDE:
        if layer_norms is None:
            raise MissingInput("MAGNITUDE strategy needs per-layer norms")
        if set(layer_norms) != set(range(L)):
            raise MissingInput("layer norms must cover every layer")
        removed = sorted(sorted(range(L), key=lambda l: (layer_norms[l], l))[:k])
    elif strategy is Strategy.SPECTRAL_WORST:
        if profile is None:
            raise MissingInput("SPECTRAL_WORST strategy needs an alpha profile")
        alphas = profile.alphas
        removed = sorted(sorted(range(L), key=lambda l: (-alphas[l], l))[:k])
    else:
        raise MissingInput(f"use zone_aware_select for {strategy}")
    return PrunePlan(
        strategy=strategy,
        removed_layers=removed,
        k=k,
        seed=seed,
        alpha_profile_digest=digest,
    )


def importance_correlation(
    profile: AlphaProfile,
    importance: dict[int, float],
    zone_map: ZoneMap | None = None,
    include: str = "CORE_ONLY",
    permutations: int = 100_000,
    seed: int = 0,
) -> RankCorr:
    """Spearman correlation of per-layer alpha with supplied importance
    scores, optionally restricted to core layers."""
    if include not in ("CORE_ONLY", "ALL"):
        raise ValueError(f"include must be CORE_ONLY or ALL, got {include!r}")
    if include == "CORE_ONLY":
        if zone_map is None:
            zone_map = classify_zones(profile.layer_count, default_boundary(profile.layer_count))
        layers = [l for l in zone_map.core_layers if l in importance]
    else:
        layers = [l for l in range(profile.layer_count) if l in importance]
    x = [profile.alphas[l] for l in layers]
    y = [importance[l] for l in layers]
    return spearman(x, y, permutations=permutations, seed=seed)
