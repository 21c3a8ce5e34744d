"""Spatiotemporal assembly and analysis of spectral records.

Builds the per-run spectral log from a checkpoint series, serializes it to
the canonical CSV interchange format, and computes the time/depth analyses:
compression onsets, wave velocity, the first-minus-last stable-rank gradient
and its sign reversal, and per-layer power-law-exponent profiles with their
spread and peak position.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from . import spectra, tensor_io
from .fits import LineFit, TooFewPoints, ols
from .spectra import SpectralRecord
from .tensor_io import CheckpointSeries, MatrixType, ParamCoord

__all__ = [
    "SpectralLog",
    "OnsetTable",
    "AlphaProfile",
    "TimelapseError",
    "MissingStep",
    "SparseProfile",
    "TooFewOnsets",
    "build_log",
    "onset_step",
    "compute_onsets",
    "wave_velocity",
    "sr_gradient_series",
    "detect_reversal",
    "alpha_profile",
    "alpha_spread",
    "peak_position",
    "write_log_csv",
    "read_log_csv",
    "CSV_HEADER",
]


class TimelapseError(Exception):
    pass


class MissingStep(TimelapseError):
    pass


class SparseProfile(TimelapseError):
    pass


class TooFewOnsets(TimelapseError):
    pass


@dataclass
class SpectralLog:
    """Append-only collection of spectral records for one run."""

    run_id: str
    records: list[SpectralRecord]
    layer_count: int
    warnings: list[str] = field(default_factory=list)

    @property
    def step_set(self) -> list[int]:
        return sorted({r.step for r in self.records})

    def at(self, step: int, type_label: str | None = None) -> list[SpectralRecord]:
        return [
            r
            for r in self.records
            if r.step == step and (type_label is None or r.type_label == type_label)
        ]


@dataclass
class OnsetTable:
    onsets: dict[int, int | None]  # layer -> first compression step, or None
    threshold_ratio: float


@dataclass
class AlphaProfile:
    """Per-layer alpha values for one matrix type at one step."""

    step: int
    matrix_type: str
    alphas: dict[int, float]  # dense over [0, L)

    @property
    def layer_count(self) -> int:
        return len(self.alphas)

    def as_sequence(self) -> list[float]:
        return [self.alphas[l] for l in range(self.layer_count)]


DEFAULT_TYPES = tuple(t.value for t in tensor_io.TRACKED_TYPES)


def _records_for_step(
    series: CheckpointSeries,
    step: int,
    types: tuple[str, ...],
    tail_fraction: float,
) -> list[SpectralRecord]:
    manifest = series.manifest
    records: list[SpectralRecord] = []
    safetensor_cache: dict[str, dict[str, tensor_io.TensorView]] = {}
    for coord, name, path in series.entries[step]:
        if path.endswith(".safetensors"):
            if path not in safetensor_cache:
                safetensor_cache[path], _ = tensor_io.load_safetensors(path)
            t = safetensor_cache[path][name]
        else:
            t = tensor_io.load_npy(path)
        if coord.matrix_type is MatrixType.FUSED_QKV:
            if manifest is None:
                raise TimelapseError("fused QKV tensors need a manifest (d_model, n_heads)")
            slots = (MatrixType.Q, MatrixType.K, MatrixType.V)
            parts = tensor_io.split_fused_qkv(
                t, series.naming_scheme, manifest.d_model, manifest.n_heads
            )
            for slot, part in zip(slots, parts):
                if slot.value not in types:
                    continue
                c = ParamCoord(coord.layer, MatrixType.FUSED_QKV, fused_slot=slot)
                records.append(spectra.analyze_matrix(part, step, c, tail_fraction))
        else:
            if coord.type_label() not in types:
                continue
            records.append(spectra.analyze_matrix(t, step, coord, tail_fraction))
    return records


def build_log(
    series: CheckpointSeries,
    types: tuple[str, ...] = DEFAULT_TYPES,
    tail_fraction: float = 0.2,
) -> SpectralLog:
    """One record per (step, layer, type) on disk, ordered by (step, layer, type).

    Steps whose layer coverage is not dense for every requested type present
    at that step are skipped with a warning rather than partially included.
    """
    if not series.steps:
        raise TimelapseError("empty checkpoint series")
    layer_count = series.manifest.layers if series.manifest else 0
    records: list[SpectralRecord] = []
    notes: list[str] = []
    for step in series.steps:
        step_records = _records_for_step(series, step, types, tail_fraction)
        if not step_records:
            notes.append(f"step {step}: no tracked tensors, skipped")
            continue
        L = layer_count or max(r.layer for r in step_records) + 1
        present = {t: {r.layer for r in step_records if r.type_label == t} for t in types}
        missing = {
            t: sorted(set(range(L)) - layers)
            for t, layers in present.items()
            if layers and layers != set(range(L))
        }
        if missing:
            notes.append(f"step {step}: missing layers {missing}, step skipped")
            continue
        records.extend(step_records)
    records.sort(key=lambda r: (r.step, r.layer, r.type_label, r.coord.fused_slot or ""))
    if not layer_count and records:
        layer_count = max(r.layer for r in records) + 1
    for n in notes:
        warnings.warn(n, stacklevel=2)
    return SpectralLog(
        run_id=series.run_id, records=records, layer_count=layer_count, warnings=notes
    )


def onset_step(sr_series, threshold_ratio: float = 0.9) -> int | None:
    """First step at which stable rank falls below threshold_ratio times the
    earliest logged value; None if it never does. No hysteresis."""
    pairs = list(sr_series)
    if not pairs:
        return None
    baseline = pairs[0][1]
    cutoff = threshold_ratio * baseline
    for step, sr in pairs:
        if sr < cutoff:
            return step
    return None


def compute_onsets(
    log: SpectralLog,
    type_label: str = "Q",
    threshold_ratio: float = 0.9,
) -> OnsetTable:
    """Per-layer compression onsets from mean stable rank of one matrix type."""
    onsets: dict[int, int | None] = {}
    for layer in range(log.layer_count):
        series = []
        for step in log.step_set:
            vals = [
                r.stable_rank
                for r in log.records
                if r.step == step and r.layer == layer and r.type_label == type_label
                and r.stable_rank is not None
            ]
            if vals:
                series.append((step, sum(vals) / len(vals)))
        onsets[layer] = onset_step(series, threshold_ratio)
    return OnsetTable(onsets=onsets, threshold_ratio=threshold_ratio)


def wave_velocity(onsets: OnsetTable) -> LineFit:
    """OLS of onset step on layer index; the slope is the wave velocity in
    steps per layer."""
    defined = [(l, t) for l, t in sorted(onsets.onsets.items()) if t is not None]
    if len(defined) < 3:
        raise TooFewOnsets(f"need >= 3 layers with onsets, got {len(defined)}")
    try:
        return ols([l for l, _ in defined], [t for _, t in defined])
    except TooFewPoints as e:  # pragma: no cover - guarded above
        raise TooFewOnsets(str(e)) from e


def sr_gradient_series(
    log: SpectralLog, types: tuple[str, ...] | None = None
) -> list[tuple[int, float]]:
    """Per-step first-layer minus last-layer mean stable rank.

    The per-layer value averages stable rank over the given matrix types
    (default: all types present). Steps missing either end layer are
    excluded.
    """
    first, last = 0, log.layer_count - 1
    out = []
    for step in log.step_set:
        means = {}
        for layer in (first, last):
            vals = [
                r.stable_rank
                for r in log.records
                if r.step == step and r.layer == layer and r.stable_rank is not None
                and (types is None or r.type_label in types)
            ]
            if vals:
                means[layer] = sum(vals) / len(vals)
        if first in means and last in means:
            out.append((step, means[first] - means[last]))
    return out


def detect_reversal(series) -> tuple[int, int] | None:
    """First adjacent step pair where the gradient goes from <= 0 to > 0."""
    pairs = list(series)
    for (s0, g0), (s1, g1) in zip(pairs, pairs[1:]):
        if g0 <= 0.0 and g1 > 0.0:
            return (s0, s1)
    return None


def alpha_profile(log: SpectralLog, step: int, matrix_type: str = "Q") -> AlphaProfile:
    """Dense per-layer alpha map for one matrix type at one step."""
    if step not in log.step_set:
        raise MissingStep(f"step {step} not in log (have {log.step_set})")
    alphas: dict[int, float] = {}
    for r in log.at(step, matrix_type):
        if r.alpha is not None:
            alphas[r.layer] = r.alpha
    missing = sorted(set(range(log.layer_count)) - set(alphas))
    if missing:
        raise SparseProfile(f"step {step}, type {matrix_type}: missing layers {missing}")
    return AlphaProfile(step=step, matrix_type=matrix_type, alphas=alphas)


def alpha_spread(p: AlphaProfile) -> float:
    vals = p.as_sequence()
    return max(vals) - min(vals)


def peak_position(p: AlphaProfile) -> tuple[int, float]:
    """(argmax layer, layer / L); ties break to the lowest layer index."""
    vals = p.as_sequence()
    peak = max(range(len(vals)), key=lambda l: (vals[l], -l))
    return peak, peak / len(vals) if len(vals) > 1 else 0.0


CSV_HEADER = [
    "step",
    "layer",
    "matrix_type",
    "fused_slot",
    "rows",
    "cols",
    "stable_rank",
    "alpha",
    "alpha_r2",
    "entropy",
    "spectral_gap",
    "frob_norm",
]


def _fmt(x: float | None) -> str:
    return "" if x is None else format(x, ".9g")


def write_log_csv(log: SpectralLog, path: str | Path, sidecar: bool = True) -> None:
    """Write the canonical CSV plus a JSON metadata sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in log.records:
            w.writerow(
                [
                    r.step,
                    r.layer,
                    r.coord.matrix_type.value,
                    r.coord.fused_slot.value if r.coord.fused_slot else "",
                    r.rows,
                    r.cols,
                    _fmt(r.stable_rank),
                    _fmt(r.alpha),
                    _fmt(r.alpha_r2),
                    _fmt(r.entropy),
                    _fmt(r.spectral_gap),
                    _fmt(r.frob_norm),
                ]
            )
    if sidecar:
        meta = {
            "run_id": log.run_id,
            "layer_count": log.layer_count,
            "steps": log.step_set,
            "records": len(log.records),
            "warnings": log.warnings,
        }
        with open(path.with_suffix(path.suffix + ".meta.json"), "w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
            f.write("\n")


def read_log_csv(path: str | Path, run_id: str = "", layer_count: int = 0) -> SpectralLog:
    """Read a canonical spectral-log CSV back into a SpectralLog."""
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".meta.json")
    if sidecar.exists():
        with open(sidecar) as f:
            meta = json.load(f)
        run_id = run_id or meta.get("run_id", "")
        layer_count = layer_count or int(meta.get("layer_count", 0))
    records: list[SpectralRecord] = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_HEADER:
            raise TimelapseError(f"{path}: unexpected CSV header {reader.fieldnames}")
        for row in reader:
            mt = MatrixType(row["matrix_type"])
            slot = MatrixType(row["fused_slot"]) if row["fused_slot"] else None
            coord = ParamCoord(int(row["layer"]), mt, fused_slot=slot)

            def opt(key):
                return float(row[key]) if row[key] != "" else None

            records.append(
                SpectralRecord(
                    step=int(row["step"]),
                    coord=coord,
                    rows=int(row["rows"]),
                    cols=int(row["cols"]),
                    stable_rank=opt("stable_rank"),
                    alpha=opt("alpha"),
                    alpha_r2=opt("alpha_r2"),
                    entropy=opt("entropy"),
                    spectral_gap=opt("spectral_gap"),
                    frob_norm=float(row["frob_norm"]),
                )
            )
    if not layer_count and records:
        layer_count = max(r.layer for r in records) + 1
    return SpectralLog(run_id=run_id, records=records, layer_count=layer_count)
