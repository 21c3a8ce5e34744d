"""Checkpoint tensor loading and parameter-name mapping.

Reads 2-D weight matrices out of ``.npy`` (v1.0) and safetensors containers,
maps parameter names onto (layer, matrix type) coordinates for the naming
schemes we support, and splits fused QKV projections into separate Q/K/V
views. Everything is loaded into float64 regardless of storage dtype.
"""

from __future__ import annotations

import ast
import json
import re
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

__all__ = [
    "MatrixType",
    "NamingScheme",
    "TensorView",
    "ParamCoord",
    "CheckpointSeries",
    "RunManifest",
    "TensorIOError",
    "MalformedHeader",
    "UnsupportedDtype",
    "UnsupportedRank",
    "NonFiniteValue",
    "MalformedContainer",
    "OffsetOutOfBounds",
    "OverlappingRanges",
    "DimensionMismatch",
    "load_npy",
    "write_npy",
    "load_safetensors",
    "map_parameter_name",
    "split_fused_qkv",
    "discover_series",
    "load_manifest",
]


class TensorIOError(Exception):
    """Base class for checkpoint parsing failures."""


class MalformedHeader(TensorIOError):
    pass


class UnsupportedDtype(TensorIOError):
    pass


class UnsupportedRank(TensorIOError):
    pass


class NonFiniteValue(TensorIOError):
    pass


class MalformedContainer(TensorIOError):
    pass


class OffsetOutOfBounds(TensorIOError):
    pass


class OverlappingRanges(TensorIOError):
    pass


class DimensionMismatch(TensorIOError):
    pass


class MatrixType(str, Enum):
    Q = "Q"
    K = "K"
    V = "V"
    O = "O"
    MLP_UP = "MLP_UP"
    MLP_DOWN = "MLP_DOWN"
    FUSED_QKV = "FUSED_QKV"
    OTHER = "OTHER"


#: The per-layer matrix types a spectral scan tracks (fused tensors are
#: split into Q/K/V before analysis).
TRACKED_TYPES = (
    MatrixType.Q,
    MatrixType.K,
    MatrixType.V,
    MatrixType.O,
    MatrixType.MLP_UP,
    MatrixType.MLP_DOWN,
)


class NamingScheme(str, Enum):
    CUSTOM = "CUSTOM"
    GPT2 = "GPT2"
    PYTHIA = "PYTHIA"


@dataclass(frozen=True)
class TensorView:
    """A named 2-D matrix loaded from a checkpoint, always float64."""

    name: str
    rows: int
    cols: int
    values: np.ndarray  # shape (rows, cols), float64, C-order
    source_path: str = ""

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != (self.rows, self.cols):
            raise ValueError(f"values shape {v.shape} != ({self.rows}, {self.cols})")
        object.__setattr__(self, "values", v)

    @property
    def matrix(self) -> np.ndarray:
        return self.values


@dataclass(frozen=True, order=True)
class ParamCoord:
    layer: int
    matrix_type: MatrixType
    fused_slot: MatrixType | None = None

    def type_label(self) -> str:
        """Effective matrix type after fused splitting ("Q" for a fused Q slot)."""
        if self.fused_slot is not None:
            return self.fused_slot.value
        return self.matrix_type.value


@dataclass
class RunManifest:
    run_id: str
    layers: int
    d_model: int
    n_heads: int
    scheme: NamingScheme
    svd_interval: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(
            run_id=str(d["run_id"]),
            layers=int(d["layers"]),
            d_model=int(d["d_model"]),
            n_heads=int(d["n_heads"]),
            scheme=NamingScheme(str(d["scheme"]).upper()),
            svd_interval=int(d.get("svd_interval", 0)),
        )


@dataclass
class CheckpointSeries:
    """All tensor files of one run, grouped by training step."""

    run_id: str
    steps: list[int]
    entries: dict[int, list[tuple[ParamCoord, str, str]]]  # step -> (coord, name, path)
    naming_scheme: NamingScheme
    manifest: RunManifest | None = None
    skipped: list[str] = field(default_factory=list)


_NPY_MAGIC = b"\x93NUMPY"
_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


def _parse_npy_header(raw: bytes, path: str) -> tuple[np.dtype, tuple[int, int], int]:
    if len(raw) < 10 or raw[:6] != _NPY_MAGIC:
        raise MalformedHeader(f"{path}: missing npy magic bytes")
    major, minor = raw[6], raw[7]
    if (major, minor) != (1, 0):
        raise MalformedHeader(f"{path}: unsupported npy format version {major}.{minor}")
    (hlen,) = struct.unpack("<H", raw[8:10])
    header_end = 10 + hlen
    if len(raw) < header_end:
        raise MalformedHeader(f"{path}: truncated header")
    try:
        header = ast.literal_eval(raw[10:header_end].decode("latin1"))
    except (ValueError, SyntaxError) as e:
        raise MalformedHeader(f"{path}: unparseable header dict: {e}") from e
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise MalformedHeader(f"{path}: unexpected header keys")
    descr = header["descr"]
    if descr not in _DTYPES:
        raise UnsupportedDtype(f"{path}: dtype {descr!r} not supported (need <f4 or <f8)")
    if header["fortran_order"]:
        raise MalformedHeader(f"{path}: Fortran-order arrays not supported")
    shape = header["shape"]
    if not (isinstance(shape, tuple) and len(shape) == 2):
        raise UnsupportedRank(f"{path}: shape {shape} is not 2-D")
    return _DTYPES[descr], (int(shape[0]), int(shape[1])), header_end


def load_npy(path: str | Path) -> TensorView:
    """Load one 2-D float32/float64 ``.npy`` v1.0 file as a TensorView."""
    path = Path(path)
    raw = path.read_bytes()
    dtype, (rows, cols), offset = _parse_npy_header(raw, str(path))
    nbytes = rows * cols * dtype.itemsize
    payload = raw[offset : offset + nbytes]
    if len(payload) != nbytes:
        raise MalformedHeader(f"{path}: payload truncated ({len(payload)} of {nbytes} bytes)")
    arr = np.frombuffer(payload, dtype=dtype).reshape(rows, cols).astype(np.float64)
    if not np.isfinite(arr).all():
        raise NonFiniteValue(f"{path}: tensor contains NaN/Inf")
    return TensorView(name=path.stem, rows=rows, cols=cols, values=arr, source_path=str(path))


def write_npy(path: str | Path, matrix: np.ndarray, dtype: str = "<f4") -> None:
    """Write a 2-D matrix as an ``.npy`` v1.0 file (mirrors the loader's contract)."""
    if dtype not in _DTYPES:
        raise UnsupportedDtype(f"dtype {dtype!r} not supported")
    m = np.ascontiguousarray(matrix, dtype=_DTYPES[dtype])
    if m.ndim != 2:
        raise UnsupportedRank(f"matrix rank {m.ndim} is not 2")
    header = f"{{'descr': '{dtype}', 'fortran_order': False, 'shape': {m.shape}, }}"
    # pad so that magic+version+len+header is a multiple of 64, newline-terminated
    base = 10 + len(header) + 1
    header = header + " " * ((64 - base % 64) % 64) + "\n"
    with open(path, "wb") as f:
        f.write(_NPY_MAGIC + b"\x01\x00" + struct.pack("<H", len(header)))
        f.write(header.encode("latin1"))
        f.write(m.tobytes())


def load_safetensors(path: str | Path) -> tuple[dict[str, TensorView], list[str]]:
    """Extract all 2-D float32 tensors from a safetensors container.

    Returns (name -> TensorView, list of skipped tensor names). Tensors with
    other dtypes or ranks are skipped, not an error.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 8:
        raise MalformedContainer(f"{path}: shorter than the 8-byte header length")
    (hlen,) = struct.unpack("<Q", raw[:8])
    if 8 + hlen > len(raw):
        raise MalformedContainer(f"{path}: declared header length {hlen} exceeds file size")
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedContainer(f"{path}: header is not valid JSON: {e}") from e
    if not isinstance(header, dict):
        raise MalformedContainer(f"{path}: header is not a JSON object")

    data_start = 8 + hlen
    data_len = len(raw) - data_start
    out: dict[str, TensorView] = {}
    skipped: list[str] = []
    ranges: list[tuple[int, int, str]] = []
    for name, meta in header.items():
        if name == "__metadata__":
            continue
        try:
            dtype = meta["dtype"]
            shape = [int(s) for s in meta["shape"]]
            begin, end = (int(x) for x in meta["data_offsets"])
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedContainer(f"{path}: bad entry for {name!r}: {e}") from e
        if begin < 0 or end < begin or end > data_len:
            raise OffsetOutOfBounds(f"{path}: {name!r} offsets [{begin}, {end}) out of bounds")
        if dtype != "F32" or len(shape) != 2:
            skipped.append(name)
            continue
        ranges.append((begin, end, name))
        rows, cols = shape
        nbytes = rows * cols * 4
        if end - begin != nbytes:
            raise MalformedContainer(f"{path}: {name!r} byte range does not match its shape")
        arr = (
            np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=data_start + begin)
            .reshape(rows, cols)
            .astype(np.float64)
        )
        if not np.isfinite(arr).all():
            raise NonFiniteValue(f"{path}: tensor {name!r} contains NaN/Inf")
        out[name] = TensorView(name=name, rows=rows, cols=cols, values=arr, source_path=str(path))

    ranges.sort()
    for (b0, e0, n0), (b1, e1, n1) in zip(ranges, ranges[1:]):
        if b1 < e0:
            raise OverlappingRanges(f"{path}: {n0!r} and {n1!r} overlap")
    return out, skipped


_CUSTOM_ATTN = {"q_proj": MatrixType.Q, "k_proj": MatrixType.K, "v_proj": MatrixType.V, "o_proj": MatrixType.O}
_CUSTOM_MLP = {"up_proj": MatrixType.MLP_UP, "down_proj": MatrixType.MLP_DOWN}

_PATTERNS = {
    NamingScheme.CUSTOM: [
        (re.compile(r"^layers\.(\d+)\.attn\.(q_proj|k_proj|v_proj|o_proj)\.weight$"), _CUSTOM_ATTN),
        (re.compile(r"^layers\.(\d+)\.mlp\.(up_proj|down_proj)\.weight$"), _CUSTOM_MLP),
    ],
    NamingScheme.GPT2: [
        (
            re.compile(r"^(?:transformer\.)?h\.(\d+)\.attn\.(c_attn)\.weight$"),
            {"c_attn": MatrixType.FUSED_QKV},
        ),
        (
            re.compile(r"^(?:transformer\.)?h\.(\d+)\.attn\.(c_proj)\.weight$"),
            {"c_proj": MatrixType.O},
        ),
        (
            re.compile(r"^(?:transformer\.)?h\.(\d+)\.mlp\.(c_fc|c_proj)\.weight$"),
            {"c_fc": MatrixType.MLP_UP, "c_proj": MatrixType.MLP_DOWN},
        ),
    ],
    NamingScheme.PYTHIA: [
        (
            re.compile(r"^(?:gpt_neox\.)?layers\.(\d+)\.attention\.(query_key_value)\.weight$"),
            {"query_key_value": MatrixType.FUSED_QKV},
        ),
        (
            re.compile(r"^(?:gpt_neox\.)?layers\.(\d+)\.attention\.(dense)\.weight$"),
            {"dense": MatrixType.O},
        ),
        (
            re.compile(r"^(?:gpt_neox\.)?layers\.(\d+)\.mlp\.(dense_h_to_4h|dense_4h_to_h)\.weight$"),
            {"dense_h_to_4h": MatrixType.MLP_UP, "dense_4h_to_h": MatrixType.MLP_DOWN},
        ),
    ],
}


def map_parameter_name(name: str, scheme: NamingScheme) -> ParamCoord | None:
    """Map a checkpoint parameter name to (layer, matrix type), or None.

    Embeddings, norms, biases, and anything else outside the tracked set map
    to None. Total and deterministic: never raises.
    """
    for pattern, types in _PATTERNS[scheme]:
        m = pattern.match(name)
        if m:
            return ParamCoord(layer=int(m.group(1)), matrix_type=types[m.group(2)])
    return None


def split_fused_qkv(
    t: TensorView,
    scheme: NamingScheme,
    d_model: int,
    n_heads: int | None = None,
) -> tuple[TensorView, TensorView, TensorView]:
    """Split a fused QKV projection into separate Q, K, V tensors.

    GPT-2 stores the fusion along columns as [Q | K | V]. Pythia stores it
    along rows, interleaved per attention head (Q, K, V stripes of size
    d_model/n_heads for each head), so n_heads is required there.
    """
    w = t.values
    if scheme is NamingScheme.GPT2 or scheme is NamingScheme.CUSTOM:
        if w.shape[1] != 3 * d_model:
            raise DimensionMismatch(
                f"{t.name}: fused width {w.shape[1]} != 3*d_model = {3 * d_model}"
            )
        parts = (w[:, :d_model], w[:, d_model : 2 * d_model], w[:, 2 * d_model :])
    elif scheme is NamingScheme.PYTHIA:
        if w.shape[0] != 3 * d_model:
            raise DimensionMismatch(
                f"{t.name}: fused height {w.shape[0]} != 3*d_model = {3 * d_model}"
            )
        if not n_heads or d_model % n_heads != 0:
            raise DimensionMismatch(
                f"{t.name}: Pythia fused split needs n_heads dividing d_model "
                f"(d_model={d_model}, n_heads={n_heads})"
            )
        hd = d_model // n_heads
        per_head = w.reshape(n_heads, 3, hd, w.shape[1])
        parts = tuple(per_head[:, i].reshape(d_model, w.shape[1]) for i in range(3))
    else:  # pragma: no cover - enum is exhaustive
        raise DimensionMismatch(f"unknown scheme {scheme}")

    labels = ("Q", "K", "V")
    return tuple(
        TensorView(
            name=f"{t.name}.{lab}",
            rows=p.shape[0],
            cols=p.shape[1],
            values=np.ascontiguousarray(p),
            source_path=t.source_path,
        )
        for lab, p in zip(labels, parts)
    )


def load_manifest(path: str | Path) -> RunManifest:
    with open(path) as f:
        return RunManifest.from_dict(json.load(f))


_STEP_DIR = re.compile(r"^step_(\d+)$")
_STEP_FILE = re.compile(r"^step_(\d+)\.safetensors$")


def discover_series(root: str | Path, manifest: RunManifest) -> CheckpointSeries:
    """Scan a checkpoint directory tree into a CheckpointSeries.

    Layout: one ``step_<N>`` subdirectory of ``.npy`` files per step, named
    by parameter name, or one ``step_<N>.safetensors`` file per step.
    """
    root = Path(root)
    entries: dict[int, list[tuple[ParamCoord, str, str]]] = {}
    skipped: list[str] = []
    for child in sorted(root.iterdir()):
        m = _STEP_DIR.match(child.name)
        if m and child.is_dir():
            step = int(m.group(1))
            items = []
            for f in sorted(child.glob("*.npy")):
                coord = map_parameter_name(f.stem, manifest.scheme)
                if coord is None:
                    skipped.append(str(f))
                    continue
                items.append((coord, f.stem, str(f)))
            entries[step] = items
            continue
        m = _STEP_FILE.match(child.name)
        if m and child.is_file():
            step = int(m.group(1))
            tensors, skip = load_safetensors(child)
            skipped.extend(f"{child}:{n}" for n in skip)
            items = []
            for name in sorted(tensors):
                coord = map_parameter_name(name, manifest.scheme)
                if coord is None:
                    skipped.append(f"{child}:{name}")
                    continue
                items.append((coord, name, str(child)))
            entries[step] = items
    return CheckpointSeries(
        run_id=manifest.run_id,
        steps=sorted(entries),
        entries=entries,
        naming_scheme=manifest.scheme,
        manifest=manifest,
        skipped=skipped,
    )
