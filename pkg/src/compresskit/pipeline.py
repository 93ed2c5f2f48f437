"""Compression variants over a weight store: prune, SVD, or prune then SVD.

A conv weight ``w[O, I, K, K]`` is factored as the matrix ``w.reshape(O, -1).T``
of shape ``(I*K*K, O)``. The stored factors are ``u (I*K*K, R)``, ``s (R,)``
and ``v (O, R)``, so the factored parameter count is ``R * (I*K*K + 1 + O)``
against ``O*I*K*K`` for the dense weight.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import lowrank
from .errors import CompressKitError, ConfigError, LayerError, NonFiniteError, ShapeError
from .lowrank import RankPolicy, SvdFactors
from .prune import SCOPES, prune_store, select_entries
from .weightstore import Entry, WeightStore, as_tensor, serialized_size

FACTOR_SUFFIXES = (".u", ".s", ".v")
MODES = ("table1", "near-square")


@dataclass(frozen=True, eq=False)
class FactorizedConv:
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray
    orig_shape: tuple[int, int, int, int]
    mode: str = "table1"

    def __post_init__(self):
        shape = tuple(int(d) for d in self.orig_shape)
        if len(shape) != 4 or min(shape) < 1:
            raise ShapeError(f"orig_shape must be [O, I, K, K] with positive entries, got {list(shape)}")
        object.__setattr__(self, "orig_shape", shape)
        if self.mode not in MODES:
            raise ValueError(f"unknown reshape mode {self.mode!r}")
        rows, cols = lowrank.reshape_for_svd(math.prod(shape), shape, self.mode)
        u, s, v = (np.asarray(x) for x in (self.u, self.s, self.v))
        r = s.shape[0] if s.ndim == 1 else -1
        if (r < 1 or u.shape != (rows, r) or v.shape != (cols, r)):
            raise ShapeError(
                f"factor shapes u{list(u.shape)} s{list(s.shape)} v{list(v.shape)} "
                f"inconsistent with {self.mode} reshape ({rows}, {cols}) of {list(shape)}"
            )

    @property
    def rank(self) -> int:
        return int(self.s.shape[0])

    @property
    def matrix_shape(self) -> tuple[int, int]:
        return int(self.u.shape[0]), int(self.v.shape[0])

    def factors(self) -> SvdFactors:
        return SvdFactors(self.u, self.s, self.v)


def weight_to_matrix(w: np.ndarray, mode: str = "table1") -> np.ndarray:
    w = np.asarray(w)
    rows, cols = lowrank.reshape_for_svd(w.size, w.shape, mode)
    if mode == "table1":
        return w.reshape(w.shape[0], -1).T
    return w.reshape(rows, cols)


def matrix_to_weight(m: np.ndarray, orig_shape, mode: str = "table1") -> np.ndarray:
    if mode == "table1":
        return m.T.reshape(orig_shape)
    return m.reshape(orig_shape)


def compress_conv(w, policy: RankPolicy, mode: str = "table1") -> FactorizedConv:
    """Reshape a rank-4 conv weight, truncate its SVD, keep the factors."""
    w = np.asarray(w, dtype=np.float32)
    if w.ndim != 4:
        raise ShapeError(f"conv weight must be rank 4 [O, I, K, K], got shape {list(w.shape)}")
    if not np.isfinite(w).all():
        raise NonFiniteError("conv weight contains NaN or Inf")
    f = lowrank.truncated_svd(weight_to_matrix(w, mode), policy)
    return FactorizedConv(f.u, f.s, f.v, w.shape, mode)


def decompress_conv(f: FactorizedConv) -> np.ndarray:
    m = lowrank.reconstruct(f.factors())
    return as_tensor(matrix_to_weight(m, f.orig_shape, f.mode))


def param_counts(f: FactorizedConv) -> tuple[int, int]:
    """``(O*I*K*K, R*(I*K*K + 1 + O))`` for table1 factors.

    For near-square factors the second term is ``R*(rows + 1 + cols)``.
    """
    if f.rank < 1:
        raise ValueError("rank must be >= 1")
    rows, cols = f.matrix_shape
    return math.prod(f.orig_shape), f.rank * (rows + 1 + cols)


# ---------------------------------------------------------------------------
# factored entries in a store
# ---------------------------------------------------------------------------

def _shape_str(shape) -> str:
    return ",".join(str(int(d)) for d in shape)


def factor_entries(name: str, f: FactorizedConv) -> list[Entry]:
    meta = {"orig_shape": _shape_str(f.orig_shape), "reshape": f.mode}
    return [
        Entry(name + ".u", f.u, "svd-factor", {**meta, "factor": "u"}),
        Entry(name + ".s", f.s, "svd-factor", {**meta, "factor": "s"}),
        Entry(name + ".v", f.v, "svd-factor", {**meta, "factor": "v"}),
    ]


def factored_bases(store: WeightStore) -> list[str]:
    """Base names that have a complete ``.u``/``.s``/``.v`` factor triple, in store order."""
    bases = []
    for e in store:
        if e.role == "svd-factor" and e.name.endswith(".u"):
            base = e.name[:-2]
            if all(base + sfx in store for sfx in FACTOR_SUFFIXES):
                bases.append(base)
    return bases


def load_factored(store: WeightStore, base: str) -> FactorizedConv:
    try:
        u, s, v = (store.entry(base + sfx) for sfx in FACTOR_SUFFIXES)
    except KeyError:
        raise KeyError(f"no complete factor triple for {base!r}") from None
    try:
        shape = tuple(int(d) for d in u.meta["orig_shape"].split(","))
    except (KeyError, ValueError):
        raise ShapeError(f"{base}.u lacks a readable orig_shape") from None
    return FactorizedConv(u.tensor, s.tensor, v.tensor, shape, u.meta.get("reshape", "table1"))


def densify_store(store: WeightStore) -> WeightStore:
    """Replace every factor triple by its reconstructed dense conv weight."""
    bases = set(factored_bases(store))
    out = []
    for e in store:
        if e.role == "svd-factor" and e.name[:-2] in bases:
            if e.name.endswith(".u"):
                out.append(Entry(e.name[:-2], decompress_conv(load_factored(store, e.name[:-2])),
                                 "conv-weight"))
            continue
        out.append(e)
    return WeightStore(out, store.metadata)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PruneConfig:
    fraction: float
    scope: str = "per-tensor"

    def __post_init__(self):
        if not (0.0 <= float(self.fraction) <= 1.0):
            raise ConfigError(f"prune fraction must be in [0, 1], got {self.fraction}")
        if self.scope not in SCOPES:
            raise ConfigError(f"prune scope must be one of {SCOPES}, got {self.scope!r}")


@dataclass(frozen=True)
class SvdConfig:
    policy: RankPolicy
    mode: str = "table1"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"svd mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class CompressionConfig:
    prune: PruneConfig | None = None
    svd: SvdConfig | None = None
    store_factored: bool | None = None
    roles: tuple[str, ...] | None = ("conv-weight",)
    names: tuple[str, ...] | None = None
    min_elements: int = 512

    def __post_init__(self):
        if self.prune is None and self.svd is None:
            raise ConfigError("config needs at least one of 'prune' or 'svd'")
        if self.store_factored is None:
            object.__setattr__(self, "store_factored", self.svd is not None)
        if self.min_elements < 0:
            raise ConfigError("min_elements must be >= 0")

    @property
    def label(self) -> str:
        if self.prune and self.svd:
            return "Weight pruning + SVD"
        return "SVD only" if self.svd else "Weight pruning"

    @property
    def operations(self) -> list[str]:
        return [op for op, on in (("prune", self.prune), ("svd", self.svd)) if on]

    def to_dict(self) -> dict:
        d: dict = {}
        if self.prune:
            d["prune"] = {"fraction": self.prune.fraction, "scope": self.prune.scope}
        if self.svd:
            d["svd"] = {"policy": self.svd.policy.to_dict(), "mode": self.svd.mode}
        d["store_factored"] = self.store_factored
        d["selector"] = {
            "roles": list(self.roles) if self.roles is not None else None,
            "names": list(self.names) if self.names is not None else None,
        }
        d["min_elements"] = self.min_elements
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CompressionConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {"prune", "svd", "store_factored", "selector", "min_elements"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            prune = svd = None
            if d.get("prune") is not None:
                p = d["prune"]
                prune = PruneConfig(float(p["fraction"]), p.get("scope", "per-tensor"))
            if d.get("svd") is not None:
                s = d["svd"]
                svd = SvdConfig(RankPolicy.from_dict(s["policy"]), s.get("mode", "table1"))
            roles, names = _parse_selector(d.get("selector"))
            return cls(prune, svd, d.get("store_factored"), roles, names,
                       int(d.get("min_elements", 512)))
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None

    @classmethod
    def from_json(cls, path) -> "CompressionConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON: {exc}") from None
        return cls.from_dict(data)


def _parse_selector(sel):
    """Selector forms: ``None`` (conv weights), ``"role"``, ``["role", ...]`` or
    ``{"roles": [...] | null, "names": [glob, ...] | null}``."""
    if sel is None:
        return ("conv-weight",), None
    if isinstance(sel, str):
        return (sel,), None
    if isinstance(sel, list):
        return tuple(sel), None
    if isinstance(sel, dict):
        roles = sel.get("roles", ["conv-weight"])
        names = sel.get("names")
        return (tuple(roles) if roles is not None else None,
                tuple(names) if names is not None else None)
    raise ConfigError(f"unsupported selector {sel!r}")


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class LayerReport:
    name: str
    shape: list[int]
    status: str
    orig_params: int
    factored_params: int | None = None
    rank: int | None = None
    matrix_shape: list[int] | None = None
    recon_error: float | None = None
    recon_rel_error: float | None = None
    nonzero_fraction: float | None = None
    pruned_zeroed: int | None = None
    skip_reason: str | None = None


@dataclass
class CompressionReport:
    label: str
    config: dict
    operations: list[str]
    layers: list[LayerReport] = field(default_factory=list)
    params_before: int = 0
    params_after: int = 0
    bytes_before: int = 0
    bytes_after: int = 0

    @property
    def totals(self) -> dict:
        factored = [l for l in self.layers if l.factored_params is not None]
        return {
            "orig_params": sum(l.orig_params for l in self.layers),
            "factored_layers": len(factored),
            "factored_orig_params": sum(l.orig_params for l in factored),
            "factored_params": sum(l.factored_params for l in factored),
            "pruned_zeroed": sum(l.pruned_zeroed or 0 for l in self.layers),
            "skipped_layers": sum(1 for l in self.layers if l.status == "skipped"),
            "store_params_before": self.params_before,
            "store_params_after": self.params_after,
            "bytes_before": self.bytes_before,
            "bytes_after": self.bytes_after,
        }

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "operations": self.operations,
            "config": self.config,
            "layers": [{k: v for k, v in vars(l).items()} for l in self.layers],
            "totals": self.totals,
            "weight_size_note": "weight size is the serialized .wstore byte count",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        mb = lambda b: f"{b / 1e6:.3f}"
        lines = [_table(
            ["Model", "Frame Rate (FPS)", "mAP@50", "Weight Size (MB)"],
            [["Original", "", "", mb(self.bytes_before)],
             [self.label, "", "", mb(self.bytes_after)]],
        ), ""]
        rows = []
        for l in self.layers:
            if l.rank is None:
                rows.append([l.name, _shape_str(l.shape), "-", "-", str(l.orig_params),
                             "-", "-", "-", "-", "-", l.skip_reason or l.status])
                continue
            r, (rows_m, cols_m) = l.rank, l.matrix_shape
            rows.append([
                l.name, _shape_str(l.shape), f"{rows_m}x{cols_m}", str(r), str(l.orig_params),
                str(r * rows_m), str(r), str(r * cols_m), str(l.factored_params),
                f"{l.recon_rel_error:.3e}", f"{100 * l.nonzero_fraction:.1f}",
            ])
        t = self.totals
        rows.append(["total", "", "", "", str(t["orig_params"]), "", "", "",
                     str(t["factored_params"]), "", ""])
        lines.append(_table(
            ["Layer", "Origin", "Reshaped", "R", "OIK^2", "U", "S", "V", "U+S+V",
             "Rel. error", "Nonzero %"],
            rows,
        ))
        lines.append("")
        lines.append("Weight size = serialized .wstore bytes / 1e6. mAP@50 and FPS are "
                     "filled in by 'eval' and 'bench'.")
        return "\n".join(lines) + "\n"


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    fmt = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(header), sep] + [fmt(r) for r in rows])


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def run_pipeline(store: WeightStore, config: CompressionConfig) -> tuple[WeightStore, CompressionReport]:
    """Apply the configured variant; pruning always runs before SVD.

    Selected conv weights below ``min_elements`` are left dense and reported
    as skipped by the SVD stage. With ``store_factored`` the output holds
    ``<name>.u/.s/.v`` entries in place of each factored weight; otherwise the
    reconstruction replaces the weight in place.
    """
    report = CompressionReport(config.label, config.to_dict(), config.operations,
                               params_before=store.numel(),
                               bytes_before=serialized_size(store))
    selected = set(select_entries(store, config.roles, config.names))
    zeroed: dict[str, int] = {}
    if config.prune:
        store, prep = prune_store(store, config.prune.fraction, config.prune.scope,
                                  config.roles, config.names)
        zeroed = {r.name: r.zeroed for r in prep.rows}

    out: list[Entry] = []
    for e in store:
        is_layer = e.role == "conv-weight" or e.name in selected
        if not is_layer:
            out.append(e)
            continue
        row = LayerReport(e.name, list(e.shape), "dense", e.numel,
                          pruned_zeroed=zeroed.get(e.name))
        report.layers.append(row)
        if e.name not in selected:
            row.status, row.skip_reason = "skipped", "not selected"
            out.append(e)
            continue
        if config.svd is None:
            row.status = "pruned"
            row.nonzero_fraction = float(np.count_nonzero(e.tensor)) / e.numel
            out.append(e)
            continue
        if e.tensor.ndim != 4:
            row.status, row.skip_reason = "skipped", "not a rank-4 conv weight"
            out.append(e)
            continue
        if e.numel < config.min_elements:
            row.status, row.skip_reason = "skipped", f"below min_elements ({config.min_elements})"
            out.append(e)
            continue
        try:
            f = compress_conv(e.tensor, config.svd.policy, config.svd.mode)
            dense = decompress_conv(f)
        except CompressKitError as exc:
            raise LayerError(e.name, exc) from exc
        except ValueError as exc:
            raise LayerError(e.name, ConfigError(str(exc))) from exc
        w64 = e.tensor.astype(np.float64)
        err = float(np.linalg.norm(w64 - dense.astype(np.float64)))
        norm = float(np.linalg.norm(w64))
        row.orig_params, row.factored_params = param_counts(f)
        row.rank = f.rank
        row.matrix_shape = list(f.matrix_shape)
        row.recon_error = err
        row.recon_rel_error = err / norm if norm > 0 else 0.0
        row.nonzero_fraction = float(np.count_nonzero(dense)) / dense.size
        if config.store_factored:
            row.status = "factored"
            out.extend(factor_entries(e.name, f))
        else:
            row.status = "reconstructed"
            out.append(Entry(e.name, dense, e.role, e.meta))

    md = dict(store.metadata)
    md["compresskit.variant"] = config.label
    result = WeightStore(out, md)
    report.params_after = result.numel()
    report.bytes_after = serialized_size(result)
    return result, report


def write_report(report: CompressionReport, json_path=None, text_path=None) -> None:
    if json_path:
        Path(json_path).write_text(report.to_json() + "\n", encoding="utf-8")
    if text_path:
        Path(text_path).write_text(report.to_text(), encoding="utf-8")
