"""Batch-1 CPU inference for small conv nets: dense vs SVD-factored convolution.

Both conv paths share one im2col kernel and one GEMM (numpy ``@``), so timing
differences come from the rank, not from kernel quality. With the patch
matrix ``cols`` laid out ``(I*K*K, P)``:

    dense     out = w.reshape(O, -1) @ cols
    factored  out = (v * s) @ (u.T @ cols)

``v * s`` is ``(diag(s) @ v.T).T``, folded once per layer.
"""
from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from ._accel import backend_name
from .errors import NetworkSpecError, ShapeError
from .pipeline import FactorizedConv, load_factored
from .weightstore import WeightStore

KINDS = ("conv-dense", "conv-factored", "leaky-relu", "maxpool")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    weight: str | None = None
    bias: str | None = None
    stride: int = 1
    pad: int = 0
    size: int = 2
    alpha: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise NetworkSpecError(f"unknown layer kind {self.kind!r}")
        if self.kind.startswith("conv") and not self.weight:
            raise NetworkSpecError(f"{self.kind} layer needs a 'weight' name")
        if self.stride < 1 or self.pad < 0 or self.size < 1:
            raise NetworkSpecError("stride and size must be >= 1 and pad >= 0")
        if self.kind == "leaky-relu" and not (0.0 < self.alpha <= 1.0):
            raise NetworkSpecError(f"leaky-relu slope must be in (0, 1], got {self.alpha}")

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        if not isinstance(d, dict) or "kind" not in d:
            raise NetworkSpecError(f"layer record needs a 'kind': {d!r}")
        known = {"kind", "weight", "bias", "stride", "pad", "size", "alpha"}
        extra = set(d) - known
        if extra:
            raise NetworkSpecError(f"unknown layer keys {sorted(extra)}")
        d = dict(d)
        if d["kind"] == "maxpool" and "stride" not in d:
            d["stride"] = d.get("size", 2)
        return cls(**d)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind.startswith("conv"):
            d.update(weight=self.weight, bias=self.bias, stride=self.stride, pad=self.pad)
        elif self.kind == "maxpool":
            d.update(size=self.size, stride=self.stride)
        else:
            d["alpha"] = self.alpha
        return d


def load_network(path) -> list[LayerSpec]:
    """Read a network spec: a JSON list of layer records or ``{"layers": [...]}``."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise NetworkSpecError(f"{path}: malformed JSON: {exc}") from None
    if isinstance(data, dict):
        data = data.get("layers")
    if not isinstance(data, list):
        raise NetworkSpecError(f"{path}: expected a list of layer records")
    return [LayerSpec.from_dict(d) for d in data]


def conv_output_hw(h: int, w: int, k: int, stride: int, pad: int) -> tuple[int, int]:
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


def conv_flops(positions: int, patch: int, out_channels: int, rank: int | None = None,
               folded: bool = True) -> int:
    """Analytic GEMM FLOPs for one conv layer (one multiply-add = 2 FLOPs).

    Dense: ``2*P*IK2*O``. Factored: ``2*P*(IK2*R + R*O)``, plus ``P*R``
    scaling multiplies when ``diag(s)`` is not folded into ``v.T``.
    """
    if rank is None:
        return 2 * positions * patch * out_channels
    flops = 2 * positions * (patch * rank + rank * out_channels)
    return flops if folded else flops + positions * rank


def _check_input(x, channels: int) -> tuple[int, int, int]:
    if x.ndim != 3:
        raise ShapeError(f"feature map must be [C, H, W], got shape {list(x.shape)}")
    if x.shape[0] != channels:
        raise ShapeError(f"channel mismatch: input has {x.shape[0]} channels, weight expects {channels}")
    return x.shape


def _conv_geometry(x, channels, k, stride, pad):
    if stride < 1 or pad < 0:
        raise ShapeError("stride must be >= 1 and pad >= 0")
    _, h, w = _check_input(x, channels)
    oh, ow = conv_output_hw(h, w, k, stride, pad)
    if oh < 1 or ow < 1:
        raise ShapeError(f"non-positive output size {oh}x{ow} for input {h}x{w}, kernel {k}")
    return oh, ow


def _finish(out, bias, oh, ow):
    if bias is not None:
        out += np.asarray(bias, dtype=np.float32).reshape(-1, 1)
    return out.reshape(-1, oh, ow)


def conv2d_dense(x, w, bias=None, stride: int = 1, pad: int = 0) -> np.ndarray:
    """``[C,H,W]`` input, ``[O,C,K,K]`` weight, zero padding; returns ``[O,H',W']`` float32."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv weight must be [O, I, K, K], got {list(w.shape)}")
    o, i, k, _ = w.shape
    oh, ow = _conv_geometry(x, i, k, stride, pad)
    cols = _kernels.im2col(x, k, k, stride, pad, oh, ow)
    return _finish(w.reshape(o, -1) @ cols, bias, oh, ow)


def fold_scale(f: FactorizedConv) -> tuple[np.ndarray, np.ndarray]:
    """GEMM operands for the factored path: ``u.T`` ``(R, IK2)`` and ``v * s`` ``(O, R)``."""
    ut = np.ascontiguousarray(f.u.T, dtype=np.float32)
    vs = np.ascontiguousarray((f.v * f.s[None, :]).astype(np.float32))
    return ut, vs


def conv2d_factored(x, f: FactorizedConv, bias=None, stride: int = 1, pad: int = 0,
                    folded: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """Convolution with an SVD-factored weight as two GEMMs.

    ``folded`` may carry a precomputed :func:`fold_scale` result.
    """
    if f.mode != "table1":
        raise ShapeError("factored execution needs table1 factors ([I*K*K, R] x [O, R])")
    x = np.ascontiguousarray(x, dtype=np.float32)
    o, i, k, _ = f.orig_shape
    oh, ow = _conv_geometry(x, i, k, stride, pad)
    cols = _kernels.im2col(x, k, k, stride, pad, oh, ow)
    ut, vs = fold_scale(f) if folded is None else folded
    return _finish(vs @ (ut @ cols), bias, oh, ow)


def leaky_relu(x, alpha: float = 0.1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    return np.where(x >= 0, x, np.float32(alpha) * x)


def maxpool2d(x, size: int = 2, stride: int | None = None) -> np.ndarray:
    """Window max without padding."""
    stride = size if stride is None else stride
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise ShapeError(f"feature map must be [C, H, W], got shape {list(x.shape)}")
    oh, ow = conv_output_hw(x.shape[1], x.shape[2], size, stride, 0)
    if oh < 1 or ow < 1:
        raise ShapeError(f"pool window {size} larger than input {x.shape[1]}x{x.shape[2]}")
    return _kernels.maxpool(x, size, stride, oh, ow)


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

@dataclass
class _Step:
    spec: LayerSpec
    run: Callable[[np.ndarray], np.ndarray]
    out_shape: tuple[int, int, int]
    flops: int = 0
    dense_flops: int = 0


def _bias(store, spec, out_channels):
    if spec.bias is None:
        return None
    b = store[spec.bias].ravel()
    if b.size != out_channels:
        raise ShapeError(f"bias {spec.bias!r} has {b.size} entries, expected {out_channels}")
    return b


def compile_network(layers: Sequence[LayerSpec], store: WeightStore,
                    input_shape: Sequence[int]) -> list[_Step]:
    """Resolve weights, check the shape chain and precompute per-layer operands."""
    shape = tuple(int(d) for d in input_shape)
    if len(shape) != 3 or min(shape) < 1:
        raise NetworkSpecError(f"input shape must be C,H,W with positive entries, got {list(shape)}")
    steps = []
    for idx, spec in enumerate(layers):
        try:
            steps.append(_compile_one(spec, store, shape))
        except KeyError as exc:
            raise NetworkSpecError(f"layer {idx} ({spec.kind}): missing weight: {exc.args[0]}") from None
        except ShapeError as exc:
            raise NetworkSpecError(f"layer {idx} ({spec.kind}): shape chain broken: {exc}") from None
        shape = steps[-1].out_shape
    return steps


def _compile_one(spec: LayerSpec, store: WeightStore, shape) -> _Step:
    c, h, w = shape
    if spec.kind == "leaky-relu":
        a = spec.alpha
        return _Step(spec, lambda x: leaky_relu(x, a), shape)
    if spec.kind == "maxpool":
        oh, ow = conv_output_hw(h, w, spec.size, spec.stride, 0)
        if oh < 1 or ow < 1:
            raise ShapeError(f"pool window {spec.size} larger than input {h}x{w}")
        size, stride = spec.size, spec.stride
        return _Step(spec, lambda x: maxpool2d(x, size, stride), (c, oh, ow))

    if spec.kind == "conv-dense":
        wt = store[spec.weight]
        if wt.ndim != 4 or wt.shape[2] != wt.shape[3]:
            raise ShapeError(f"{spec.weight!r} is not an [O, I, K, K] weight")
        o, i, k, _ = wt.shape
        rank = None
    else:
        f = load_factored(store, spec.weight)
        if f.mode != "table1":
            raise ShapeError(f"{spec.weight!r} factors use {f.mode} reshape, not executable")
        o, i, k, _ = f.orig_shape
        rank = f.rank
    if i != c:
        raise ShapeError(f"channel mismatch: input has {c} channels, {spec.weight!r} expects {i}")
    oh, ow = conv_output_hw(h, w, k, spec.stride, spec.pad)
    if oh < 1 or ow < 1:
        raise ShapeError(f"non-positive output size {oh}x{ow}")
    bias = _bias(store, spec, o)
    stride, pad = spec.stride, spec.pad
    p, patch = oh * ow, i * k * k
    dense_flops = conv_flops(p, patch, o)
    if rank is None:
        return _Step(spec, lambda x: conv2d_dense(x, wt, bias, stride, pad), (o, oh, ow),
                     dense_flops, dense_flops)
    sv = fold_scale(f)
    return _Step(spec, lambda x: conv2d_factored(x, f, bias, stride, pad, folded=sv),
                 (o, oh, ow), conv_flops(p, patch, o, rank, folded=True), dense_flops)


def run_steps(steps: Sequence[_Step], x: np.ndarray) -> np.ndarray:
    for step in steps:
        x = step.run(x)
    return x


def forward(layers: Sequence[LayerSpec], store: WeightStore, x) -> np.ndarray:
    """Apply ``layers`` in order to a ``[C, H, W]`` map. No layers means identity."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise ShapeError(f"feature map must be [C, H, W], got shape {list(x.shape)}")
    return run_steps(compile_network(layers, store, x.shape), x)


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

@dataclass
class BenchResult:
    runs: int
    times: list[float]
    median: float
    mean: float
    min: float
    max: float
    fps: float
    flops_estimate: int
    dense_flops_estimate: int
    scale_folded: bool
    backend: str
    input_shape: list[int]
    layers: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def time_call(fn: Callable[[], object], runs: int, warmup: int) -> list[float]:
    """Wall-clock seconds for ``runs`` calls after ``warmup`` untimed ones, BLAS pinned to 1 thread."""
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        for _ in range(warmup):
            fn()
        times = []
        for _ in range(runs):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
    return times


def benchmark(layers: Sequence[LayerSpec], store: WeightStore, input_shape: Sequence[int],
              runs: int = 5, warmup: int = 1, seed: int = 0) -> BenchResult:
    """Median-of-runs wall time and FPS for one forward pass, plus analytic FLOPs.

    FLOPs count the conv GEMMs only; activations, pooling and bias adds are
    excluded. Factored layers fold ``diag(s)`` into ``v.T`` ahead of timing.
    """
    if runs < 3:
        raise ValueError(f"runs must be >= 3, got {runs}")
    if warmup < 1:
        raise ValueError(f"warmup must be >= 1, got {warmup}")
    steps = compile_network(layers, store, input_shape)
    x = np.random.default_rng(seed).standard_normal(tuple(input_shape)).astype(np.float32)
    times = time_call(lambda: run_steps(steps, x), runs, warmup)
    med = statistics.median(times)
    per_layer = [
        {"index": i, "kind": s.spec.kind, "weight": s.spec.weight, "out_shape": list(s.out_shape),
         "flops": s.flops, "dense_flops": s.dense_flops}
        for i, s in enumerate(steps)
    ]
    return BenchResult(
        runs=runs,
        times=times,
        median=med,
        mean=statistics.fmean(times),
        min=min(times),
        max=max(times),
        fps=1.0 / med if med > 0 else float("inf"),
        flops_estimate=sum(s.flops for s in steps),
        dense_flops_estimate=sum(s.dense_flops for s in steps),
        scale_folded=True,
        backend=backend_name(),
        input_shape=[int(d) for d in input_shape],
        layers=per_layer,
    )
