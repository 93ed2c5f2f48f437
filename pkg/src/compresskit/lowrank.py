"""Singular value decomposition by one-sided Jacobi, rank policies and truncation.

Internally everything runs in float64; factors are stored as float32.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConvergenceError, NonFiniteError, ShapeError

SWEEP_CAP = 60
ROTATION_TOL = 1e-10
MAX_SHORT_SIDE = 4096


@dataclass(frozen=True, eq=False)
class SvdFactors:
    """``a ~= u @ diag(s) @ v.T`` with ``u`` (m, k), ``s`` (k,), ``v`` (n, k)."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.s.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.u.shape[0]), int(self.v.shape[0])

    def same_as(self, other: "SvdFactors") -> bool:
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in ((self.u, other.u), (self.s, other.s), (self.v, other.v))
        )


@dataclass(frozen=True)
class RankPolicy:
    """How many singular triples to keep.

    Build with :meth:`fixed`, :meth:`energy` or :meth:`full`.
    """

    kind: str
    k: int | None = None
    fraction: float | None = None

    def __post_init__(self):
        if self.kind == "fixed":
            if not isinstance(self.k, (int, np.integer)) or isinstance(self.k, bool) or self.k < 1:
                raise ValueError(f"fixed rank must be an integer >= 1, got {self.k!r}")
        elif self.kind == "energy":
            f = self.fraction
            if f is None or not (0.0 < f <= 1.0):
                raise ValueError(f"energy fraction must be in (0, 1], got {f!r}")
        elif self.kind != "full":
            raise ValueError(f"unknown rank policy {self.kind!r}")

    @classmethod
    def fixed(cls, k: int) -> "RankPolicy":
        return cls("fixed", k=k)

    @classmethod
    def energy(cls, fraction: float) -> "RankPolicy":
        return cls("energy", fraction=float(fraction))

    @classmethod
    def full(cls) -> "RankPolicy":
        return cls("full")

    def to_dict(self) -> dict:
        if self.kind == "fixed":
            return {"type": "fixed", "k": int(self.k)}
        if self.kind == "energy":
            return {"type": "energy", "fraction": self.fraction}
        return {"type": "full"}

    @classmethod
    def from_dict(cls, d: dict) -> "RankPolicy":
        kind = d.get("type")
        if kind == "fixed":
            return cls.fixed(d.get("k"))
        if kind == "energy":
            return cls.energy(d.get("fraction"))
        if kind == "full":
            return cls.full()
        raise ValueError(f"unknown rank policy {kind!r}")

    def __str__(self) -> str:
        if self.kind == "fixed":
            return f"fixed({self.k})"
        if self.kind == "energy":
            return f"energy({self.fraction:g})"
        return "full"


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {list(a.shape)}")
    if not np.isfinite(a).all():
        raise NonFiniteError("matrix contains NaN or Inf")
    return a


def _complete_basis(u: np.ndarray, good: np.ndarray) -> None:
    """Replace columns of ``u`` not flagged ``good`` by an orthonormal completion.

    Candidates are canonical basis vectors in index order, orthogonalized
    (twice) against the columns already accepted. Deterministic.
    """
    m, k = u.shape
    accepted = [u[:, j] for j in range(k) if good[j]]
    e = 0
    for j in range(k):
        if good[j]:
            continue
        while True:
            cand = np.zeros(m)
            cand[e] = 1.0
            e += 1
            for _ in range(2):
                for q in accepted:
                    cand -= (q @ cand) * q
            nrm = np.linalg.norm(cand)
            if nrm > 0.5:
                break
        cand /= nrm
        u[:, j] = cand
        accepted.append(cand)


def _svd64(a: np.ndarray, use_jit=None):
    """Thin SVD in float64: returns (u (m,k), s (k,), v (n,k)), ``k = min(m, n)``."""
    m, n = a.shape
    if min(m, n) > MAX_SHORT_SIDE:
        raise ShapeError(f"short side {min(m, n)} exceeds the supported maximum {MAX_SHORT_SIDE}")
    flipped = m < n
    work = a.T if flipped else a
    rows, cols = work.shape

    # columns of `work` as rows, so rotations touch contiguous memory
    at = np.array(work.T, dtype=np.float64, order="C")
    vt = np.eye(cols)
    fro = math.sqrt(float(np.sum(at * at)))
    floor = (ROTATION_TOL * fro) ** 2
    sweeps = _kernels.jacobi_rotate(at, vt, ROTATION_TOL, floor, SWEEP_CAP, use_jit=use_jit)
    if sweeps < 0:
        raise ConvergenceError(SWEEP_CAP)

    norms = np.sqrt(np.einsum("ij,ij->i", at, at))
    order = np.argsort(-norms, kind="stable")
    s = norms[order]
    v = vt[order].T.copy()
    u = np.zeros((rows, cols))
    smax = s[0] if s.size else 0.0
    good = s > max(rows, cols) * np.finfo(np.float64).eps * smax
    if smax == 0.0:
        good[:] = False
    u[:, good] = (at[order][good] / s[good, None]).T
    if not good.all():
        _complete_basis(u, good)

    if flipped:
        u, v = v, u
    # sign convention: largest-|.| entry of each u column is non-negative,
    # first index wins ties (argmax returns the first maximum)
    idx = np.argmax(np.abs(u), axis=0)
    flip = u[idx, np.arange(u.shape[1])] < 0
    u[:, flip] *= -1.0
    v[:, flip] *= -1.0
    return u, s, v


def _factors(u, s, v) -> SvdFactors:
    out = []
    for arr in (u, s, v):
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        arr.setflags(write=False)
        out.append(arr)
    return SvdFactors(*out)


def full_svd(a, *, use_jit=None) -> SvdFactors:
    """Thin SVD of ``a`` with ``k = min(m, n)``.

    Raises :class:`NonFiniteError` for NaN/Inf input and
    :class:`ConvergenceError` when the Jacobi sweeps hit their cap.
    """
    return _factors(*_svd64(_as_matrix(a), use_jit=use_jit))


def energy_rank(s, fraction: float) -> int:
    """Smallest k whose leading ``s[:k]**2`` reach ``fraction`` of the total energy."""
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empty spectrum")
    sq = s * s
    total = float(sq.sum())
    if total == 0.0:
        return 1
    cum = np.cumsum(sq) / total
    k = int(np.searchsorted(cum, fraction, side="left")) + 1
    return min(k, s.size)


def select_rank(s, policy: RankPolicy) -> int:
    kmax = int(np.asarray(s).shape[0])
    if policy.kind == "full":
        return kmax
    if policy.kind == "fixed":
        if policy.k > kmax:
            raise ValueError(f"fixed rank {policy.k} exceeds min(m, n) = {kmax}")
        return int(policy.k)
    return energy_rank(s, policy.fraction)


def truncated_svd(a, policy: RankPolicy, *, use_jit=None) -> SvdFactors:
    """Top-k singular triples of ``a`` with k chosen by ``policy``.

    A fixed rank larger than ``min(m, n)`` is an error, never clamped.
    """
    a = _as_matrix(a)
    if policy.kind == "fixed" and policy.k > min(a.shape):
        raise ValueError(f"fixed rank {policy.k} exceeds min(m, n) = {min(a.shape)}")
    u, s, v = _svd64(a, use_jit=use_jit)
    k = select_rank(s, policy)
    return _factors(u[:, :k], s[:k], v[:, :k])


def reconstruct(f: SvdFactors) -> np.ndarray:
    """``u @ diag(s) @ v.T`` accumulated in float64."""
    u = np.asarray(f.u, dtype=np.float64)
    s = np.asarray(f.s, dtype=np.float64)
    v = np.asarray(f.v, dtype=np.float64)
    if u.ndim != 2 or v.ndim != 2 or s.ndim != 1 or not (u.shape[1] == s.shape[0] == v.shape[1]):
        raise ShapeError(
            f"inconsistent factor shapes u{list(u.shape)} s{list(s.shape)} v{list(v.shape)}"
        )
    return (u * s) @ v.T


def largest_divisor_at_most(n: int, bound: int) -> int:
    for d in range(min(bound, n), 0, -1):
        if n % d == 0:
            return d
    return 1


def reshape_for_svd(numel: int, conv_shape, mode: str = "table1") -> tuple[int, int]:
    """Matrix shape used to factor a conv weight ``[O, I, K, K]``.

    ``table1``: ``(I*K*K, O)``; the weight is laid out as ``w.reshape(O, -1).T``
    so the factors drive two GEMMs at inference.
    ``near-square``: rows is the largest divisor of ``numel`` not above
    ``floor(sqrt(numel))``; the flat row-major data is reshaped directly.
    """
    o, i, kh, kw = (int(d) for d in conv_shape)
    if numel != o * i * kh * kw or numel <= 0:
        raise ShapeError(f"numel {numel} does not match conv shape {list(conv_shape)}")
    if mode == "table1":
        return i * kh * kw, o
    if mode == "near-square":
        rows = largest_divisor_at_most(numel, math.isqrt(numel))
        return rows, numel // rows
    raise ValueError(f"unknown reshape mode {mode!r}")
