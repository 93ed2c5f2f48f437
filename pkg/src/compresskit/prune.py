"""Element-wise L1 (magnitude) pruning.

The "L1 norm" of a single weight is its absolute value. The smallest
``floor(fraction * N)`` magnitudes are set to +0.0; ties are resolved by
pruning the lower flat index first (global scope: earlier tensor first).
"""
from __future__ import annotations

import fnmatch
import json
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from typing import Sequence

import numpy as np

from .errors import EmptySelectionError, NonFiniteError
from .weightstore import Entry, WeightStore, as_tensor

SCOPES = ("per-tensor", "global")


def prune_count(fraction: float, n: int) -> int:
    """``floor(fraction * n)`` with ``fraction`` read as the decimal it prints as.

    ``0.3 * 10`` must give 3, not 2 as the binary value of 0.3 would.
    """
    return int(Decimal(repr(float(fraction))) * n // 1)


def _check_fraction(fraction) -> float:
    fraction = float(fraction)
    if not (0.0 <= fraction <= 1.0):
        raise ValueError(f"prune fraction must be in [0, 1], got {fraction}")
    return fraction


def _check_finite(a: np.ndarray, name: str) -> None:
    if not np.isfinite(a).all():
        raise NonFiniteError(f"{name}: tensor contains NaN or Inf")


@dataclass(frozen=True)
class PruneRow:
    name: str
    elements: int
    zeroed: int
    threshold: float


@dataclass
class PruneReport:
    fraction: float
    scope: str
    rows: list[PruneRow] = field(default_factory=list)

    @property
    def elements(self) -> int:
        return sum(r.elements for r in self.rows)

    @property
    def zeroed(self) -> int:
        return sum(r.zeroed for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "fraction_requested": self.fraction,
            "scope": self.scope,
            "tensors": [asdict(r) for r in self.rows],
            "totals": {"elements": self.elements, "zeroed": self.zeroed},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _zero_smallest(flat: np.ndarray, z: int) -> tuple[np.ndarray, float, np.ndarray]:
    out = flat.copy()
    if z == 0:
        return out, 0.0, np.empty(0, dtype=np.intp)
    order = np.argsort(np.abs(flat), kind="stable")
    victims = order[:z]
    threshold = float(abs(flat[order[z - 1]]))
    out[victims] = 0.0  # +0.0
    return out, threshold, victims


def prune_l1(t, fraction: float, name: str = "") -> tuple[np.ndarray, PruneRow]:
    """Zero the ``floor(fraction * numel)`` smallest-magnitude elements of ``t``.

    Every other element is returned bit-identical. The row's ``threshold`` is
    the largest pruned magnitude (0.0 when nothing is pruned).
    """
    fraction = _check_fraction(fraction)
    t = np.asarray(t, dtype=np.float32)
    _check_finite(t, name or "tensor")
    z = prune_count(fraction, t.size)
    flat, threshold, _ = _zero_smallest(t.ravel(), z)
    return as_tensor(flat.reshape(t.shape)), PruneRow(name, int(t.size), z, threshold)


def select_entries(store: WeightStore, roles: Sequence[str] | None = ("conv-weight",),
                   names: Sequence[str] | None = None) -> list[str]:
    """Names of entries whose role is in ``roles`` and whose name matches a glob in ``names``.

    ``None`` for either filter means "no restriction".
    """
    out = []
    for e in store:
        if roles is not None and e.role not in roles:
            continue
        if names is not None and not any(fnmatch.fnmatchcase(e.name, p) for p in names):
            continue
        out.append(e.name)
    return out


def prune_store(store: WeightStore, fraction: float, scope: str = "per-tensor",
                roles: Sequence[str] | None = ("conv-weight",),
                names: Sequence[str] | None = None) -> tuple[WeightStore, PruneReport]:
    """Prune the selected tensors of ``store``; unselected entries pass through.

    ``per-tensor`` prunes each selected tensor to its own fraction. ``global``
    ranks all selected elements together and prunes ``floor(fraction * total)``
    of them. Selecting nothing raises :class:`EmptySelectionError`.
    """
    fraction = _check_fraction(fraction)
    if scope not in SCOPES:
        raise ValueError(f"unknown prune scope {scope!r}")
    selected = select_entries(store, roles, names)
    if not selected:
        raise EmptySelectionError("empty selection: no tensor matches the prune selector")
    for n in selected:
        _check_finite(store[n], n)

    report = PruneReport(fraction, scope)
    replaced: dict[str, np.ndarray] = {}
    if scope == "per-tensor":
        for n in selected:
            replaced[n], row = prune_l1(store[n], fraction, n)
            report.rows.append(row)
    else:
        flats = [store[n].ravel() for n in selected]
        sizes = [f.size for f in flats]
        cat = np.concatenate(flats)
        z = prune_count(fraction, cat.size)
        pruned, threshold, victims = _zero_smallest(cat, z)
        was_pruned = np.zeros(cat.size, dtype=bool)
        was_pruned[victims] = True
        start = 0
        for n, size in zip(selected, sizes):
            chunk = slice(start, start + size)
            replaced[n] = as_tensor(pruned[chunk].reshape(store[n].shape))
            zeroed = int(was_pruned[chunk].sum())
            report.rows.append(PruneRow(n, size, zeroed, threshold if zeroed else 0.0))
            start += size

    entries = [
        Entry(e.name, replaced[e.name], e.role, e.meta) if e.name in replaced else e
        for e in store
    ]
    return WeightStore(entries, store.metadata), report
