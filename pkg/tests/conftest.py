import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from compresskit.weightstore import Entry, WeightStore  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_store(rng, n_tensors=5, with_meta=True):
    entries = []
    for k in range(n_tensors):
        kind = rng.integers(0, 3)
        if kind == 0:
            shape = tuple(int(d) for d in rng.integers(1, 5, 4))
            role = "conv-weight"
        elif kind == 1:
            shape = (int(rng.integers(1, 9)),)
            role = "bias"
        else:
            shape = tuple(int(d) for d in rng.integers(1, 6, rng.integers(1, 4)))
            role = "other"
        data = rng.standard_normal(shape).astype(np.float32)
        meta = {"k": str(k)} if with_meta and rng.uniform() < 0.3 else {}
        entries.append(Entry(f"layer{k}.t", data, role, meta))
    md = {"source": "random", "ünïcode": "✓"} if with_meta else {}
    return WeightStore(entries, md)


def conv_store(shapes, rng, biases=True):
    entries = []
    for k, shape in enumerate(shapes):
        entries.append(Entry(f"conv{k}.weight", rng.standard_normal(shape).astype(np.float32),
                             "conv-weight"))
        if biases:
            entries.append(Entry(f"conv{k}.bias", rng.standard_normal(shape[0]).astype(np.float32),
                                 "bias"))
    return WeightStore(entries, {"model": "synthetic"})
