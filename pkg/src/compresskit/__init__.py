"""Magnitude pruning and truncated-SVD factorization of convolution weights.

Modules: :mod:`~compresskit.weightstore` (tensor container), :mod:`~compresskit.lowrank`
(Jacobi SVD, truncation), :mod:`~compresskit.prune`, :mod:`~compresskit.pipeline`
(variants and parameter accounting), :mod:`~compresskit.microinfer` (dense vs
factored conv, benchmark), :mod:`~compresskit.evalkit` (IoU, PR curves, mAP).
"""
from ._accel import JIT_ENABLED, backend_name
from .lowrank import RankPolicy, SvdFactors, full_svd, reconstruct, reshape_for_svd, truncated_svd
from .pipeline import (
    CompressionConfig,
    CompressionReport,
    FactorizedConv,
    compress_conv,
    decompress_conv,
    param_counts,
    run_pipeline,
)
from .prune import prune_l1, prune_store
from .weightstore import Entry, TensorStats, WeightStore, load_store, save_store, tensor_stats

__version__ = "0.1.0"
