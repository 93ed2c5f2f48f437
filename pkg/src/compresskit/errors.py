"""Exception hierarchy.

Everything raised on purpose derives from :class:`CompressKitError`. The CLI
maps :class:`NumericError` subclasses to exit code 3 and everything else to 2.
"""


class CompressKitError(Exception):
    pass


class NumericError(CompressKitError):
    pass


class NonFiniteError(NumericError, ValueError):
    pass


class ConvergenceError(NumericError):
    def __init__(self, sweeps: int, message: str | None = None):
        self.sweeps = sweeps
        super().__init__(message or f"Jacobi SVD did not converge after {sweeps} sweeps")


class ShapeError(CompressKitError, ValueError):
    pass


class StoreError(CompressKitError, ValueError):
    """Invalid in-memory store content (names, roles, duplicates)."""


class StoreFormatError(CompressKitError, ValueError):
    """A ``.wstore`` file does not conform to the container layout."""


class TruncatedHeaderError(StoreFormatError):
    pass


class MalformedManifestError(StoreFormatError):
    pass


class UnsupportedDtypeError(StoreFormatError):
    pass


class TruncatedBlobError(StoreFormatError):
    pass


class BlobLengthMismatchError(StoreFormatError):
    pass


class ConfigError(CompressKitError, ValueError):
    pass


class EmptySelectionError(CompressKitError, ValueError):
    pass


class LayerError(CompressKitError):
    """Wraps a failure inside one layer of the pipeline or a network."""

    def __init__(self, layer, cause: Exception):
        self.layer = layer
        self.cause = cause
        super().__init__(f"layer {layer!r}: {cause}")


class NetworkSpecError(CompressKitError, ValueError):
    pass


class LabelFormatError(CompressKitError, ValueError):
    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")
