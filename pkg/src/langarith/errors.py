"""Exception hierarchy shared across the package.

Everything raised for bad *data* (broken containers, incompatible maps,
stale fingerprints) derives from :class:`LangArithError` so callers (and
the CLI) can distinguish data problems from programming errors, which
surface as plain ``ValueError``/``TypeError``.
"""


class LangArithError(Exception):
    """Base class for data-level errors raised by this package."""


class ContainerFormatError(LangArithError):
    """A checkpoint container is malformed (header, offsets, truncation)."""

    def __init__(self, message: str, *, path=None, tensor: str | None = None):
        detail = message
        if tensor is not None:
            detail = f"tensor {tensor!r}: {detail}"
        if path is not None:
            detail = f"{path}: {detail}"
        super().__init__(detail)
        self.path = path
        self.tensor = tensor


class Fp16RangeError(LangArithError):
    """A finite value exceeds the FP16 representable range on conversion."""


class CompatibilityError(LangArithError):
    """Two tensor maps are not arithmetic-compatible.

    Carries the full :class:`~langarith.tensor_store.CompatReport` in
    ``self.report`` for structured inspection.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class FingerprintMismatchError(LangArithError):
    """A delta's recorded base fingerprint does not match the given base."""


class UnknownLanguageError(LangArithError):
    """A language code is not in the related-language table."""


class SweepError(LangArithError):
    """A sweep could not produce any usable result."""
