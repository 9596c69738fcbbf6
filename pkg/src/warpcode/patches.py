"""Image patches as flat vectors with explicit contrast-normalization state."""

from dataclasses import dataclass, field

import numpy as np

# A patch is "normalized" when its mean is zero and its L2 norm is one.
NORMALIZATION_TOL = 1e-10

# Centered vectors with a smaller norm than this cannot be normalized stably.
DEGENERATE_NORM = 1e-8


@dataclass(frozen=True)
class ImagePatch:
    """A flat real-valued pixel vector.

    The ``normalized`` flag is trusted by downstream detector code, so it is
    verified at construction time: a patch may only claim to be normalized if
    its mean is 0 and its L2 norm is 1 (within ``NORMALIZATION_TOL``).
    ``degenerate`` marks patches whose contrast was too small to normalize.
    """

    values: np.ndarray
    normalized: bool = False
    degenerate: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size == 0:
            raise ValueError("empty patch")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        if self.normalized:
            mean = float(values.mean())
            norm = float(np.linalg.norm(values))
            if abs(mean) > NORMALIZATION_TOL or abs(norm - 1.0) > NORMALIZATION_TOL:
                raise ValueError(
                    f"patch flagged normalized but mean={mean:.3g}, norm={norm:.6g}"
                )

    @property
    def dim(self) -> int:
        return self.values.size


def contrast_normalize(raw) -> ImagePatch:
    """Subtract the mean and divide by the L2 norm.

    Inputs whose centered norm falls below ``DEGENERATE_NORM`` (constant
    vectors, for instance) cannot be normalized; they come back as an
    all-zero patch with ``degenerate=True``.
    """
    values = np.asarray(raw, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValueError("empty patch")
    centered = values - values.mean()
    centered -= centered.mean()  # second pass kills rounding residue of the mean
    norm = float(np.linalg.norm(centered))
    if norm < DEGENERATE_NORM:
        return ImagePatch(np.zeros_like(centered), normalized=False, degenerate=True)
    return ImagePatch(centered / norm, normalized=True)
