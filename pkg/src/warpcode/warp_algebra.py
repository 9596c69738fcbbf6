"""Orthogonal pixel-space warps and their invariant-subspace structure.

An orthogonal warp acts on each of its (at most two-dimensional) invariant
subspaces as a plane rotation.  This module constructs warps (cyclic shifts,
grid translations, patch rotations), splits them into those subspaces with
their rotation angles, and provides commutation / shared-subspace tests.

Angle convention, used everywhere downstream: a block with basis pair
``(basis_real, basis_imag)`` and angle ``theta`` satisfies

    coords(L @ x) == R(theta) @ coords(x)

where ``coords(x) = (basis_real . x, basis_imag . x)`` and ``R`` is the
counterclockwise plane rotation.  Flipping the sign of ``basis_imag`` flips
the sign of ``theta``, so angles are canonicalized to ``[0, pi]``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import (
    DimensionError,
    OrthogonalityError,
    SingularWarpError,
)
from .patches import ImagePatch

# Orthogonality gate for the exact decomposition path.
EXACT_ORTHOGONALITY_TOL = 1e-6

# Tolerance for algebraic identities in double precision.
ALGEBRAIC_TOL = 1e-8

# Interpolated constructors must stay below this residual.
APPROX_RESIDUAL_LIMIT = 0.2


def wrap_angle(angle: float) -> float:
    """Map an angle to the interval (-pi, pi]."""
    wrapped = float(np.arctan2(np.sin(angle), np.cos(angle)))
    if wrapped == -np.pi:
        wrapped = np.pi
    return wrapped


# ---------------------------------------------------------------------------
# warp matrices


@dataclass(frozen=True)
class WarpMatrix:
    """A dense square warp with its measured orthogonality defect.

    ``orthogonality_residual`` is ``max|L^T L - I|``; it is computed by the
    constructors, never assumed.
    """

    entries: np.ndarray
    orthogonality_residual: float

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise DimensionError(f"warp must be square, got shape {entries.shape}")
        entries = entries.copy()
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def from_entries(cls, entries) -> "WarpMatrix":
        entries = np.asarray(entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise DimensionError(f"warp must be square, got shape {entries.shape}")
        gram = entries.T @ entries
        residual = float(np.abs(gram - np.eye(entries.shape[0])).max())
        return cls(entries, residual)


def make_cyclic_shift(n: int, s: int) -> WarpMatrix:
    """Permutation warp mapping index ``i`` to ``(i + s) mod n``."""
    if n < 2:
        raise DimensionError(f"cyclic shift needs dimension >= 2, got {n}")
    entries = np.zeros((n, n))
    idx = np.arange(n)
    entries[(idx + s) % n, idx] = 1.0
    return WarpMatrix(entries, 0.0)


def make_translation_warp(width: int, height: int, dx: int, dy: int) -> WarpMatrix:
    """Permutation warp translating a ``height x width`` patch with wrap-around.

    Pixel ``(r, c)`` moves to ``((r + dy) mod height, (c + dx) mod width)``;
    patches are flattened row-major.
    """
    if width < 2 or height < 2:
        raise DimensionError("translation warp needs width, height >= 2")
    d = width * height
    rows, cols = np.divmod(np.arange(d), width)
    target = ((rows + dy) % height) * width + (cols + dx) % width
    entries = np.zeros((d, d))
    entries[target, np.arange(d)] = 1.0
    return WarpMatrix(entries, 0.0)


# --- rotation warps --------------------------------------------------------
#
# A patch rotation is built from exact quarter-turn permutations plus three
# shears, each shear being a bank of circular fractional translations applied
# with Fourier (sinc) interpolation.  Every factor is orthogonal, so the
# composite is orthogonal to machine precision; plain 4-tap bilinear sampling
# cannot get the residual below ~0.5 because adjacent rows at half-pixel
# offsets are strongly correlated.


class _RotationPlan:
    """Shear schedule for rotating a ``height x width`` patch about its center."""

    def __init__(self, width: int, height: int, angle: float):
        self.width = width
        self.height = height
        folded = wrap_angle(angle)
        if width == height:
            self.quarter_turns = int(np.round(folded / (np.pi / 2.0)))
            residual = folded - self.quarter_turns * np.pi / 2.0
        else:
            if abs(folded) > np.pi / 4.0 + 1e-12:
                raise DimensionError(
                    "non-square patches only support rotation angles up to pi/4"
                )
            self.quarter_turns = 0
            residual = folded
        self.residual_angle = residual
        row_offsets = np.arange(height) - (height - 1) / 2.0
        col_offsets = np.arange(width) - (width - 1) / 2.0
        # Signs account for the row index growing downward while the display
        # y axis grows upward; positive angles rotate counterclockwise.
        self.row_shifts = np.tan(residual / 2.0) * row_offsets
        self.col_shifts = -np.sin(residual) * col_offsets

    def apply(self, image: np.ndarray) -> np.ndarray:
        """Rotate one ``height x width`` image (returns a new array)."""
        out = image.reshape(self.height, self.width)
        out = np.rot90(out, self.quarter_turns)
        if self.residual_angle != 0.0:
            out = self._shear_rows(out, self.row_shifts)
            out = self._shear_cols(out, self.col_shifts)
            out = self._shear_rows(out, self.row_shifts)
        return np.ascontiguousarray(out)

    def apply_matrix(self, mat: np.ndarray) -> np.ndarray:
        """Apply the plan to each column of a (d x d) matrix."""
        d = self.width * self.height
        out = np.empty((d, d))
        for j in range(d):
            out[:, j] = self.apply(mat[:, j].reshape(self.height, self.width)).ravel()
        return out

    @staticmethod
    def _shear_rows(image: np.ndarray, shifts: np.ndarray) -> np.ndarray:
        n = image.shape[1]
        freqs = np.fft.fftfreq(n) * n
        phase = np.exp(-2j * np.pi * freqs[None, :] * shifts[:, None] / n)
        if n % 2 == 0:
            # The Nyquist bin must stay real; +-1 keeps each shear orthogonal.
            phase[:, n // 2] = np.where(np.cos(np.pi * shifts) >= 0.0, 1.0, -1.0)
        return np.fft.ifft(phase * np.fft.fft(image, axis=1), axis=1).real

    @classmethod
    def _shear_cols(cls, image: np.ndarray, shifts: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(cls._shear_rows(image.T, shifts).T)


def rotate_image(image: np.ndarray, angle: float) -> np.ndarray:
    """Rotate a 2-D image counterclockwise about its center.

    Same operator as :func:`make_rotation_warp` without materializing the
    matrix; use this for bulk data generation.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise DimensionError("rotate_image expects a 2-D array")
    plan = _RotationPlan(image.shape[1], image.shape[0], angle)
    return plan.apply(image)


def make_rotation_warp(width: int, height: int, angle: float) -> WarpMatrix:
    """Rotation of a ``height x width`` patch about its center, counterclockwise.

    Built from exact quarter-turn permutations plus three Fourier-interpolated
    shears, so the warp is orthogonal to machine precision and multiples of
    90 degrees reduce to exact pixel permutations.  Content near the corners
    wraps around shear-wise instead of being cropped.
    """
    if width < 3 or height < 3:
        raise DimensionError("rotation warp needs width, height >= 3")
    plan = _RotationPlan(width, height, angle)
    d = width * height
    if plan.residual_angle == 0.0:
        # Pure quarter-turn: exact permutation, assembled directly.
        idx = np.rot90(np.arange(d).reshape(height, width), plan.quarter_turns)
        entries = np.zeros((d, d))
        entries[np.arange(d), idx.ravel()] = 1.0
        return WarpMatrix(entries, 0.0)
    columns = plan.apply_matrix(np.eye(d))
    return WarpMatrix.from_entries(columns)


def apply_warp(warp: WarpMatrix, patch: ImagePatch) -> ImagePatch:
    """Apply ``warp`` to a patch.  Normalization survives only when the warp
    is orthogonal to machine precision and the result still passes the check."""
    if patch.dim != warp.dim:
        raise DimensionError(
            f"warp dim {warp.dim} does not match patch dim {patch.dim}"
        )
    values = warp.entries @ patch.values
    keeps_normalization = (
        patch.normalized
        and warp.orthogonality_residual <= 1e-12
        and abs(values.mean()) <= 1e-10
        and abs(np.linalg.norm(values) - 1.0) <= 1e-10
    )
    return ImagePatch(values, normalized=bool(keeps_normalization))


# ---------------------------------------------------------------------------
# invariant-subspace decomposition


@dataclass(frozen=True)
class SubspaceBlock:
    """One invariant subspace: a unit basis pair (or single vector) + angle.

    Two-dimensional blocks carry an angle in (0, pi); one-dimensional blocks
    (real eigenvalue +-1) carry angle 0 or pi and no ``basis_imag``.
    """

    basis_real: np.ndarray
    basis_imag: Optional[np.ndarray]
    angle: float

    def __post_init__(self):
        br = np.asarray(self.basis_real, dtype=np.float64).reshape(-1)
        br.flags.writeable = False
        object.__setattr__(self, "basis_real", br)
        if self.basis_imag is not None:
            bi = np.asarray(self.basis_imag, dtype=np.float64).reshape(-1)
            bi.flags.writeable = False
            object.__setattr__(self, "basis_imag", bi)

    @property
    def is_two_dimensional(self) -> bool:
        return self.basis_imag is not None

    @property
    def block_dim(self) -> int:
        return 2 if self.basis_imag is not None else 1

    def projector(self) -> np.ndarray:
        """Orthogonal projector onto the block's subspace."""
        proj = np.outer(self.basis_real, self.basis_real)
        if self.basis_imag is not None:
            proj += np.outer(self.basis_imag, self.basis_imag)
        return proj

    def rotation(self) -> np.ndarray:
        """The warp's action restricted to this block, as a dense matrix."""
        if self.basis_imag is None:
            sign = 1.0 if abs(self.angle) < np.pi / 2 else -1.0
            return sign * np.outer(self.basis_real, self.basis_real)
        basis = np.stack([self.basis_real, self.basis_imag], axis=1)
        c, s = np.cos(self.angle), np.sin(self.angle)
        plane = np.array([[c, -s], [s, c]])
        return basis @ plane @ basis.T


@dataclass(frozen=True)
class SubspaceDecomposition:
    """Real block form of an orthogonal warp.

    ``approximation_residual`` is nonzero only when the decomposition came
    from the polar factor of a not-exactly-orthogonal warp; it records
    ``max|L - polar(L)|``.
    """

    blocks: tuple
    dim: int
    approximation_residual: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        total = sum(b.block_dim for b in self.blocks)
        if total != self.dim:
            raise DimensionError(
                f"block dimensions sum to {total}, expected {self.dim}"
            )
        gram_dev = self.basis_gram_deviation()
        if gram_dev > ALGEBRAIC_TOL:
            raise OrthogonalityError(
                f"decomposition basis is not orthonormal (deviation {gram_dev:.3g})"
            )

    def basis_matrix(self) -> np.ndarray:
        """All basis vectors as columns, in block order."""
        cols = []
        for b in self.blocks:
            cols.append(b.basis_real)
            if b.basis_imag is not None:
                cols.append(b.basis_imag)
        return np.stack(cols, axis=1)

    def basis_gram_deviation(self) -> float:
        basis = self.basis_matrix()
        return float(np.abs(basis.T @ basis - np.eye(basis.shape[1])).max())

    def two_dimensional_blocks(self) -> tuple:
        return tuple(b for b in self.blocks if b.is_two_dimensional)

    def angles(self) -> np.ndarray:
        return np.array([b.angle for b in self.blocks])

    def assemble(self) -> np.ndarray:
        """Reassemble the warp from its blocks."""
        out = np.zeros((self.dim, self.dim))
        for b in self.blocks:
            out += b.rotation()
        return out


def _blocks_from_schur(entries: np.ndarray) -> list:
    """Extract canonical subspace blocks from a real Schur form."""
    form, vectors = scipy.linalg.schur(entries, output="real")
    n = entries.shape[0]
    blocks = []
    i = 0
    while i < n:
        if i + 1 < n and abs(form[i + 1, i]) > 1e-9:
            sub = form[i : i + 2, i : i + 2]
            angle = float(
                np.arctan2(sub[1, 0] - sub[0, 1], sub[0, 0] + sub[1, 1])
            )
            basis_real = vectors[:, i].copy()
            basis_imag = vectors[:, i + 1].copy()
            if angle < 0.0:
                basis_imag = -basis_imag
                angle = -angle
            blocks.append(SubspaceBlock(basis_real, basis_imag, angle))
            i += 2
        else:
            angle = 0.0 if form[i, i] > 0.0 else float(np.pi)
            blocks.append(SubspaceBlock(vectors[:, i].copy(), None, angle))
            i += 1
    blocks.sort(key=lambda b: abs(b.angle))
    return blocks


def decompose(warp: WarpMatrix) -> SubspaceDecomposition:
    """Split an (exactly) orthogonal warp into invariant subspaces.

    Requires ``orthogonality_residual < EXACT_ORTHOGONALITY_TOL``; route
    anything rougher through :func:`decompose_approx`.
    """
    if warp.orthogonality_residual >= EXACT_ORTHOGONALITY_TOL:
        raise OrthogonalityError(
            f"warp has orthogonality residual {warp.orthogonality_residual:.3g} "
            f">= {EXACT_ORTHOGONALITY_TOL:g}; use decompose_approx"
        )
    blocks = _blocks_from_schur(warp.entries)
    decomposition = SubspaceDecomposition(blocks, warp.dim)
    recon_err = float(np.abs(decomposition.assemble() - warp.entries).max())
    if recon_err > ALGEBRAIC_TOL and warp.orthogonality_residual <= 1e-10:
        raise OrthogonalityError(
            f"block form fails to reproduce the warp (max error {recon_err:.3g})"
        )
    return decomposition


def polar_factor(entries: np.ndarray) -> np.ndarray:
    """Nearest orthogonal matrix in Frobenius norm."""
    u, singular, vt = np.linalg.svd(entries)
    if singular.min() < 1e-10 * max(singular.max(), 1.0):
        raise SingularWarpError(
            f"warp is rank-deficient (smallest singular value {singular.min():.3g})"
        )
    return u @ vt


def decompose_approx(warp: WarpMatrix) -> SubspaceDecomposition:
    """Decompose the orthogonal polar factor of a near-orthogonal warp.

    The returned decomposition carries ``approximation_residual =
    max|L - polar(L)|`` so callers can see how far the warp was from
    orthogonal.
    """
    if warp.dim < 2:
        raise DimensionError("decomposition needs dimension >= 2")
    orthogonal = polar_factor(warp.entries)
    gap = float(np.abs(warp.entries - orthogonal).max())
    blocks = _blocks_from_schur(orthogonal)
    return SubspaceDecomposition(blocks, warp.dim, approximation_residual=gap)


# ---------------------------------------------------------------------------
# commutation and shared subspaces


def commutation_residual(a: WarpMatrix, b: WarpMatrix) -> float:
    """``max|AB - BA|``; zero iff the warps commute."""
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return float(np.abs(a.entries @ b.entries - b.entries @ a.entries).max())


@dataclass(frozen=True)
class AlignmentReport:
    """Leakage of one warp's action out of another's invariant subspaces."""

    block_leakage: np.ndarray
    max_leakage: float


def shared_subspace_alignment(a: WarpMatrix, b: WarpMatrix) -> AlignmentReport:
    """How well ``b`` preserves the 2-D invariant subspaces of ``a``.

    For each two-dimensional block of ``decompose(a)``, measures the norm of
    the component of ``b @ basis`` falling outside the block.  Commuting
    orthogonal warps give (numerically) zero leakage everywhere.
    """
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")
    for warp in (a, b):
        if warp.orthogonality_residual >= EXACT_ORTHOGONALITY_TOL:
            raise OrthogonalityError(
                f"alignment requires orthogonal warps "
                f"(residual {warp.orthogonality_residual:.3g})"
            )
    decomposition = decompose(a)
    leakages = []
    for block in decomposition.two_dimensional_blocks():
        proj = block.projector()
        worst = 0.0
        for vec in (block.basis_real, block.basis_imag):
            moved = b.entries @ vec
            worst = max(worst, float(np.linalg.norm(moved - proj @ moved)))
        leakages.append(worst)
    leakages = np.array(leakages) if leakages else np.zeros(0)
    max_leak = float(leakages.max()) if leakages.size else 0.0
    return AlignmentReport(leakages, max_leak)
