"""Quantitative checks of learned filter structure.

Filter pairs: the band pooling layout reads filters two at a time, so a
"pair" is two adjacent columns (2k, 2k+1).  A trained pair is *in
quadrature* when the output-side pair equals the input-side pair rotated
within its own two-dimensional span; ``quadrature_pair_score`` fits that
rotation in closed form and reports the explained fraction.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, DimensionError
from .storage import write_csv, write_pgm

QUADRATURE_CSV_HEADER = ["pair_index", "theta_hat", "fit_r2", "spectral_overlap"]


def _as_pair(filters, name):
    pair = np.asarray(filters, dtype=np.float64)
    if pair.ndim != 2 or pair.shape[1] != 2:
        raise DimensionError(f"{name} must be a (dim, 2) filter pair")
    if not pair.any():
        raise DataError(f"{name} is all zero")
    return pair


def quadrature_pair_score(u_pair, v_pair) -> Tuple[float, float]:
    """Best rotation angle carrying the u-pair onto the v-pair, plus fit.

    Minimizes ``|v_pair - u_pair R(theta)|_F`` over the plane rotation R;
    theta has the closed form ``atan2(B, A)`` from the two inner-product
    sums A and B.  ``fit_r2`` is the explained fraction of the v-pair's
    energy, clamped to [0, 1] (orthogonal v-pairs score 0).
    """
    u = _as_pair(u_pair, "u_pair")
    v = _as_pair(v_pair, "v_pair")
    if u.shape[0] != v.shape[0]:
        raise DimensionError("filter pairs have different lengths")
    a = v[:, 0] @ u[:, 0] + v[:, 1] @ u[:, 1]
    b = v[:, 0] @ u[:, 1] - v[:, 1] @ u[:, 0]
    theta = float(np.arctan2(b, a))
    v_energy = float(np.sum(v * v))
    residual = v_energy - 2.0 * float(np.hypot(a, b)) + float(np.sum(u * u))
    fit_r2 = float(np.clip(1.0 - residual / v_energy, 0.0, 1.0))
    return theta, fit_r2


def rotate_pair(pair, theta) -> np.ndarray:
    """The filter pair rotated by theta within its own span."""
    pair = _as_pair(pair, "pair")
    c, s = np.cos(theta), np.sin(theta)
    return pair @ np.array([[c, s], [-s, c]]).T


def spectral_overlap(u, v, geometry: Optional[Tuple[int, int]] = None) -> float:
    """Cosine similarity of DFT magnitude spectra.

    With ``geometry`` = (width, height), filters are reshaped row-major and
    the 2-D transform is used; magnitudes are compared flattened.  Equal to
    1 for any pair related by a cyclic shift.
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise DimensionError("filters have different lengths")
    if not u.any() or not v.any():
        raise DataError("spectral overlap of a zero filter")
    if geometry is None:
        mag_u = np.abs(np.fft.fft(u))
        mag_v = np.abs(np.fft.fft(v))
    else:
        width, height = geometry
        mag_u = np.abs(np.fft.fft2(u.reshape(height, width))).ravel()
        mag_v = np.abs(np.fft.fft2(v.reshape(height, width))).ravel()
    return float(mag_u @ mag_v / (np.linalg.norm(mag_u) * np.linalg.norm(mag_v)))


# ---------------------------------------------------------------------------
# eigenmovie consistency


def _phase_model_fit(frames: np.ndarray, theta: float):
    """Least-squares base pair for the per-frame rotation model at theta.

    Model: frames[s] = cos(theta s) c - sin(theta s) d.  Returns (residual,
    c, d); when the sine design degenerates (theta near 0 or pi) d is pinned
    to zero.
    """
    steps = np.arange(frames.shape[0])
    cos_s = np.cos(theta * steps)
    sin_s = np.sin(theta * steps)
    scc = float(cos_s @ cos_s)
    sss = float(sin_s @ sin_s)
    scs = float(cos_s @ sin_s)
    rhs_c = cos_s @ frames
    rhs_d = -(sin_s @ frames)
    det = scc * sss - scs * scs
    if det < 1e-12 or sss < 1e-12:
        c = rhs_c / max(scc, 1e-12)
        d = np.zeros_like(c)
    else:
        c = (sss * rhs_c - (-scs) * rhs_d) / det
        d = (scc * rhs_d - (-scs) * rhs_c) / det
    modeled = cos_s[:, None] * c[None, :] - sin_s[:, None] * d[None, :]
    residual = float(np.sum((frames - modeled) ** 2))
    return residual, c, d


def eigenmovie_consistency(filter_frames) -> Tuple[float, float]:
    """Fit of a per-frame filter sequence to a constant-speed rotation model.

    ``filter_frames`` is (n_frames, dim): one factor's filter sliced per
    frame.  Fits a single base pair rotating by ``theta`` per frame; theta
    is found by a dense grid scan with an exact base-pair solve per
    candidate, then refined by golden-section search.  The rotation
    direction is not identifiable from the fit (flipping the pair's
    imaginary part flips it), so theta is reported in [0, pi].

    Returns ``(theta_hat, consistency_r2)``.
    """
    frames = np.asarray(filter_frames, dtype=np.float64)
    if frames.ndim != 2:
        raise DimensionError("filter sequence must be (n_frames, dim)")
    if frames.shape[0] < 3:
        raise DimensionError("consistency fit needs at least 3 frames")
    total = float(np.sum(frames * frames))
    if total < 1e-24:
        raise DataError("all-zero filter sequence")
    grid = np.linspace(0.0, np.pi, 361)
    residuals = [_phase_model_fit(frames, theta)[0] for theta in grid]
    best = int(np.argmin(residuals))
    low = grid[max(best - 1, 0)]
    high = grid[min(best + 1, len(grid) - 1)]
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = low, high
    x1 = b - golden * (b - a)
    x2 = a + golden * (b - a)
    f1 = _phase_model_fit(frames, x1)[0]
    f2 = _phase_model_fit(frames, x2)[0]
    for _ in range(60):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - golden * (b - a)
            f1 = _phase_model_fit(frames, x1)[0]
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + golden * (b - a)
            f2 = _phase_model_fit(frames, x2)[0]
    theta = float((a + b) / 2.0)
    residual = _phase_model_fit(frames, theta)[0]
    return theta, float(1.0 - residual / total)


# ---------------------------------------------------------------------------
# invariance


def invariance_ratio(codes_by_orbit: Sequence) -> float:
    """Within-orbit variance over variance of orbit means, pooled over dims.

    An orbit is one base image under many transformation parameters.  Small
    values mean the code barely moves along an orbit while still separating
    different orbits.  Scale-invariant by construction.
    """
    orbits = [np.asarray(o, dtype=np.float64) for o in codes_by_orbit]
    if len(orbits) < 2:
        raise DataError("invariance ratio needs at least two orbits")
    for orbit in orbits:
        if orbit.ndim != 2 or orbit.shape[0] < 2:
            raise DataError("each orbit needs at least two codes")
    within = float(np.mean([orbit.var(axis=0).mean() for orbit in orbits]))
    means = np.stack([orbit.mean(axis=0) for orbit in orbits])
    between = float(means.var(axis=0).mean())
    if between < 1e-300:
        return 0.0 if within == 0.0 else float("inf")
    return within / between


# ---------------------------------------------------------------------------
# reports and export


@dataclass(frozen=True)
class QuadratureReport:
    """Per-pair quadrature fits for a trained filter bank."""

    pair_index: np.ndarray
    theta_hat: np.ndarray
    fit_r2: np.ndarray
    spectral_overlap: np.ndarray

    def summary_quantiles(self, quantiles=(0.25, 0.5, 0.75)):
        return {
            "fit_r2": {q: float(np.quantile(self.fit_r2, q)) for q in quantiles},
            "spectral_overlap": {
                q: float(np.quantile(self.spectral_overlap, q)) for q in quantiles
            },
        }

    def rows(self):
        return list(
            zip(self.pair_index, self.theta_hat, self.fit_r2, self.spectral_overlap)
        )

    def write(self, path):
        write_csv(path, QUADRATURE_CSV_HEADER, self.rows())


def score_filter_bank_pairs(
    input_filters, output_filters, geometry: Optional[Tuple[int, int]] = None
) -> QuadratureReport:
    """Quadrature scores for every band-layout pair of a trained bank.

    Pair k is filter columns (2k, 2k+1); the u-side pair comes from
    ``input_filters``, the v-side from ``output_filters``.  The overlap
    column is the mean spectral overlap of matching columns.
    """
    u = np.asarray(input_filters, dtype=np.float64)
    v = np.asarray(output_filters, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionError("filter banks differ in shape")
    n_pairs = u.shape[1] // 2
    indices, thetas, fits, overlaps = [], [], [], []
    for k in range(n_pairs):
        u_pair = u[:, 2 * k : 2 * k + 2]
        v_pair = v[:, 2 * k : 2 * k + 2]
        theta, fit = quadrature_pair_score(u_pair, v_pair)
        overlap = 0.5 * (
            spectral_overlap(u_pair[:, 0], v_pair[:, 0], geometry)
            + spectral_overlap(u_pair[:, 1], v_pair[:, 1], geometry)
        )
        indices.append(k)
        thetas.append(theta)
        fits.append(fit)
        overlaps.append(overlap)
    return QuadratureReport(
        np.array(indices), np.array(thetas), np.array(fits), np.array(overlaps)
    )


def pair_rotation_invariance_score(pair, geometry) -> float:
    """How rotation-invariant a filter pair's joint power spectrum is.

    Rotation-subspace pairs have an angularly smeared joint spectrum that
    survives an exact quarter-turn of the grid; translation (Fourier) pairs
    concentrate on one frequency and do not.  Returns the cosine overlap of
    the pair's summed magnitude spectrum with its quarter-turn rotation.
    """
    pair = _as_pair(pair, "pair")
    width, height = geometry
    if width != height:
        raise DimensionError("rotation tagging needs square patches")
    power = sum(
        np.abs(np.fft.fft2(pair[:, j].reshape(height, width))) ** 2 for j in (0, 1)
    )
    turned = np.rot90(power)
    return float(
        (power * turned).sum()
        / max(np.linalg.norm(power) * np.linalg.norm(turned), 1e-300)
    )


def export_filter_grid(filters, geometry, path, n_columns=None) -> np.ndarray:
    """Tile filters into a PGM image, each scaled to [0, 255] independently.

    ``filters`` is (n_filters, dim) with dim = width*height; tiles are laid
    out left-to-right with 1-px black separators (and a border).  Constant
    filters map to mid-gray.  Returns the uint8 image that was written.
    """
    filters = np.atleast_2d(np.asarray(filters, dtype=np.float64))
    width, height = geometry
    if filters.shape[1] != width * height:
        raise DimensionError(
            f"filters of dim {filters.shape[1]} do not reshape to {width}x{height}"
        )
    count = filters.shape[0]
    if n_columns is None:
        n_columns = int(np.ceil(np.sqrt(count)))
    n_rows = int(np.ceil(count / n_columns))
    image = np.zeros(
        (n_rows * (height + 1) + 1, n_columns * (width + 1) + 1), dtype=np.uint8
    )
    for index in range(count):
        tile = filters[index].reshape(height, width)
        low, high = float(tile.min()), float(tile.max())
        if high - low < 1e-12:
            scaled = np.full(tile.shape, 128, dtype=np.uint8)
        else:
            scaled = np.round((tile - low) / (high - low) * 255.0).astype(np.uint8)
        row, col = divmod(index, n_columns)
        top = row * (height + 1) + 1
        left = col * (width + 1) + 1
        image[top : top + height, left : left + width] = scaled
    write_pgm(path, image)
    return image
