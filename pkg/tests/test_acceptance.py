"""Acceptance suite: one test per criterion, at its stated tolerance.

Each test prints a PASS line when its criterion holds.  Pipeline-based
criteria share module-scoped runs; the determinism criterion repeats them
with identical seeds and compares artifact bytes.
"""

import numpy as np
import pytest

from warpcode.analysis import invariance_ratio
from warpcode.dataset import gen_dot_pairs
from warpcode.detector import (
    build_bank_from_warp_family,
    energy_detector_response,
    project,
    rotation_detector_response,
)
from warpcode.errors import OrthogonalityError
from warpcode.experiments import (
    ExperimentConfig,
    run_detector_oracle,
    run_fig2,
    run_fig3,
    run_fig4,
)
from warpcode.model import (
    GatedModel,
    energy_forward,
    image_codes,
    loss_and_gradient,
)
from warpcode.patches import ImagePatch, contrast_normalize
from warpcode.warp_algebra import (
    WarpMatrix,
    commutation_residual,
    decompose,
    make_cyclic_shift,
    polar_factor,
    rotate_image,
    shared_subspace_alignment,
    wrap_angle,
)


def report(criterion, detail):
    print(f"\nACCEPTANCE {criterion}: PASS ({detail})")


# ---------------------------------------------------------------------------
# criterion 1: energy on concatenation = 2*cross + quadratics


def test_criterion_1_energy_split_identity():
    rng = np.random.default_rng(1001)
    worst = 0.0
    for _ in range(1000):
        dim = int(rng.integers(2, 33))
        n_factors = int(rng.integers(1, 7))
        n_hidden = int(rng.integers(1, 5))
        filters = rng.standard_normal((2 * dim, n_factors))
        pooling = rng.standard_normal((n_factors, n_hidden))
        x = rng.standard_normal(dim)
        y = rng.standard_normal(dim)
        energy = energy_forward(filters, pooling, x, y)
        u, v = filters[:dim], filters[dim:]
        cross = pooling.T @ ((u.T @ x) * (v.T @ y))
        quadratics = pooling.T @ ((u.T @ x) ** 2) + pooling.T @ ((v.T @ y) ** 2)
        worst = max(worst, float(np.abs(energy - (2 * cross + quadratics)).max()))
    assert worst <= 1e-10
    report("criterion 1 (energy split identity)", f"max |error| = {worst:.2e}")


# ---------------------------------------------------------------------------
# criterion 2: pair detector energy form = 2*rotation detector + norms


def test_criterion_2_detector_energy_identity():
    rng = np.random.default_rng(1002)
    decomposition = decompose(make_cyclic_shift(32, 5))
    blocks = decomposition.two_dimensional_blocks()
    worst = 0.0
    for _ in range(1000):
        block = blocks[int(rng.integers(0, len(blocks)))]
        theta = float(rng.uniform(-np.pi, np.pi))
        x = contrast_normalize(rng.standard_normal(32))
        y = contrast_normalize(rng.standard_normal(32))
        energy = energy_detector_response(block, theta, x, y)
        cross = rotation_detector_response(block, theta, x, y)
        px = np.array(project(block, x))
        py = np.array(project(block, y))
        error = abs(energy - (2 * cross + px @ px + py @ py))
        worst = max(worst, error)
    assert worst <= 1e-10
    report("criterion 2 (detector energy identity)", f"max |error| = {worst:.2e}")


# ---------------------------------------------------------------------------
# criterion 3: analytic gradients vs central finite differences


def _fd_gradient(model, xs, ys, name, step=1e-5):
    param = getattr(model, name)
    grad = np.zeros_like(param)
    flat, grad_flat = param.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        up, _ = loss_and_gradient(model, xs, ys)
        flat[i] = original - step
        down, _ = loss_and_gradient(model, xs, ys)
        flat[i] = original
        grad_flat[i] = (up - down) / (2 * step)
    return grad


@pytest.mark.parametrize("nonlinearity,tolerance", [("identity", 1e-5), ("sigmoid", 1e-4)])
def test_criterion_3_gradient_check(nonlinearity, tolerance):
    rng = np.random.default_rng(1003)
    worst = 0.0
    for trial in range(20):
        model = GatedModel.initialize(
            8, 8, 6, 3, pooling="band", nonlinearity=nonlinearity,
            seed=int(rng.integers(0, 2**31)),
        )
        model.across_pool[:] = rng.standard_normal(model.across_pool.shape) * 0.5
        xs = rng.standard_normal((4, 8))
        ys = rng.standard_normal((4, 8))
        _, grads = loss_and_gradient(model, xs, ys)
        for name in ("input_filters", "output_filters", "across_pool"):
            numeric = _fd_gradient(model, xs, ys, name)
            error = float(
                np.abs(grads[name] - numeric).max() / (np.abs(numeric).max() + 1e-12)
            )
            worst = max(worst, error)
    assert worst <= tolerance
    report(
        f"criterion 3 (gradient check, {nonlinearity})",
        f"max relative error = {worst:.2e} <= {tolerance:g}",
    )


# ---------------------------------------------------------------------------
# criterion 4: analytic shift recovery


def test_criterion_4_detector_oracle(tmp_path):
    cfg = ExperimentConfig.build(
        "oracle", tmp_path / "clean", seed=42, overrides={"dim": 16, "n_trials": 1000}
    )
    clean = run_detector_oracle(cfg)
    assert clean.accuracy == 1.0
    cfg = ExperimentConfig.build(
        "oracle",
        tmp_path / "noisy",
        seed=42,
        overrides={"dim": 16, "n_trials": 1000, "snr": 10.0},
    )
    noisy = run_detector_oracle(cfg)
    assert noisy.accuracy >= 0.95
    report(
        "criterion 4 (detector oracle)",
        f"noiseless accuracy = {clean.accuracy:.4f}, "
        f"snr-10 accuracy = {noisy.accuracy:.4f}",
    )


# ---------------------------------------------------------------------------
# criterion 5: eigen-structure of cyclic shifts and circulant families


def test_criterion_5_eigenstructure():
    warp = make_cyclic_shift(16, 3)
    decomposition = decompose(warp)
    found = []
    for block in decomposition.blocks:
        found.extend([block.angle] * block.block_dim)
    oracle = np.sort(np.abs(np.angle(np.linalg.eigvals(warp.entries))))
    angle_error = float(np.abs(np.sort(found) - oracle).max())
    assert angle_error <= 1e-8

    rng = np.random.default_rng(1005)
    worst_leakage = 0.0
    pairs = 0
    while pairs < 100:
        kernels = rng.standard_normal((2, 16))
        warps = []
        for kernel in kernels:
            if np.abs(np.fft.fft(kernel)).min() <= 1e-6:
                break
            circulant = np.stack([np.roll(kernel, j) for j in range(16)], axis=1)
            warps.append(WarpMatrix.from_entries(polar_factor(circulant)))
        if len(warps) < 2:
            continue
        pairs += 1
        assert commutation_residual(warps[0], warps[1]) <= 1e-8
        leakage = shared_subspace_alignment(warps[0], warps[1]).max_leakage
        worst_leakage = max(worst_leakage, leakage)
    assert worst_leakage <= 1e-6
    report(
        "criterion 5 (eigen-structure)",
        f"angle error = {angle_error:.2e}, max leakage over 100 pairs = "
        f"{worst_leakage:.2e}",
    )


# ---------------------------------------------------------------------------
# criteria 6-10: pipeline runs (shared fixtures)


FIG2_SEED = 202
FIG3_SEED = 303
FIG4_SEED = 404


@pytest.fixture(scope="module")
def fig2_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig2")
    cfg = ExperimentConfig.build("fig2", out, seed=FIG2_SEED)
    return cfg, run_fig2(cfg)


@pytest.fixture(scope="module")
def fig2_control(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig2_control")
    cfg = ExperimentConfig.build(
        "fig2", out, seed=FIG2_SEED, overrides={"learning_rate": 0.0}
    )
    return cfg, run_fig2(cfg)


@pytest.fixture(scope="module")
def fig3_shift_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig3_shift")
    cfg = ExperimentConfig.build("fig3", out, seed=FIG3_SEED)
    return cfg, run_fig3(cfg)


@pytest.fixture(scope="module")
def fig3_two_segment_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig3_two")
    cfg = ExperimentConfig.build(
        "fig3",
        out,
        seed=FIG3_SEED,
        overrides={"variant": "rotate_then_shift", "n_frames": 10},
    )
    return cfg, run_fig3(cfg)


@pytest.fixture(scope="module")
def fig4_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig4")
    cfg = ExperimentConfig.build("fig4", out, seed=FIG4_SEED)
    return cfg, run_fig4(cfg)


def test_criterion_6_quadrature_emergence(fig2_run, fig2_control):
    _, trained = fig2_run
    _, control = fig2_control
    trained_fraction = trained.top_half_fraction(0.8)
    control_fraction = control.top_half_fraction(0.8)
    assert trained_fraction >= 0.6
    assert control_fraction <= 0.1
    report(
        "criterion 6 (quadrature emergence)",
        f"trained top-half fraction = {trained_fraction:.2f} >= 0.6, "
        f"random-init control = {control_fraction:.2f} <= 0.1",
    )


def test_criterion_7_eigenmovies(fig3_shift_run, fig3_two_segment_run):
    _, shift_report = fig3_shift_run
    top_median, bottom_median = shift_report.quartile_medians()
    assert top_median >= 0.7
    assert top_median - bottom_median >= 0.2
    _, two_segment = fig3_two_segment_run
    quiet = two_segment.quiet_fraction(ratio=3.0)
    assert quiet >= 0.3
    report(
        "criterion 7 (eigenmovies)",
        f"shift-movie consistency medians top = {top_median:.2f}, bottom = "
        f"{bottom_median:.2f}; quiet-factor fraction = {quiet:.2f}",
    )


def test_criterion_8_invariance(fig2_run):
    _, trained = fig2_run
    model = trained.model
    rng = np.random.default_rng(1008)
    n_orbits, n_angles = 15, 12
    pooled_orbits, raw_orbits = [], []
    size = 13
    for _ in range(n_orbits):
        raw = (rng.random((size, size)) < 0.1).astype(float)
        if contrast_normalize(raw.ravel()).degenerate:
            continue
        images = []
        for angle in np.linspace(-np.pi, np.pi, n_angles, endpoint=False):
            patch = contrast_normalize(rotate_image(raw, angle).ravel())
            if patch.degenerate:
                break
            images.append(patch.values)
        if len(images) < n_angles:
            continue
        images = np.stack(images)
        raw_orbits.append(images)
        pooled_orbits.append(image_codes(model, images))
    pooled_ratio = invariance_ratio(pooled_orbits)
    raw_ratio = invariance_ratio(raw_orbits)
    assert pooled_ratio <= 0.3
    assert pooled_ratio <= 0.5 * raw_ratio
    report(
        "criterion 8 (invariance)",
        f"pooled-code ratio = {pooled_ratio:.3f} <= 0.3, raw-pixel ratio = "
        f"{raw_ratio:.3f}",
    )


def test_criterion_9_classification_ordering(fig4_run):
    _, result = fig4_run
    sizes = sorted(result.accuracies["pooled_logreg"])
    for size in sizes:
        assert (
            result.accuracies["pooled_logreg"][size]
            >= result.accuracies["raw_logreg"][size]
        )
    for size in sizes[:2]:
        assert (
            result.accuracies["pooled_logreg"][size]
            >= result.accuracies["raw_knn"][size]
        )
    summary = "; ".join(
        f"n={size}: pooled {result.accuracies['pooled_logreg'][size]:.3f} vs "
        f"raw-lr {result.accuracies['raw_logreg'][size]:.3f} vs "
        f"raw-knn {result.accuracies['raw_knn'][size]:.3f}"
        for size in sizes
    )
    report("criterion 9 (classification ordering)", summary)


def _artifact_bytes(out_dir):
    return {
        path.name: path.read_bytes()
        for path in sorted(out_dir.glob("*.csv"))
    }


def test_criterion_10_determinism(
    tmp_path_factory, fig2_run, fig3_shift_run, fig3_two_segment_run, fig4_run
):
    reruns = [
        ("fig2", FIG2_SEED, {}, run_fig2, fig2_run[0]),
        ("fig3", FIG3_SEED, {}, run_fig3, fig3_shift_run[0]),
        (
            "fig3",
            FIG3_SEED,
            {"variant": "rotate_then_shift", "n_frames": 10},
            run_fig3,
            fig3_two_segment_run[0],
        ),
        ("fig4", FIG4_SEED, {}, run_fig4, fig4_run[0]),
    ]
    compared = 0
    for name, seed, overrides, runner, original_cfg in reruns:
        out = tmp_path_factory.mktemp(f"repeat_{name}_{len(overrides)}")
        cfg = ExperimentConfig.build(name, out, seed=seed, overrides=overrides)
        runner(cfg)
        first = _artifact_bytes(original_cfg.out_dir)
        second = _artifact_bytes(out)
        assert first.keys() == second.keys()
        for filename in first:
            assert first[filename] == second[filename], f"{name}/{filename} differs"
            compared += 1
    report(
        "criterion 10 (determinism)",
        f"{compared} CSV artifacts byte-identical across reruns",
    )
