from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcqa.descriptors import geometry_descriptors, texture_descriptors
from pcqa.local_pca import map_neighborhoods
from pcqa.pointcloud import PointCloud
from pcqa.predictors import (
    EPS,
    FEATURE_NAMES,
    LAYOUT_VERSION,
    PredictorMatrix,
    distance,
    extract_features,
    feature_index,
    pool,
    predictor_matrix,
    prepare_reference,
    point_predictors,
    r_alpha,
    r_delta,
    r_gamma,
)
from pcqa.synth import DistortionSpec, apply_distortion, make_reference

ANGSIM = slice(29, 32)  # 0-based columns of the three angular similarities
ZERO_ON_IDENTITY = [i for i in range(44) if not 29 <= i < 32]


def test_layout():
    assert len(FEATURE_NAMES) == 44 == len(set(FEATURE_NAMES))
    assert FEATURE_NAMES[0] == "g_e_alpha"
    assert FEATURE_NAMES[29:32] == ("g_angsim_1", "g_angsim_2", "g_angsim_3")
    assert FEATURE_NAMES[32] == "t_mean_delta_y" and FEATURE_NAMES[-1] == "t_entropy_delta"
    assert feature_index("g_var_delta_1") == 12
    assert LAYOUT_VERSION


def test_delta_example():
    assert r_delta(2.0, 1.0) == pytest.approx(1 / (3 + EPS), rel=1e-15)
    assert r_delta(2.0, 1.0) == pytest.approx(0.333333, abs=1e-6)


@given(st.floats(-1e9, 1e9))
def test_delta_of_equal_values_is_zero(x):
    assert r_delta(x, x) == 0


@given(st.floats(-1e9, 1e9), st.floats(-1e9, 1e9))
def test_delta_bounded(a, b):
    assert 0 <= r_delta(a, b) <= 1


def test_alpha_of_zero_vector():
    assert r_alpha(np.zeros(3)) == 0
    assert r_alpha([3.0, 4.0, 0.0]) == 5.0


def test_gamma_identity_on_random_neighborhoods(rng):
    pts = rng.normal(size=(500, 81, 3)) * rng.random((500, 1, 3))
    g = geometry_descriptors(map_neighborhoods(pts, pts, pts[:, 0], pts[:, 0]))
    np.testing.assert_array_equal(r_gamma(g.var_A, g.var_B, g.cross_cov_diag**2), 0)


def test_distance_dispatch():
    assert distance("delta", 2.0, 1.0) == r_delta(2.0, 1.0)
    assert distance("alpha", np.array([3.0, 4.0, 0.0])) == 5.0
    with pytest.raises(ValueError):
        distance("omega", 1.0)


def test_pool_single_row():
    row = np.arange(44.0)
    np.testing.assert_array_equal(pool(row[None]).f, row)


def test_pool_two_rows():
    np.testing.assert_array_equal(pool(np.vstack([np.zeros(44), np.ones(44)])).f, np.full(44, 0.5))


def test_pool_matches_exact_rational_mean(rng):
    # wide dynamic range makes naive summation lose digits
    vals = rng.random((10_000, 44)) * 10.0 ** rng.integers(-8, 8, size=(10_000, 44))
    f = pool(vals).f
    for j in range(44):
        exact = sum(map(Fraction, vals[:, j])) / len(vals)
        assert abs(f[j] - float(exact)) <= 1e-12 * abs(float(exact))


def test_pool_ignores_chunking(rng):
    vals = rng.random((5000, 44))
    a = pool(vals).f
    b = pool(np.concatenate([vals[:1234], vals[1234:]])).f
    assert a.tobytes() == b.tobytes()


def _assert_identity(f):
    assert np.abs(f[ZERO_ON_IDENTITY]).max() <= 1e-9
    assert (f[ANGSIM] >= 0.999).all()


def test_identity_on_random_cloud(rng):
    pc = PointCloud(rng.random((1000, 3)), rng.integers(0, 256, (1000, 3)))
    fv = extract_features(pc, pc, 81)
    _assert_identity(fv.f)
    np.testing.assert_array_equal(fv.f[ANGSIM], 1.0)
    assert fv.k_used == (81, 81)


def test_prepared_reference_gives_same_features(rng):
    ref = make_reference("sphere", 2000, 3)
    dist = apply_distortion(ref, DistortionSpec("geom_gauss_noise", 0.002, 1))
    a = extract_features(ref, dist, 30)
    b = extract_features(prepare_reference(ref, 30), dist, 30)
    assert a.f.tobytes() == b.f.tobytes()


def test_rigid_translation_with_correspondence(rng):
    # same neighbour sets on both sides, distorted side shifted rigidly
    ref = rng.normal(size=(400, 30, 3)) * [1.0, 0.5, 0.2]
    t = np.array([0.01, -0.004, 0.002])
    g = geometry_descriptors(map_neighborhoods(ref, ref + t, ref[:, 0], ref[:, 0] + t))
    tex = rng.random((400, 30, 3))
    psi = point_predictors(g, texture_descriptors(tex, tex))
    shape = [n for n in FEATURE_NAMES if n.startswith("g_") and (n.startswith("g_var") or n.startswith("g_sumvar")
             or n in ("g_omni_delta", "g_entropy_delta", "g_aniso_delta", "g_planar_delta", "g_linear_delta",
                      "g_scatter_delta", "g_curv_delta"))]
    assert len(shape) == 11
    for name in shape:
        assert np.abs(psi[:, feature_index(name)]).max() <= 1e-9, name
    np.testing.assert_allclose(psi[:, feature_index("g_e_alpha")], np.linalg.norm(t), rtol=1e-9)
    np.testing.assert_allclose(psi[:, feature_index("g_mean_alpha")], np.linalg.norm(t), rtol=1e-9)


def test_gauss_noise_increases_position_error():
    ref = make_reference("sphere", 3000, 11)
    prepared = prepare_reference(ref, 81)
    wins = 0
    for seed in range(20):
        lo = extract_features(prepared, apply_distortion(ref, DistortionSpec("geom_gauss_noise", 0.001, seed)))
        hi = extract_features(prepared, apply_distortion(ref, DistortionSpec("geom_gauss_noise", 0.002, seed + 100)))
        wins += hi.f[0] > lo.f[0]
    assert wins >= 19


@pytest.mark.parametrize("kind, level", [("color_gauss_noise", 8.0), ("color_quantize", 16.0)])
def test_color_only_distortion(kind, level):
    ref = make_reference("colored_gradient_sphere", 3000, 5)
    f = extract_features(ref, apply_distortion(ref, DistortionSpec(kind, level, 1)), 81).f
    assert np.abs(f[:12]).max() <= 1e-9
    tex = [i for i, n in enumerate(FEATURE_NAMES) if n.startswith("t_") and "_delta" in n]
    assert (f[tex] > 0).any()
    assert f[feature_index("t_var_delta_y")] > 0


def test_thread_count_is_bit_identical():
    ref = make_reference("colored_gradient_sphere", 6000, 1)
    dist = apply_distortion(ref, DistortionSpec("geom_quantize", 0.004, 0))
    one = extract_features(ref, dist, 81, threads=1)
    many = extract_features(ref, dist, 81, threads=4)
    assert one.f.tobytes() == many.f.tobytes()


def test_joint_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    ref = make_reference("torus", 3000, 4)
    dist = apply_distortion(ref, DistortionSpec("geom_gauss_noise", 0.002, 3))
    a = extract_features(ref, dist, 30).f
    rot = lambda pc: PointCloud(pc.positions @ q.T, pc.colors)  # noqa: E731
    b = extract_features(rot(ref), rot(dist), 30).f
    np.testing.assert_allclose(b[12:], a[12:], atol=1e-6)


def test_predictor_matrix_shape_and_k_used(rng):
    ref = PointCloud(rng.random((400, 3)), rng.integers(0, 256, (400, 3)))
    dist = PointCloud(rng.random((50, 3)), rng.integers(0, 256, (50, 3)))
    pm = predictor_matrix(prepare_reference(ref, 81), dist)
    assert isinstance(pm, PredictorMatrix)
    assert pm.values.shape == (400, 44)
    assert pm.k_used == (81, 50)
    assert np.isfinite(pm.values).all()


def test_duplicates_are_merged_before_extraction(rng):
    pos = rng.random((500, 3))
    col = rng.integers(0, 256, (500, 3))
    pc = PointCloud(pos, col)
    doubled = PointCloud(np.vstack([pos, pos]), np.vstack([col, col]))
    assert extract_features(pc, doubled, 20).f.tobytes() == extract_features(pc, pc, 20).f.tobytes()
