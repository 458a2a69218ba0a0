import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcqa.errors import AlreadyConverted, EmptyCloud, MalformedHeader, MissingFile, MissingProperty, TruncatedBody
from pcqa.pointcloud import ColorSpace, PointCloud, load_ply, merge_duplicates, rgb_to_ycbcr, write_ply


def _ascii_ply(path, body, props=("x", "y", "z", "red", "green", "blue"), n=None, types=None):
    types = types or {"x": "float", "y": "float", "z": "float", "red": "uchar", "green": "uchar", "blue": "uchar"}
    lines = ["ply", "format ascii 1.0", f"element vertex {n if n is not None else len(body)}"]
    lines += [f"property {types.get(p, 'float')} {p}" for p in props]
    lines += ["end_header"] + [" ".join(map(str, row)) for row in body]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_ascii_three_vertices_in_file_order(tmp_path):
    body = [(0, 0, 0, 255, 0, 0), (1, 2, 3, 0, 255, 0), (-1, 0.5, 2, 0, 0, 255)]
    pc = load_ply(_ascii_ply(tmp_path / "a.ply", body))
    assert len(pc) == 3
    np.testing.assert_array_equal(pc.positions, [[0, 0, 0], [1, 2, 3], [-1, 0.5, 2]])
    np.testing.assert_array_equal(pc.colors, [[255, 0, 0], [0, 255, 0], [0, 0, 255]])
    assert pc.color_space is ColorSpace.RGB8


def test_ascii_and_binary_encodings_load_identically(tmp_path, rng):
    pos = rng.normal(size=(100, 3))
    col = rng.integers(0, 256, size=(100, 3))
    pc = PointCloud(pos, col)
    write_ply(pc, tmp_path / "a.ply", binary=False)
    write_ply(pc, tmp_path / "b.ply", binary=True)
    a, b = load_ply(tmp_path / "a.ply"), load_ply(tmp_path / "b.ply")
    assert a.positions.tobytes() == b.positions.tobytes()
    assert a.colors.tobytes() == b.colors.tobytes()
    assert a == pc


def test_missing_color_properties(tmp_path):
    path = _ascii_ply(tmp_path / "a.ply", [(0, 0, 0)], props=("x", "y", "z"))
    with pytest.raises(MissingProperty):
        load_ply(path)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(MissingFile, match="nope.ply"):
        load_ply(tmp_path / "nope.ply")


def test_malformed_header(tmp_path):
    p = tmp_path / "a.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex three\nend_header\n")
    with pytest.raises(MalformedHeader):
        load_ply(p)


def test_truncated_body(tmp_path):
    path = _ascii_ply(tmp_path / "a.ply", [(0, 0, 0, 1, 2, 3)], n=5)
    with pytest.raises(TruncatedBody):
        load_ply(path)


def test_truncated_binary_body(tmp_path, rng):
    pc = PointCloud(rng.random((50, 3)), rng.integers(0, 256, (50, 3)))
    write_ply(pc, tmp_path / "b.ply", binary=True)
    raw = (tmp_path / "b.ply").read_bytes()
    (tmp_path / "c.ply").write_bytes(raw[:-100])
    with pytest.raises(TruncatedBody):
        load_ply(tmp_path / "c.ply")


def test_empty_cloud(tmp_path):
    path = _ascii_ply(tmp_path / "a.ply", [])
    with pytest.raises(EmptyCloud):
        load_ply(path)


def test_extra_properties_warn_and_are_ignored(tmp_path, caplog):
    props = ("x", "y", "z", "nx", "ny", "nz", "red", "green", "blue", "alpha")
    types = {"red": "uchar", "green": "uchar", "blue": "uchar", "alpha": "uchar"}
    path = _ascii_ply(tmp_path / "a.ply", [(1, 2, 3, 0, 0, 1, 10, 20, 30, 255)], props=props, types=types)
    pc = load_ply(path)
    assert "nx" in caplog.text and "alpha" in caplog.text
    np.testing.assert_array_equal(pc.colors, [[10, 20, 30]])


def test_merge_two_coincident_points():
    pc = PointCloud([[0, 0, 0], [0, 0, 0]], [[255, 0, 0], [0, 0, 255]])
    m = merge_duplicates(pc)
    assert len(m) == 1
    np.testing.assert_array_equal(m.positions, [[0, 0, 0]])
    np.testing.assert_array_equal(m.colors, [[127.5, 0, 127.5]])


def test_merge_without_duplicates_is_identity(rng):
    pc = PointCloud(rng.random((200, 3)), rng.integers(0, 256, (200, 3)))
    assert merge_duplicates(pc) == pc


def test_merge_matches_dict_grouping_oracle(rng):
    base = rng.random((1000, 3))
    reps = rng.integers(1, 6, size=1000)
    pos = np.repeat(base, reps, axis=0)
    perm = rng.permutation(len(pos))
    pos = pos[perm]
    col = rng.integers(0, 256, size=(len(pos), 3)).astype(float)
    groups: dict[tuple, list] = {}
    for p, c in zip(map(tuple, pos), col):
        groups.setdefault(p, []).append(c)
    m = merge_duplicates(PointCloud(pos, col))
    assert len(m) == len(groups) == 1000
    # first-occurrence order is kept, as dicts do
    np.testing.assert_array_equal(m.positions, np.array(list(groups)))
    expected = np.array([np.mean(v, axis=0) for v in groups.values()])
    np.testing.assert_allclose(m.colors, expected, rtol=0, atol=1e-12)


def test_merge_is_idempotent(rng):
    pos = rng.integers(0, 4, size=(300, 3)).astype(float)
    pc = PointCloud(pos, rng.integers(0, 256, (300, 3)))
    once = merge_duplicates(pc)
    assert merge_duplicates(once) == once


@pytest.mark.parametrize(
    "rgb, ycbcr",
    [
        ((0, 0, 0), (0.0, 0.5, 0.5)),
        ((255, 255, 255), (1.0, 0.5, 0.5)),
        # red: Cr = 0.5 + (1 - 0.2126) / 1.5748 = 1.0, Cb = 0.5 - 0.2126 / 1.8556
        ((255, 0, 0), (0.2126, 0.5 - 0.2126 / 1.8556, 1.0)),
    ],
)
def test_ycbcr_reference_colors(rgb, ycbcr):
    out = rgb_to_ycbcr(PointCloud([[0, 0, 0]], [rgb]))
    assert out.color_space is ColorSpace.YCBCR
    np.testing.assert_allclose(out.colors[0], ycbcr, atol=1e-12)


def test_ycbcr_red_cb_value():
    out = rgb_to_ycbcr(PointCloud([[0, 0, 0]], [[255, 0, 0]]))
    assert out.colors[0, 1] == pytest.approx(0.3854, abs=5e-5)


def test_ycbcr_against_matrix_oracle(rng):
    # BT.709 full-range matrix written out independently
    m = np.array(
        [
            [0.2126, 0.7152, 0.0722],
            [-0.2126 / 1.8556, -0.7152 / 1.8556, 0.9278 / 1.8556],
            [0.7874 / 1.5748, -0.7152 / 1.5748, -0.0722 / 1.5748],
        ]
    )
    rgb = rng.integers(0, 256, (500, 3)).astype(float)
    expected = np.clip(rgb / 255.0 @ m.T + [0, 0.5, 0.5], 0, 1)
    out = rgb_to_ycbcr(PointCloud(rng.random((500, 3)), rgb))
    np.testing.assert_allclose(out.colors, expected, atol=1e-12)


@given(st.integers(0, 255))
def test_grayscale_maps_to_neutral_chroma(v):
    out = rgb_to_ycbcr(PointCloud([[0, 0, 0]], [[v, v, v]]))
    np.testing.assert_allclose(out.colors[0], [v / 255.0, 0.5, 0.5], atol=1e-12)


def test_conversion_preserves_positions_and_count(rng):
    pc = PointCloud(rng.normal(size=(64, 3)), rng.integers(0, 256, (64, 3)))
    out = rgb_to_ycbcr(pc)
    assert len(out) == len(pc)
    assert out.positions.tobytes() == pc.positions.tobytes()
    assert ((out.colors >= 0) & (out.colors <= 1)).all()


def test_double_conversion_rejected():
    out = rgb_to_ycbcr(PointCloud([[0, 0, 0]], [[1, 2, 3]]))
    with pytest.raises(AlreadyConverted):
        rgb_to_ycbcr(out)


def test_cloud_is_immutable(rng):
    pc = PointCloud(rng.random((5, 3)), rng.random((5, 3)))
    with pytest.raises(ValueError):
        pc.positions[0, 0] = 1.0
    with pytest.raises(AttributeError):
        pc.positions = np.zeros((5, 3))


def test_content_hash_tracks_values(rng):
    pos = rng.random((10, 3))
    a = PointCloud(pos, np.zeros((10, 3)))
    b = PointCloud(pos.copy(), np.zeros((10, 3)))
    c = PointCloud(pos, np.ones((10, 3)))
    assert a.content_hash() == b.content_hash() != c.content_hash()
