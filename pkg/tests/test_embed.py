import numpy as np
import pytest

from poseact.embed import (
    STREAMS,
    DescriptorSeries,
    FileStore,
    ProviderConfig,
    TestEmbedder,
    extract_series,
    make_provider,
)
from poseact.errors import FormatError, ValidationError
from poseact.flowprep import FlowField, quantize_flow
from poseact.partcrop import PART_ORDER, Patch, Pose, PoseSequence

JOINTS = (
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "hip_center",
)


def _pose(offset=0.0):
    base = np.array(
        [
            [16.0, 6.0],
            [12.0, 10.0],
            [20.0, 10.0],
            [10.0, 14.0],
            [22.0, 14.0],
            [9.0, 17.0],
            [23.0, 17.0],
            [16.0, 22.0],
        ]
    )
    return Pose(base + offset, JOINTS)


def test_embedder_zero_patch_maps_to_zero():
    embedder = TestEmbedder(dim=8, seed=0)
    out = embedder.describe(Patch(np.zeros((20, 20, 3))))
    assert out.shape == (8,)
    assert np.array_equal(out, np.zeros(8))


def test_embedder_deterministic_across_instances():
    rng = np.random.default_rng(1)
    patch = Patch(rng.uniform(0, 255, size=(24, 24, 3)))
    a = TestEmbedder(dim=16, seed=5).describe(patch)
    b = TestEmbedder(dim=16, seed=5).describe(patch)
    assert np.array_equal(a, b)
    c = TestEmbedder(dim=16, seed=6).describe(patch)
    assert not np.array_equal(a, c)


def test_embedder_matches_projection_of_probe():
    """Constant patch probes to a constant vector, so the descriptor is
    the row sums of the projection matrix times the gray level."""
    embedder = TestEmbedder(dim=12, seed=3)
    patch = Patch(np.full((16, 16, 3), 255.0))
    projection = np.random.default_rng(3).standard_normal((12, 768))
    assert np.allclose(embedder.describe(patch), projection.sum(axis=1))


def test_embedder_linear_in_gray_level():
    embedder = TestEmbedder(dim=6, seed=2)
    bright = embedder.describe(Patch(np.full((16, 16, 3), 200.0)))
    dim_ = embedder.describe(Patch(np.full((16, 16, 3), 100.0)))
    assert np.allclose(bright, 2.0 * dim_)


def test_file_store_round_trip_exact(tmp_path):
    store = FileStore(dim=4)
    rng = np.random.default_rng(0)
    keys = [
        ("vidB", 1, "left_hand", "flow"),
        ("vidA", 0, "right_hand", "appearance"),
        ("vidA", 1, "full_image", "appearance"),
    ]
    for key in keys:
        store.add(key, rng.normal(size=4))
    path = str(tmp_path / "store.pcnf")
    store.save(path)
    back = FileStore.load(path)
    assert back.dim == 4
    assert sorted(back.keys()) == sorted(keys)
    for key in keys:
        assert np.array_equal(back.describe(None, key), store.describe(None, key))


def test_file_store_save_is_key_sorted_and_stable(tmp_path):
    rng = np.random.default_rng(1)
    vectors = {("v", i, "full_image", "appearance"): rng.normal(size=3) for i in range(4)}
    a, b = FileStore(3), FileStore(3)
    for key, vec in vectors.items():
        a.add(key, vec)
    for key in reversed(list(vectors)):
        b.add(key, vectors[key])
    pa, pb = str(tmp_path / "a.pcnf"), str(tmp_path / "b.pcnf")
    a.save(pa)
    b.save(pb)
    assert open(pa, "rb").read() == open(pb, "rb").read()


def test_file_store_missing_key():
    store = FileStore(dim=2)
    with pytest.raises(ValidationError):
        store.describe(None, ("nope", 0, "full_image", "appearance"))


def test_file_store_dim_mismatch():
    store = FileStore(dim=2)
    with pytest.raises(FormatError):
        store.add(("v", 0, "full_image", "appearance"), np.zeros(3))


def test_provider_config_validation():
    with pytest.raises(ValidationError):
        ProviderConfig(kind="neural_net")
    with pytest.raises(ValidationError):
        ProviderConfig(dim=0)
    with pytest.raises(ValidationError):
        make_provider(ProviderConfig(kind="file_store", dim=4, store_path=None))


def _tiny_video(t_count):
    rng = np.random.default_rng(42)
    frames = [rng.uniform(0, 255, size=(32, 32, 3)) for _ in range(t_count)]
    flows = [
        FlowField(rng.uniform(-3, 3, (32, 32)), rng.uniform(-3, 3, (32, 32)))
        for _ in range(max(t_count - 1, 0))
    ]
    poses = PoseSequence([_pose(float(t)) for t in range(t_count)], video_id="v")
    return frames, flows, poses


def test_extract_series_counts_and_order():
    frames, flows, poses = _tiny_video(3)
    provider = TestEmbedder(dim=8, seed=0)
    series = extract_series(frames, flows, poses, provider, patch_side=16)
    assert len(series) == 2 * len(PART_ORDER)
    expected = [(p, s) for s in STREAMS for p in PART_ORDER]
    assert [(sr.part, sr.stream) for sr in series] == expected
    assert all(sr.vectors.shape == (3, 8) for sr in series)


def test_extract_series_duplicates_last_flow_field():
    frames, flows, _ = _tiny_video(3)
    # freeze the pose so flow-patch content depends only on the flow raster
    poses = PoseSequence([_pose()] * 3, video_id="v")
    series = extract_series(frames, flows, poses, TestEmbedder(8, 0), patch_side=16)
    by_key = {(sr.part, sr.stream): sr.vectors for sr in series}
    flow_vecs = by_key[("full_image", "flow")]
    assert np.array_equal(flow_vecs[1], flow_vecs[2])
    assert not np.array_equal(flow_vecs[0], flow_vecs[1])


def test_extract_series_single_frame_uses_zero_flow():
    frames, _, poses = _tiny_video(1)
    series = extract_series(frames, [], poses, TestEmbedder(8, 0), patch_side=16)
    by_key = {(sr.part, sr.stream): sr.vectors for sr in series}
    zero_image = quantize_flow(FlowField.zero(32, 32))
    embedded = TestEmbedder(8, 0).describe(
        _patch_of(zero_image.data.astype(np.float64), poses.frames[0])
    )
    assert np.array_equal(by_key[("full_image", "flow")][0], embedded)


def _patch_of(raster, pose):
    from poseact.partcrop import PartBox, crop_resize

    h, w = raster.shape[:2]
    return crop_resize(raster, PartBox("full_image", 0.0, 0.0, float(w), float(h)), side=16)


def test_extract_series_file_store_returns_rows_verbatim():
    frames, flows, poses = _tiny_video(2)
    store = FileStore(dim=4)
    rng = np.random.default_rng(3)
    stored = {}
    for t in range(2):
        for part in PART_ORDER:
            for stream in STREAMS:
                key = ("v", t, part, stream)
                stored[key] = rng.normal(size=4)
                store.add(key, stored[key])
    series = extract_series(frames, flows, poses, store, patch_side=16)
    for sr in series:
        for t in range(2):
            want = stored[("v", t, sr.part, sr.stream)].astype("<f4").astype(np.float64)
            assert np.array_equal(sr.vectors[t], want)


def test_extract_series_validates_counts():
    frames, flows, poses = _tiny_video(3)
    with pytest.raises(ValidationError):
        extract_series(frames[:2], flows, poses, TestEmbedder(4, 0), patch_side=16)
    with pytest.raises(ValidationError):
        extract_series(frames, flows[:1], poses, TestEmbedder(4, 0), patch_side=16)


def test_descriptor_series_validation():
    with pytest.raises(ValidationError):
        DescriptorSeries("full_image", "appearance", np.zeros((0, 4)))
    with pytest.raises(ValidationError):
        DescriptorSeries("full_image", "appearance", np.array([[np.inf, 0.0]]))
    with pytest.raises(ValidationError):
        DescriptorSeries("full_image", "video", np.zeros((2, 2)))
