import numpy as np
import pytest

from camsam2.errors import ConfigError, DataError
from camsam2.synthcam import (SynthConfig, boundary_contrast, generate_clip, generate_dataset,
                              read_dataset, write_dataset)


def test_determinism():
    a = generate_clip(SynthConfig(seed=5))
    b = generate_clip(SynthConfig(seed=5))
    assert a.frames.tobytes() == b.frames.tobytes()
    assert all(np.array_equal(x, y) for x, y in zip(a.masks, b.masks))


def test_shapes_and_ranges():
    c = generate_clip(SynthConfig(H=32, W=48, n_frames=5))
    assert c.frames.shape == (5, 3, 32, 48)
    assert c.frames.min() >= 0 and c.frames.max() <= 1
    for m in c.masks:
        assert m.shape == (32, 48) and m.any()


@pytest.mark.parametrize("seed", range(6))
def test_camouflage_lowers_boundary_contrast(seed):
    vals = []
    for s in (0.0, 0.5, 1.0):
        c = generate_clip(SynthConfig(strength=s, seed=seed))
        vals.append(np.mean([boundary_contrast(f, m) for f, m in zip(c.frames, c.masks)]))
    assert vals[0] > vals[1] > vals[2]


@pytest.mark.parametrize("seed", range(10))
def test_mask_area_matches_config(seed):
    cfg = SynthConfig(seed=seed, area_range=(0.05, 0.15))
    c = generate_clip(cfg)
    for m in c.masks:
        assert 0.05 * 0.6 <= m.mean() <= 0.15 * 1.4


def test_label_stride():
    c = generate_clip(SynthConfig(n_frames=11, label_stride=5))
    assert [m is not None for m in c.masks] == [t % 5 == 0 for t in range(11)]


def test_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(area_range=(0.2, 0.6))
    with pytest.raises(ConfigError):
        SynthConfig(n_frames=0)


def test_round_trip(tmp_path):
    clips = generate_dataset(3, SynthConfig(n_frames=6, label_stride=5, seed=2))
    write_dataset(clips, tmp_path, "test")
    back = read_dataset(tmp_path, "test")
    assert [c.clip_id for c in back] == [c.clip_id for c in clips]
    for a, b in zip(clips, back):
        assert np.abs(a.frames - b.frames).max() <= 1 / 255 + 1e-6
        for x, y in zip(a.masks, b.masks):
            assert (x is None and y is None) or np.array_equal(x, y)
        assert b.label_stride == 5
    listing = sorted(p.name for p in (tmp_path / "test").iterdir() if p.is_dir())
    assert listing == [c.clip_id for c in clips]
    manifest = (tmp_path / "test" / "manifest.tsv").read_text().splitlines()
    assert manifest[0].split("\t") == ["clip_id", "n_frames", "label_stride"]
    assert len(manifest) == 4


def test_missing_and_corrupt(tmp_path):
    with pytest.raises(DataError):
        read_dataset(tmp_path, "train")
    clips = generate_dataset(1, SynthConfig(n_frames=2))
    write_dataset(clips, tmp_path, "train")
    (tmp_path / "train" / clips[0].clip_id / "frames" / "00001.png").write_bytes(b"not a png")
    with pytest.raises(DataError):
        read_dataset(tmp_path, "train")
