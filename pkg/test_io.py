import json
import struct

import numpy as np
import pytest

from fssam.datagen import generate
from fssam.errors import (BadMagicError, UnsupportedVersionError, TruncatedPayloadError,
                          MaskRangeViolationError, FeatureFileError)
from fssam.io import (HEADER, read_feature_file, write_feature_file, write_pgm,
                      write_episodes, read_episodes)
from fssam.models import FeatureMap, SoftMask, SynthSpec


def raw_file(path, payload, magic=b'FSSF', version=1, kind=0, shape=(1, 2, 1)):
    with open(path, 'wb') as f:
        f.write(HEADER.pack(magic, version, kind, *shape))
        f.write(np.asarray(payload, dtype='<f4').tobytes())
    return path


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(100):
        shape = tuple(int(v) for v in rng.integers(1, 9, size=3))
        values = rng.standard_normal(shape).astype(np.float32).astype(np.float64)
        path = tmp_path / f'map_{i}.fssf'
        write_feature_file(str(path), FeatureMap(values))
        loaded = read_feature_file(str(path))
        assert isinstance(loaded, FeatureMap)
        assert np.array_equal(loaded.data, values)

        again = tmp_path / f'copy_{i}.fssf'
        write_feature_file(str(again), loaded)
        assert path.read_bytes() == again.read_bytes()


def test_mask_round_trip(tmp_path):
    mask = SoftMask(np.array([[0.0, 0.25], [1.0, 0.5]]))
    path = str(tmp_path / 'mask.fssf')
    write_feature_file(path, mask)
    loaded = read_feature_file(path)
    assert isinstance(loaded, SoftMask)
    assert np.array_equal(loaded.data, mask.data)


def test_layout_is_little_endian(tmp_path):
    path = tmp_path / 'one.fssf'
    write_feature_file(str(path), FeatureMap(np.array([[[1.0, 2.0, 3.0]]])))
    raw = path.read_bytes()
    assert raw[:4] == b'FSSF'
    assert struct.unpack('<HHIII', raw[4:20]) == (1, 0, 1, 1, 3)
    assert struct.unpack('<3f', raw[20:]) == (1.0, 2.0, 3.0)


def test_bad_magic(tmp_path):
    with pytest.raises(BadMagicError):
        read_feature_file(raw_file(tmp_path / 'x.fssf', [1.0, 2.0], magic=b'XXXX'))


def test_unsupported_version(tmp_path):
    with pytest.raises(UnsupportedVersionError):
        read_feature_file(raw_file(tmp_path / 'v.fssf', [1.0, 2.0], version=7))


def test_truncated_payload(tmp_path):
    with pytest.raises(TruncatedPayloadError):
        read_feature_file(raw_file(tmp_path / 't.fssf', [1.0], shape=(2, 2, 1)))
    short = tmp_path / 'h.fssf'
    short.write_bytes(b'FSSF\x01')
    with pytest.raises(TruncatedPayloadError):
        read_feature_file(str(short))


def test_trailing_bytes_and_unknown_kind(tmp_path):
    with pytest.raises(FeatureFileError):
        read_feature_file(raw_file(tmp_path / 'long.fssf', [1.0, 2.0, 3.0]))
    with pytest.raises(FeatureFileError):
        read_feature_file(raw_file(tmp_path / 'kind.fssf', [1.0, 2.0], kind=4))


def test_mask_out_of_range(tmp_path):
    with pytest.raises(MaskRangeViolationError):
        read_feature_file(raw_file(tmp_path / 'm.fssf', [0.0, 1.5], kind=1))


def test_pgm(tmp_path):
    path = tmp_path / 'prior.pgm'
    write_pgm(str(path), np.array([[0.0, 0.5], [1.0, 0.2]]))
    raw = path.read_bytes()
    header = b'P5\n2 2\n255\n'
    assert raw.startswith(header)
    assert list(raw[len(header):]) == [0, 128, 255, 51]


def test_episode_directory_round_trip(tmp_path):
    episodes = generate(SynthSpec(height=8, width=8, channels=4, num_classes=2, min_fg_size=2,
                                  max_fg_size=4, noise_sigma=0.1, shots=3, episodes=3, seed=1))
    folder = str(tmp_path / 'episodes')
    write_episodes(folder, episodes)

    loaded = read_episodes(folder)
    assert len(loaded) == 3
    for original, copy in zip(episodes, loaded):
        assert copy.class_id == original.class_id
        assert copy.shots == 3
        assert np.allclose(copy.query_feats.data, original.query_feats.data, atol=1e-6)
        assert np.array_equal(copy.query_gt.data, original.query_gt.data)

    assert all(ep.shots == 1 for ep in read_episodes(folder, shots=1))
    with pytest.raises(FileNotFoundError):
        read_episodes(str(tmp_path / 'missing'))


@pytest.mark.parametrize('meta, fragment', [
    ({'class_id': 1}, 'shots'),
    ({'shots': 1}, 'class_id'),
    ({'shots': 0, 'class_id': 1}, 'shots'),
    ({'shots': 1, 'class_id': 'cat'}, 'class_id'),
    ([1, 1], 'object'),
])
def test_incomplete_meta_is_a_file_error(tmp_path, meta, fragment):
    folder = str(tmp_path / 'episodes')
    write_episodes(folder, generate(SynthSpec(height=8, width=8, channels=4, num_classes=2, min_fg_size=2,
                                              max_fg_size=4, episodes=1, seed=1)))
    (tmp_path / 'episodes' / 'episode_0000' / 'meta.json').write_text(json.dumps(meta))
    with pytest.raises(FeatureFileError, match=fragment):
        read_episodes(folder)


def test_unparsable_meta(tmp_path):
    folder = str(tmp_path / 'episodes')
    write_episodes(folder, generate(SynthSpec(height=8, width=8, channels=4, num_classes=2, min_fg_size=2,
                                              max_fg_size=4, episodes=1, seed=1)))
    (tmp_path / 'episodes' / 'episode_0000' / 'meta.json').write_text('{"shots": ')
    with pytest.raises(FeatureFileError, match='not valid JSON'):
        read_episodes(folder)
