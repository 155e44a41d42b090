"""
Pruebas del formato de checkpoint, de la persistencia del dataset y del manifiesto
"""

import struct

import numpy as np
import pytest

from engine.optim import ParamSet
from model.cad import init_weights
from storage.checkpoint import MAGIC, TensorFile, encode_tensors, load_checkpoint, save_checkpoint
from storage.dataset_store import load_dataset, save_dataset
from storage.manifest import build_manifest, read_manifest, write_manifest
from synthetic.dataset import EpisodeDistribution, make_dataset
from synthetic.features import FeatureDims, PrototypeBank
from utils.errors import CheckpointError
from utils.helpers import derive_rng


def header(version=1, count=1) -> bytes:
    return MAGIC + struct.pack('<II', version, count)


# =============================================================================
# Formato binario
# =============================================================================

class TestFormat:

    def test_single_tensor_layout(self, tmp_path):
        path = save_checkpoint(tmp_path / 'a.cadw', {'a': np.array([1.0, 2.0], dtype=np.float32)})
        raw = path.read_bytes()
        assert len(raw) == 38
        assert raw[:4] == b'CADW'
        assert struct.unpack('<II', raw[4:12]) == (1, 1)
        assert struct.unpack('<I', raw[12:16]) == (1,)
        assert raw[16:17] == b'a'
        assert struct.unpack('<BI', raw[17:22]) == (0, 1)
        assert struct.unpack('<Q', raw[22:30]) == (2,)
        assert struct.unpack('<2f', raw[30:38]) == (1.0, 2.0)

    def test_names_written_in_sorted_order(self):
        payload = encode_tensors({'b': np.zeros(1), 'a': np.zeros(1)})
        assert payload.index(b'a') < payload.index(b'b', 12)

    def test_roundtrip_is_bitwise(self, tmp_path, tiny_cfg):
        state = init_weights(tiny_cfg, derive_rng(0, 'init')).state()
        first = save_checkpoint(tmp_path / 'one.cadw', state)
        loaded = load_checkpoint(first)
        assert list(loaded) == sorted(state)
        for name, array in state.items():
            np.testing.assert_array_equal(loaded[name], array)
        second = save_checkpoint(tmp_path / 'two.cadw', loaded)
        assert first.read_bytes() == second.read_bytes()

    def test_scalar_and_empty_tensors(self, tmp_path):
        tensors = {'scalar': np.float32(3.5), 'empty': np.zeros((0, 3), dtype=np.float32)}
        loaded = load_checkpoint(save_checkpoint(tmp_path / 'x.cadw', tensors))
        assert loaded['scalar'].shape == () and float(loaded['scalar']) == 3.5
        assert loaded['empty'].shape == (0, 3)

    def test_params_reload(self, tmp_path, tiny_cfg):
        params = init_weights(tiny_cfg, derive_rng(0, 'init'))
        restored = init_weights(tiny_cfg, derive_rng(1, 'init'))
        restored.load_state(load_checkpoint(save_checkpoint(tmp_path / 'p.cadw', params.state())))
        for name in params.names():
            np.testing.assert_array_equal(restored[name].data, params[name].data)

    def test_integer_tensors_rejected(self):
        with pytest.raises(CheckpointError):
            encode_tensors({'ids': np.arange(3)})


# =============================================================================
# Archivos corruptos
# =============================================================================

class TestCorruption:

    def test_bad_magic(self, tmp_path):
        path = tmp_path / 'bad.cadw'
        path.write_bytes(b'XXXX' + struct.pack('<II', 1, 0))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_unknown_version(self, tmp_path):
        path = tmp_path / 'v2.cadw'
        path.write_bytes(header(version=2, count=0))
        with pytest.raises(CheckpointError) as info:
            load_checkpoint(path)
        assert '2' in str(info.value)

    def test_unknown_dtype(self, tmp_path):
        path = tmp_path / 'dtype.cadw'
        body = struct.pack('<I', 1) + b'a' + struct.pack('<BI', 7, 1) + struct.pack('<Q', 1) + b'\0' * 8
        path.write_bytes(header() + body)
        with pytest.raises(CheckpointError) as info:
            load_checkpoint(path)
        assert info.value.names == ['a']

    def test_truncated(self, tmp_path):
        good = save_checkpoint(tmp_path / 'good.cadw', {'w': np.ones((4, 4), dtype=np.float32)})
        cut = tmp_path / 'cut.cadw'
        cut.write_bytes(good.read_bytes()[:-5])
        with pytest.raises(CheckpointError):
            load_checkpoint(cut)

    def test_trailing_bytes(self, tmp_path):
        good = save_checkpoint(tmp_path / 'good.cadw', {'w': np.ones(2, dtype=np.float32)})
        extra = tmp_path / 'extra.cadw'
        extra.write_bytes(good.read_bytes() + b'\0')
        with pytest.raises(CheckpointError):
            load_checkpoint(extra)

    def test_duplicate_names(self, tmp_path):
        one = encode_tensors({'a': np.ones(1)})[12:]
        path = tmp_path / 'dup.cadw'
        path.write_bytes(header(count=2) + one + one)
        with pytest.raises(CheckpointError) as info:
            load_checkpoint(path)
        assert info.value.names == ['a']

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / 'nope.cadw')

    def test_failed_write_publishes_nothing(self, tmp_path):
        path = tmp_path / 'partial.cadw'
        with pytest.raises(RuntimeError):
            with TensorFile(path, 'w') as tensor_file:
                tensor_file.write_all({'a': np.ones(1)})
                raise RuntimeError('interrumpido')
        assert not path.exists()
        assert not (tmp_path / 'partial.cadw.tmp').exists()


# =============================================================================
# Dataset y manifiesto
# =============================================================================

class TestDatasetStore:

    @pytest.fixture
    def dataset(self):
        dims = FeatureDims(d_a=4, d_t=4, s=4, c=4, l_q=2)
        bank = PrototypeBank(3, dims, seed=0)
        return make_dataset(10, EpisodeDistribution(dims=dims), np.random.default_rng(0), bank)

    def test_roundtrip_preserves_hash(self, tmp_path, dataset):
        directory = save_dataset(tmp_path / 'ds', dataset)
        loaded = load_dataset(directory)
        assert loaded.content_hash() == dataset.content_hash()
        assert len(loaded) == len(dataset)
        for split in ('train', 'val', 'test'):
            np.testing.assert_array_equal(loaded.splits[split], dataset.splits[split])
        assert loaded.items[3].episode.spec.activities == dataset.items[3].episode.spec.activities

    def test_tampered_episode_detected(self, tmp_path, dataset):
        directory = save_dataset(tmp_path / 'ds', dataset)
        with TensorFile(directory / 'episodes' / '00000.cadw', 'r') as f:
            arrays = f.read_all()
        arrays['audio'] = arrays['audio'] + 1.0
        save_checkpoint(directory / 'episodes' / '00000.cadw', arrays)
        with pytest.raises(CheckpointError):
            load_dataset(directory)

    def test_missing_header(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path)


class TestManifest:

    def test_roundtrip(self, tmp_path):
        manifest = build_manifest('train', 'abc', 7, 'def', {'variant': '3CA'})
        write_manifest(tmp_path, manifest)
        loaded = read_manifest(tmp_path)
        assert loaded['command'] == 'train'
        assert loaded['seed'] == 7
        assert loaded['dataset_hash'] == 'def'
        assert loaded['variant'] == '3CA'
        assert 'numpy_version' in loaded
