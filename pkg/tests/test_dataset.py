import csv

import numpy as np
import pytest

from reverb_versa.core import dataset as dataset_io
from reverb_versa.core import file_utils
from reverb_versa.core.dataset import Dataset, Sample
from reverb_versa.core.patterns import omni_pattern
from reverb_versa.core.signals import ImpulseResponse, read_wav
from reverb_versa.models import ChecksumError, DatasetFormatError, Pose, PreconditionError


def test_generate_layout(small_dataset, small_scene, small_sim):
    n_listeners = len(small_scene.listener_grid)
    assert len(small_dataset) == 3 * n_listeners
    assert len(small_dataset.train) == 2 * n_listeners
    assert len(small_dataset.test) == n_listeners
    assert [s.split for s in small_dataset.samples] == ["train"] * 8 + ["test"] * 4
    first = small_dataset.samples[0]
    assert first.emitter == small_scene.train_emitters[0]
    assert first.listener == small_scene.listener_grid[0]
    assert first.ir.samples.dtype == np.float32
    assert len(first.ir) == small_sim.n_samples
    assert not any(s.is_virtual for s in small_dataset.samples)


def test_generate_ignores_worker_count(small_scene, small_sim, small_dataset, monkeypatch):
    monkeypatch.setenv("REVERB_VERSA_THREADS", "3")
    again = dataset_io.generate(small_scene, omni_pattern(), omni_pattern(), small_sim)
    assert again == small_dataset


def test_ele_augment_appends_exchanged_copies(small_dataset):
    augmented = dataset_io.ele_augment(small_dataset)
    real = small_dataset.train
    virtual = [s for s in augmented.samples if s.is_virtual]
    assert len(virtual) == len(real)
    assert augmented.test == small_dataset.test
    for src, v in zip(real, virtual):
        assert v.emitter == src.listener
        assert v.listener == src.emitter
        assert v.ir == src.ir
        assert v.split == "train"


def test_ele_positions_only_keeps_orientations(small_dataset):
    augmented = dataset_io.ele_augment(small_dataset, exchange_orientations=False)
    src = small_dataset.train[0]
    v = [s for s in augmented.samples if s.is_virtual][0]
    assert v.emitter.position == src.listener.position
    assert v.emitter.orientation == src.emitter.orientation
    assert v.listener.orientation == src.listener.orientation


def test_ele_drops_duplicates(room, small_sim):
    a, b = Pose(position=(1.0, 1.0, 1.0)), Pose(position=(3.0, 2.0, 1.0))
    ir = ImpulseResponse(np.ones(small_sim.n_samples, dtype=np.float32), small_sim.sample_rate)
    ds = Dataset(room, omni_pattern(), omni_pattern(), small_sim,
                 (Sample(a, b, ir), Sample(b, a, ir)))
    augmented = dataset_io.ele_augment(ds)
    assert len(augmented) == 2
    assert augmented.ele_duplicates_removed == 2


def test_ele_needs_training_samples(small_dataset):
    test_only = Dataset(small_dataset.room, small_dataset.emitter_pattern, small_dataset.listener_pattern,
                        small_dataset.simulation, tuple(small_dataset.test))
    with pytest.raises(PreconditionError):
        dataset_io.ele_augment(test_only)


def test_container_round_trip(small_dataset, tmp_path):
    augmented = dataset_io.ele_augment(small_dataset)
    path = tmp_path / "ds.rvds"
    dataset_io.write(augmented, path)
    loaded = dataset_io.read(path)
    assert loaded == augmented
    assert loaded.ele_duplicates_removed == augmented.ele_duplicates_removed
    assert [s.is_virtual for s in loaded.samples] == [s.is_virtual for s in augmented.samples]


def test_corrupted_ir_block_fails_checksum(small_dataset):
    data = bytearray(dataset_io.to_bytes(small_dataset))
    data[-10] ^= 0xFF
    with pytest.raises(ChecksumError):
        dataset_io.from_bytes(bytes(data))


def test_truncated_and_padded_files_rejected(small_dataset):
    data = dataset_io.to_bytes(small_dataset)
    with pytest.raises(DatasetFormatError):
        dataset_io.from_bytes(data[:-3])
    with pytest.raises(DatasetFormatError):
        dataset_io.from_bytes(data + b"\x00")


def test_wrong_magic_and_version(small_dataset):
    data = dataset_io.to_bytes(small_dataset)
    with pytest.raises(DatasetFormatError, match="magic"):
        dataset_io.from_bytes(b"XXXX" + data[4:])
    header, _ = file_utils.unpack_header(data, dataset_io.MAGIC, 1)
    blocks = [np.asarray(s.ir.samples, dtype="<f4").tobytes() for s in small_dataset.samples]
    newer = file_utils.pack_container(dataset_io.MAGIC, 99, header, blocks)
    with pytest.raises(DatasetFormatError, match="version"):
        dataset_io.from_bytes(newer)


def test_invalid_header_json_rejected(small_dataset):
    blocks = [np.asarray(s.ir.samples, dtype="<f4").tobytes() for s in small_dataset.samples]
    bad = file_utils.pack_container(dataset_io.MAGIC, 1, b'{"format_version": 1}', blocks)
    with pytest.raises(DatasetFormatError):
        dataset_io.from_bytes(bad)


def test_manifest_and_wavs(small_dataset, tmp_path):
    dataset_io.write_manifest(small_dataset, tmp_path / "manifest.csv")
    with (tmp_path / "manifest.csv").open() as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0].keys()) == dataset_io.MANIFEST_COLUMNS
    assert len(rows) == len(small_dataset)
    assert float(rows[0]["ex"]) == small_dataset.samples[0].emitter.position[0]

    count = dataset_io.export_wavs(small_dataset, tmp_path / "wav", split="test")
    assert count == len(small_dataset.test)
    first_test = small_dataset.samples.index(small_dataset.test[0])
    wav = read_wav(tmp_path / "wav" / f"sample_{first_test:05d}.wav")
    assert wav == small_dataset.test[0].ir
