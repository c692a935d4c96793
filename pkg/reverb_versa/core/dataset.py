"""
Sparse-emitter datasets, emitter-listener exchange (ELE) augmentation and
the on-disk container.

Container layout (all integers little-endian):

    b"RVDS" | u32 version | u64 header length | UTF-8 JSON header | u32 CRC32
    then per sample: ir_samples x float32 LE | u32 CRC32

The JSON header is a DatasetHeader (room, patterns, simulation settings,
per-sample poses, split labels and is_virtual flags). IRs are held as
float32 from generation on, so read(write(d)) == d bit for bit.
"""
import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from reverb_versa import config as env_config
from reverb_versa.core import file_utils, metadata_builder
from reverb_versa.core.signals import ImpulseResponse
from reverb_versa.core.simulator import simulate_ir
from reverb_versa.models import (
    DATASET_FORMAT_VERSION,
    DatasetFormatError,
    GainPattern,
    Pose,
    PreconditionError,
    SampleRecord,
    SceneSpec,
    ShoeboxRoom,
    SimulationConfig,
)

MAGIC = b"RVDS"
POSE_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class Sample:
    emitter: Pose
    listener: Pose
    ir: ImpulseResponse
    split: str = "train"
    is_virtual: bool = False

    @property
    def record(self) -> SampleRecord:
        return SampleRecord(emitter=self.emitter, listener=self.listener, split=self.split, is_virtual=self.is_virtual)

    def pose_vector(self) -> np.ndarray:
        """(p_e, w_e, p_l, w_l) as one 12-vector."""
        return np.concatenate([self.emitter.pos, self.emitter.dir, self.listener.pos, self.listener.dir])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        return self.record == other.record and self.ir == other.ir


@dataclass(frozen=True, eq=False)
class Dataset:
    room: ShoeboxRoom
    emitter_pattern: GainPattern
    listener_pattern: GainPattern
    simulation: SimulationConfig
    samples: Tuple[Sample, ...] = ()
    ele_duplicates_removed: int = 0

    @property
    def sample_rate(self) -> int:
        return self.simulation.sample_rate

    @property
    def ir_samples(self) -> int:
        return self.simulation.n_samples

    @property
    def train(self) -> List[Sample]:
        return [s for s in self.samples if s.split == "train"]

    @property
    def test(self) -> List[Sample]:
        return [s for s in self.samples if s.split == "test"]

    def __len__(self) -> int:
        return len(self.samples)

    def header(self):
        return metadata_builder.create_dataset_header(
            room=self.room, emitter_pattern=self.emitter_pattern, listener_pattern=self.listener_pattern,
            simulation=self.simulation, sample_rate=self.sample_rate, ir_samples=self.ir_samples,
            samples=[s.record for s in self.samples], ele_duplicates_removed=self.ele_duplicates_removed,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.header() == other.header() and all(a.ir == b.ir for a, b in zip(self.samples, other.samples))


def generate(scene: SceneSpec, emitter_pattern: GainPattern, listener_pattern: GainPattern,
             config: SimulationConfig, verbose: bool = False) -> Dataset:
    """
    One image-source IR per (emitter, listener) pair, training emitters
    first, each emitter's listeners in grid order.
    """
    pairs = [(e, l, "train") for e in scene.train_emitters for l in scene.listener_grid]
    pairs += [(e, l, "test") for e in scene.test_emitters for l in scene.listener_grid]

    def run(pair) -> Sample:
        emitter, listener, split = pair
        ir = simulate_ir(scene.room, emitter, listener, emitter_pattern, listener_pattern, config, mode="ism")
        return Sample(emitter, listener, ir.astype(np.float32), split=split)

    workers = env_config.worker_count()
    if verbose:
        print(f"DEBUG: Simulating {len(pairs)} impulse responses on {workers} worker(s)")
    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = tuple(pool.map(run, pairs))
    else:
        samples = tuple(run(p) for p in pairs)
    return Dataset(scene.room, emitter_pattern, listener_pattern, config, samples)


def exchange(sample: Sample, exchange_orientations: bool = True) -> Sample:
    """The pose-swapped sample carrying the identical IR."""
    if exchange_orientations:
        emitter, listener = sample.listener, sample.emitter
    else:
        emitter = Pose(position=sample.listener.position, orientation=sample.emitter.orientation)
        listener = Pose(position=sample.emitter.position, orientation=sample.listener.orientation)
    return Sample(emitter, listener, sample.ir, split=sample.split, is_virtual=True)


def ele_augment(dataset: Dataset, exchange_orientations: bool = True, verbose: bool = False) -> Dataset:
    """
    Appends the exchanged copy of every real training sample. Copies whose
    poses coincide (within 1e-9) with a training sample already present are
    dropped and counted. The test split is left as it is.
    """
    real = [s for s in dataset.train if not s.is_virtual]
    if not real:
        raise PreconditionError("ELE augmentation needs at least one training sample")
    known = np.array([s.pose_vector() for s in dataset.train])
    added, removed = [], 0
    for s in real:
        cand = exchange(s, exchange_orientations)
        vec = cand.pose_vector()
        if np.any(np.all(np.abs(known - vec) <= POSE_TOLERANCE, axis=1)):
            removed += 1
            continue
        added.append(cand)
        known = np.vstack([known, vec])
    if verbose:
        print(f"DEBUG: ELE added {len(added)} virtual samples, {removed} duplicate(s) removed")
    return replace(dataset, samples=dataset.samples + tuple(added),
                   ele_duplicates_removed=dataset.ele_duplicates_removed + removed)


def to_bytes(dataset: Dataset) -> bytes:
    header = metadata_builder.serialize_header_to_bytes(dataset.header())
    blocks = []
    for s in dataset.samples:
        if len(s.ir) != dataset.ir_samples:
            raise PreconditionError(f"IR length {len(s.ir)} does not match the dataset stride {dataset.ir_samples}")
        blocks.append(np.asarray(s.ir.samples, dtype="<f4").tobytes())
    return file_utils.pack_container(MAGIC, DATASET_FORMAT_VERSION, header, blocks)


def from_bytes(data: bytes) -> Dataset:
    raw_header, offset = file_utils.unpack_header(data, MAGIC, DATASET_FORMAT_VERSION)
    header = metadata_builder.parse_dataset_header(raw_header)
    if header.ir_samples != header.simulation.n_samples:
        raise DatasetFormatError("header ir_samples disagrees with its simulation settings")
    blocks = file_utils.unpack_blocks(data, offset, 4 * header.ir_samples, header.sample_count, "IR block")
    samples = tuple(
        Sample(r.emitter, r.listener,
               ImpulseResponse(np.frombuffer(b, dtype="<f4").astype(np.float32), header.sample_rate),
               split=r.split, is_virtual=r.is_virtual)
        for r, b in zip(header.samples, blocks)
    )
    return Dataset(header.room, header.emitter_pattern, header.listener_pattern, header.simulation,
                   samples, header.ele_duplicates_removed)


def write(dataset: Dataset, path: Path) -> None:
    file_utils.save_bytes_to_file(Path(path), to_bytes(dataset))


def read(path: Path) -> Dataset:
    return from_bytes(file_utils.read_file_content(Path(path)))


MANIFEST_COLUMNS = ["id", "split", "is_virtual", "ex", "ey", "ez", "efx", "efy", "efz",
                    "lx", "ly", "lz", "lfx", "lfy", "lfz"]


def write_manifest(dataset: Dataset, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_COLUMNS)
        for i, s in enumerate(dataset.samples):
            writer.writerow([i, s.split, int(s.is_virtual), *(repr(float(v)) for v in s.pose_vector())])


def export_wavs(dataset: Dataset, directory: Path, split: Optional[str] = None) -> int:
    """One float32 WAV per sample, named by sample id."""
    directory = Path(directory)
    count = 0
    for i, s in enumerate(dataset.samples):
        if split is None or s.split == split:
            s.ir.to_wav(directory / f"sample_{i:05d}.wav")
            count += 1
    return count
