import numpy as np
import pytest

from reverb_versa.core import dataset as dataset_io
from reverb_versa.core.dataset import Dataset, Sample
from reverb_versa.core.patterns import omni_pattern
from reverb_versa.core.signals import ImpulseResponse
from reverb_versa.models import FieldDescriptor, Pose, SceneSpec, ShoeboxRoom, SimulationConfig


@pytest.fixture
def room():
    return ShoeboxRoom.uniform((5.0, 4.0, 3.0), 0.7)


@pytest.fixture
def small_sim():
    return SimulationConfig(sample_rate=8000, ir_duration=0.05, max_image_order=2, ray_count=500)


@pytest.fixture
def small_scene(room):
    listeners = [Pose(position=(x, y, 1.2)) for x in (2.0, 3.5) for y in (1.0, 3.0)]
    return SceneSpec(
        room=room,
        train_emitters=[Pose.facing((1.0, 1.0, 1.5), (0, 1, 0)), Pose.facing((4.0, 3.0, 1.5), (-1, 0, 0))],
        test_emitters=[Pose.facing((1.0, 3.2, 2.0), (1, 1, 0))],
        listener_grid=listeners,
        min_separation=1.0,
    )


@pytest.fixture
def small_dataset(small_scene, small_sim):
    return dataset_io.generate(small_scene, omni_pattern(), omni_pattern(), small_sim)


@pytest.fixture
def tiny_descriptor():
    return FieldDescriptor(hidden_layers=1, hidden_width=16, encoding_octaves=1, sample_rate=8000,
                           ir_samples=128, quadrature_size=8)


@pytest.fixture
def noise_dataset(room):
    """Hand-made dataset of random IRs at 8 kHz, 128 samples, three train and one test sample."""
    sim = SimulationConfig(sample_rate=8000, ir_duration=0.016)
    stream = np.random.default_rng(7)
    poses = [
        (Pose(position=(1.0, 1.0, 1.5)), Pose(position=(3.0, 2.0, 1.2)), "train"),
        (Pose(position=(1.0, 1.0, 1.5)), Pose(position=(2.0, 3.0, 1.2)), "train"),
        (Pose(position=(4.0, 3.0, 1.5)), Pose(position=(3.0, 2.0, 1.2)), "train"),
        (Pose(position=(2.5, 2.0, 2.0)), Pose(position=(2.0, 3.0, 1.2)), "test"),
    ]
    samples = tuple(
        Sample(e, l, ImpulseResponse(stream.normal(0.0, 0.1, sim.n_samples).astype(np.float32), 8000), split=s)
        for e, l, s in poses
    )
    return Dataset(room, omni_pattern(), omni_pattern(), sim, samples)
