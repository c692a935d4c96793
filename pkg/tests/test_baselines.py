import numpy as np
import pytest

from reverb_versa.core.baselines import baseline_predict
from reverb_versa.core.dataset import Dataset, Sample
from reverb_versa.core.patterns import omni_pattern
from reverb_versa.core.signals import ImpulseResponse
from reverb_versa.models import Pose, PreconditionError, SimulationConfig

LISTENER = Pose(position=(2.0, 2.0, 1.0))


@pytest.fixture
def line_dataset(room):
    sim = SimulationConfig(sample_rate=8000, ir_duration=0.004)
    stream = np.random.default_rng(9)
    emitters = [(1.0, 1.0, 1.0), (3.0, 1.0, 1.0), (4.5, 3.5, 2.5)]
    samples = tuple(
        Sample(Pose(position=p), LISTENER, ImpulseResponse(stream.normal(size=sim.n_samples), 8000))
        for p in emitters
    )
    return Dataset(room, omni_pattern(), omni_pattern(), sim, samples)


def test_nearest_picks_closest_training_ir(line_dataset):
    ir = baseline_predict("nearest", line_dataset, Pose(position=(1.2, 1.0, 1.0)), LISTENER)
    assert ir is line_dataset.samples[0].ir


def test_nearest_breaks_ties_by_sample_order(line_dataset):
    ir = baseline_predict("nearest", line_dataset, Pose(position=(2.0, 1.0, 1.0)), LISTENER)
    assert ir is line_dataset.samples[0].ir


def test_linear_exact_match_returns_training_ir(line_dataset):
    ir = baseline_predict("linear", line_dataset, Pose(position=(3.0, 1.0, 1.0)), LISTENER)
    assert ir is line_dataset.samples[1].ir


def test_linear_equidistant_blend_is_average(line_dataset):
    ir = baseline_predict("linear", line_dataset, Pose(position=(2.0, 1.0, 1.0)), LISTENER, k=2)
    expected = 0.5 * (line_dataset.samples[0].ir.samples + line_dataset.samples[1].ir.samples)
    np.testing.assert_allclose(ir.samples, expected, rtol=1e-12, atol=1e-12)
    assert ir.sample_rate == 8000


def test_linear_weights_favour_closer_samples(line_dataset):
    ir = baseline_predict("linear", line_dataset, Pose(position=(1.5, 1.0, 1.0)), LISTENER, k=2)
    a, b = line_dataset.samples[0].ir.samples, line_dataset.samples[1].ir.samples
    # distances 0.5 and 1.5 give weights 3/4 and 1/4
    np.testing.assert_allclose(ir.samples, 0.75 * a + 0.25 * b, rtol=1e-12, atol=1e-12)


def test_baseline_errors(line_dataset):
    with pytest.raises(PreconditionError):
        baseline_predict("cubic", line_dataset, LISTENER, LISTENER)
    empty = Dataset(line_dataset.room, omni_pattern(), omni_pattern(), line_dataset.simulation, ())
    with pytest.raises(PreconditionError):
        baseline_predict("nearest", empty, LISTENER, LISTENER)
