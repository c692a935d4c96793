import numpy as np
import pytest
import torch

from reverb_versa.core import field, metrics
from reverb_versa.core.patterns import cardioid_pattern, omni_pattern
from reverb_versa.core.signals import ImpulseResponse
from reverb_versa.models import FieldStateError, Pose, PreconditionError


@pytest.fixture
def fld(tiny_descriptor):
    return field.AcousticField(tiny_descriptor).reset_parameters(3)


def test_positional_encoding_dimensions():
    enc = field.PositionalEncoding(3)
    x = torch.rand(5, 12)
    out = enc(x)
    assert out.shape == (5, enc.output_dim(12)) == (5, 84)
    torch.testing.assert_close(out[:, :12], x)


def test_unset_field_refuses_to_render(tiny_descriptor):
    fresh = field.AcousticField(tiny_descriptor)
    with pytest.raises(FieldStateError):
        field.render(fresh, Pose(position=(1.0, 1.0, 1.0)), Pose(position=(2.0, 2.0, 1.0)), omni_pattern())


def test_reset_parameters_is_seeded(tiny_descriptor):
    a = field.AcousticField(tiny_descriptor).reset_parameters(11)
    b = field.AcousticField(tiny_descriptor).reset_parameters(11)
    c = field.AcousticField(tiny_descriptor).reset_parameters(12)
    for (name, pa), pb, pc in zip(a.state_dict().items(), b.state_dict().values(), c.state_dict().values()):
        assert torch.equal(pa, pb), name
    assert not torch.equal(a.net[0].weight, c.net[0].weight)


def test_render_shape_and_rate(fld, tiny_descriptor):
    ir = field.render(fld, Pose(position=(1.0, 1.0, 1.0)), Pose(position=(2.0, 2.0, 1.0)), omni_pattern())
    assert len(ir) == tiny_descriptor.ir_samples
    assert ir.sample_rate == tiny_descriptor.sample_rate


def test_omni_render_is_quadrature_mean(fld):
    e_pos, l_pos, e_dir = field.pose_tensors([Pose(position=(1.0, 1.0, 1.0))], [Pose(position=(3.0, 2.0, 1.5))])
    with torch.no_grad():
        h_dirs = fld.directional(e_pos, l_pos, e_dir)
        rendered = fld.render_batch(e_pos, l_pos, e_dir, torch.ones(1, len(fld.weights)))
    expected = (fld.weights[None, :, None] * h_dirs).sum(dim=1)
    torch.testing.assert_close(rendered, expected, rtol=1e-5, atol=1e-6)


def test_listener_pattern_is_applied_at_render_time(fld):
    emitter = Pose(position=(1.0, 1.0, 1.0))
    listener = Pose.facing((3.0, 2.0, 1.5), (0, 0, 1))
    omni = field.render(fld, emitter, listener, omni_pattern()).samples
    card = field.render(fld, emitter, listener, cardioid_pattern()).samples
    e_pos, l_pos, e_dir = field.pose_tensors([emitter], [listener])
    gains = field.pattern_gains(cardioid_pattern(), fld.quadrature.directions, [listener.dir])
    with torch.no_grad():
        h_dirs = fld.directional(e_pos, l_pos, e_dir).double()[0].numpy()
    expected = (fld.quadrature.weights * gains[0]) @ h_dirs
    np.testing.assert_allclose(card, expected, rtol=1e-4, atol=1e-6)
    assert not np.allclose(card, omni)


def test_batched_render_matches_single(fld):
    emitters = [Pose(position=(1.0, 1.0, 1.0)), Pose(position=(4.0, 3.0, 2.0)), Pose(position=(2.0, 2.5, 1.0))]
    listeners = [Pose(position=(3.0, 2.0, 1.5))] * 3
    batched = field.render_many(fld, emitters, listeners, omni_pattern())
    single = field.render_many(fld, emitters, listeners, omni_pattern(), batch_size=1)
    for a, b in zip(batched, single):
        np.testing.assert_allclose(a.samples, b.samples, rtol=1e-5, atol=1e-6)


def test_probe_energy_is_non_negative(fld):
    points = np.array([[1.5, 1.0, 1.0], [0.5, 1.0, 1.0], [1.0, 1.5, 1.0]])
    energy = fld.probe_energy(Pose(position=(1.0, 1.0, 1.0)), points)
    assert energy.shape == (3,)
    assert np.all(energy >= 0.0)


@pytest.mark.parametrize("window", field.STFT_WINDOWS)
def test_torch_stft_matches_scipy(window):
    x = np.random.default_rng(window).normal(size=2000)
    expected = metrics.stft_magnitude(x, window)
    got = field.stft_magnitude(torch.tensor(x)[None], window)[0].numpy()
    assert got.shape == expected.shape
    np.testing.assert_allclose(got, expected, rtol=1e-7, atol=1e-10)


def test_audio_loss_matches_evaluation_metrics():
    stream = np.random.default_rng(5)
    a = ImpulseResponse(stream.normal(size=2000) * np.exp(-np.arange(2000) / 300), 8000)
    b = ImpulseResponse(stream.normal(size=2000) * np.exp(-np.arange(2000) / 200), 8000)
    expected = metrics.stft_err(a, b) + float(np.mean(np.abs(a.samples - b.samples)))
    assert field.loss_audio(a, b) == pytest.approx(expected, rel=1e-6)
    assert field.loss_audio(a, a) == 0.0


def test_audio_loss_of_silence_against_an_impulse():
    # Spectral convergence is 1 at every resolution. The impulse lights two
    # frames per window w with magnitudes 2/w and 1/w; the time term is 1/n.
    n = 1024
    target = np.zeros(n)
    target[0] = 1.0
    pred, target = ImpulseResponse(np.zeros(n), 8000), ImpulseResponse(target, 8000)
    loss = field.loss_audio(pred, target)
    assert loss == pytest.approx(2.826509151587, rel=1e-6)
    assert loss == pytest.approx(metrics.stft_err(pred, target) + 1.0 / n, rel=1e-6)
    assert field.loss_audio(target, pred) == pytest.approx(loss, rel=1e-12)


def test_audio_loss_weights():
    stream = np.random.default_rng(6)
    a = ImpulseResponse(stream.normal(size=500), 8000)
    b = ImpulseResponse(stream.normal(size=500), 8000)
    time_only = field.loss_audio(a, b, stft_weight=0.0)
    assert time_only == pytest.approx(float(np.mean(np.abs(a.samples - b.samples))))
    stft_only = field.loss_audio(a, b, time_weight=0.0)
    assert stft_only == pytest.approx(metrics.stft_err(a, b), rel=1e-6)


def test_audio_loss_shape_checks():
    with pytest.raises(PreconditionError):
        field.audio_loss(torch.zeros(2, 100), torch.zeros(2, 101))
    with pytest.raises(PreconditionError):
        field.loss_audio(ImpulseResponse(np.zeros(10), 8000), ImpulseResponse(np.zeros(10), 16000))


def test_audio_loss_has_gradient_at_silence():
    pred = torch.zeros(1, 256, dtype=torch.float64, requires_grad=True)
    loss = field.audio_loss(pred, torch.zeros(1, 256, dtype=torch.float64))
    loss.backward()
    assert torch.all(torch.isfinite(pred.grad))
