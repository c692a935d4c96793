import numpy as np
import pytest

from reverb_versa.core import metrics
from reverb_versa.core.signals import ImpulseResponse
from reverb_versa.models import InsufficientDecayError, MetricReport, PreconditionError, SilentSignalError

FS = 16000


def decay(tau: float, seconds: float = 2.0) -> ImpulseResponse:
    t = np.arange(int(seconds * FS)) / FS
    return ImpulseResponse(np.exp(-t / tau), FS)


@pytest.mark.parametrize("tau", [0.02, 0.05, 0.1])
def test_decay_times_match_closed_form(tau):
    expected = 3.0 * tau * np.log(10.0)
    ir = decay(tau)
    assert metrics.t60(ir) == pytest.approx(expected, rel=0.02)
    assert metrics.edt(ir) == pytest.approx(expected, rel=0.02)


def test_c50_equal_energy_is_zero_db():
    onset = int(0.010 * FS)
    x = np.zeros(FS)
    x[onset] = 1.0
    x[onset + int(0.060 * FS)] = 1.0
    assert metrics.c50(ImpulseResponse(x, FS)) == pytest.approx(0.0, abs=0.01)


def test_c50_counts_the_50ms_sample_as_early():
    x = np.zeros(8000)
    x[[0, 400, 401]] = 1.0
    assert metrics.c50(ImpulseResponse(x, 8000)) == pytest.approx(10.0 * np.log10(2.0), abs=1e-12)


def test_c50_clamps_without_late_energy():
    x = np.zeros(FS)
    x[10] = 1.0
    assert metrics.c50(ImpulseResponse(x, FS)) == metrics.C50_CLAMP_DB


def test_direct_arrival_uses_onset_fraction():
    x = np.zeros(100)
    x[5], x[20] = 0.1, 1.0
    assert metrics.direct_arrival(ImpulseResponse(x, FS)) == 20
    x[5] = 0.3
    assert metrics.direct_arrival(ImpulseResponse(x, FS)) == 5


def test_identical_inputs_score_zero():
    ir = decay(0.05, 0.5)
    report = metrics.compare_irs(ir, ir)
    assert metrics.metric_row(report) == [0.0] * 6
    assert report.skipped == 0


def test_errors_are_symmetric_and_positive():
    rng = np.random.default_rng(2)
    a = ImpulseResponse(rng.normal(size=3000) * np.exp(-np.arange(3000) / 400), FS)
    b = ImpulseResponse(rng.normal(size=2500) * np.exp(-np.arange(2500) / 300), FS)
    assert metrics.stft_err(a, b) == pytest.approx(metrics.stft_err(b, a))
    assert metrics.amp_err(a, b) == pytest.approx(metrics.amp_err(b, a))
    assert metrics.env_err(a, b) > 0.0
    assert metrics.stft_err(a, b) > 0.0


def test_silent_signal():
    silent = ImpulseResponse(np.zeros(800), FS)
    with pytest.raises(SilentSignalError):
        metrics.t60(silent)
    report = metrics.compare_irs(silent, decay(0.05, 0.5))
    assert report.skipped == 1
    assert report.t60_err == 0.0


def test_insufficient_decay():
    with pytest.raises(InsufficientDecayError):
        metrics.t60(ImpulseResponse(np.ones(100), FS))


def test_sample_rate_mismatch():
    with pytest.raises(PreconditionError):
        metrics.amp_err(ImpulseResponse(np.ones(10), 8000), ImpulseResponse(np.ones(10), 16000))


def test_aggregate_weights_and_skips():
    a = MetricReport(amp_err=1.0, t60_err=10.0, count=1)
    b = MetricReport(amp_err=4.0, t60_err=0.0, count=2, skipped=2)
    agg = metrics.aggregate_reports([a, b])
    assert agg.amp_err == pytest.approx(3.0)
    assert agg.t60_err == pytest.approx(10.0)
    assert agg.count == 3
    assert agg.skipped == 2
    assert metrics.aggregate_reports([]).count == 0


def test_metric_csv(tmp_path):
    rows = [("vanilla", MetricReport(amp_err=0.5, stft_err=1.25, count=4)),
            ("nearest", MetricReport(c50_err=2.0, skipped=1))]
    path = tmp_path / "eval.csv"
    metrics.write_metric_csv(path, rows)
    assert path.read_text().splitlines()[0] == "name,amp,env,t60,c50,edt,stft,count,skipped"
    assert metrics.read_metric_csv(path) == rows


def test_schroeder_curve_floors_after_a_single_impulse():
    x = np.zeros(64)
    x[0] = 1.0
    curve = metrics.schroeder_curve(ImpulseResponse(x, FS))
    assert curve[0] == 0.0
    assert np.all(curve[1:] == metrics.SCHROEDER_FLOOR_DB)


def test_decay_statistics_ignore_global_scale():
    ir = decay(0.05, 1.0)
    early = np.zeros(len(ir))
    early[int(0.02 * FS)] = 0.5
    ir = ImpulseResponse(ir.samples + early, FS)
    loud = ImpulseResponse(ir.samples * 3.7, FS)
    np.testing.assert_allclose(metrics.schroeder_curve(loud), metrics.schroeder_curve(ir), atol=1e-9)
    assert metrics.t60(loud) == pytest.approx(metrics.t60(ir), rel=1e-9)
    assert metrics.edt(loud) == pytest.approx(metrics.edt(ir), rel=1e-9)
    assert metrics.c50(loud) == pytest.approx(metrics.c50(ir), abs=1e-9)


def test_doubled_signal_amp_error_is_the_spectrum_mean():
    rng = np.random.default_rng(8)
    a = rng.normal(size=2048)
    expected = np.mean(np.abs(np.fft.rfft(a)))
    assert metrics.amp_err(ImpulseResponse(a, FS), ImpulseResponse(2.0 * a, FS)) == pytest.approx(expected, rel=1e-9)
    assert metrics.stft_err(ImpulseResponse(a, FS), ImpulseResponse(2.0 * a, FS)) > 0.0


def test_shifted_impulse_keeps_spectrum_but_not_stft():
    a, b = np.zeros(2048), np.zeros(2048)
    a[0], b[1] = 1.0, 1.0
    a, b = ImpulseResponse(a, FS), ImpulseResponse(b, FS)
    assert metrics.amp_err(a, b) == pytest.approx(0.0, abs=1e-12)
    assert metrics.stft_err(a, b) > 0.0
    x, y = np.zeros(1024), np.zeros(1024)
    x[0], y[1] = 1.0, 1.0
    assert np.abs(metrics.stft_magnitude(x, 64) - metrics.stft_magnitude(y, 64)).max() > 0.0
