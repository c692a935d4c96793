"""
Impulse-response metrics.

Decay statistics come from the Schroeder backward integral: T60 is the
T30 extrapolation (linear fit between -5 and -35 dB), EDT the 0 to -10 dB
fit scaled to 60 dB. C50 splits the energy 50 ms after the direct arrival,
taken as the first sample reaching 20% of the absolute peak; the sample at
exactly 50 ms is early.

Signal errors compare two IRs after zero-padding to a common length:
  amp_err   mean |(|A(f)| - |B(f)|)| over the one-sided spectrum
  env_err   mean |(|a_analytic| - |b_analytic|)|
  stft_err  mean over Hann windows (64, 256, 1024), hop = window / 4, of
            spectral convergence + mean |log(|Sa| + eps) - log(|Sb| + eps)|
"""
import csv
from pathlib import Path
from typing import Iterable, List, Tuple

import numpy as np
from scipy.signal import get_window, hilbert, stft

from reverb_versa.core.signals import ImpulseResponse, zero_pad_pair
from reverb_versa.models import InsufficientDecayError, MetricReport, PreconditionError, SilentSignalError

SCHROEDER_FLOOR_DB = -120.0
C50_CLAMP_DB = 100.0
ONSET_FRACTION = 0.2
STFT_WINDOWS = (64, 256, 1024)
LOG_EPS = 1e-7
CSV_COLUMNS = ("amp", "env", "t60", "c50", "edt", "stft")


def schroeder_curve(ir: ImpulseResponse) -> np.ndarray:
    """Backward-integrated energy in dB per sample, 0 dB at t = 0, floored at -120 dB."""
    e = np.asarray(ir.samples, dtype=float) ** 2
    if not np.any(e > 0.0):
        raise SilentSignalError("impulse response is silent")
    tail = np.cumsum(e[::-1])[::-1]
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(tail / tail[0])
    return np.maximum(db, SCHROEDER_FLOOR_DB)


def _decay_time(ir: ImpulseResponse, start_db: float, stop_db: float) -> float:
    curve = schroeder_curve(ir)
    if curve.min() > stop_db:
        raise InsufficientDecayError(f"decay never reaches {stop_db} dB (minimum {curve.min():.1f} dB)")
    i0 = int(np.argmax(curve <= start_db))
    i1 = int(np.argmax(curve <= stop_db))
    if i1 - i0 < 1:
        raise InsufficientDecayError(f"too few samples between {start_db} and {stop_db} dB to fit a decay")
    t = np.arange(i0, i1 + 1) / ir.sample_rate
    slope, _ = np.polyfit(t, curve[i0:i1 + 1], 1)
    if not slope < 0.0:
        raise InsufficientDecayError("decay fit has a non-negative slope")
    return float(-60.0 / slope)


def t60(ir: ImpulseResponse) -> float:
    return _decay_time(ir, -5.0, -35.0)


def edt(ir: ImpulseResponse) -> float:
    return _decay_time(ir, 0.0, -10.0)


def direct_arrival(ir: ImpulseResponse) -> int:
    x = np.abs(np.asarray(ir.samples, dtype=float))
    peak = x.max()
    if not peak > 0.0:
        raise SilentSignalError("impulse response is silent")
    return int(np.argmax(x >= ONSET_FRACTION * peak))


def c50(ir: ImpulseResponse) -> float:
    onset = direct_arrival(ir)
    e = np.asarray(ir.samples, dtype=float) ** 2
    split = onset + int(round(0.05 * ir.sample_rate)) + 1
    early = float(e[onset:split].sum())
    late = float(e[split:].sum())
    if late == 0.0:
        return C50_CLAMP_DB
    if early == 0.0:
        return -C50_CLAMP_DB
    return float(np.clip(10.0 * np.log10(early / late), -C50_CLAMP_DB, C50_CLAMP_DB))


def _pair(a: ImpulseResponse, b: ImpulseResponse, minimum: int = 0):
    if a.sample_rate != b.sample_rate:
        raise PreconditionError(f"sample rates differ: {a.sample_rate} vs {b.sample_rate}")
    return zero_pad_pair(np.asarray(a.samples, dtype=float), np.asarray(b.samples, dtype=float), minimum)


def amp_err(a: ImpulseResponse, b: ImpulseResponse) -> float:
    x, y = _pair(a, b)
    return float(np.mean(np.abs(np.abs(np.fft.rfft(x)) - np.abs(np.fft.rfft(y)))))


def env_err(a: ImpulseResponse, b: ImpulseResponse) -> float:
    x, y = _pair(a, b)
    return float(np.mean(np.abs(np.abs(hilbert(x)) - np.abs(hilbert(y)))))


def stft_magnitude(x: np.ndarray, window: int) -> np.ndarray:
    """|STFT| with a periodic Hann window, hop window/4, zero-padded half-window borders."""
    win = get_window("hann", window)
    _, _, z = stft(x, window=win, nperseg=window, noverlap=window - window // 4,
                   boundary="zeros", padded=False, detrend=False)
    return np.abs(z)


def stft_err(a: ImpulseResponse, b: ImpulseResponse) -> float:
    x, y = _pair(a, b, minimum=max(STFT_WINDOWS))
    total = 0.0
    for w in STFT_WINDOWS:
        sa, sb = stft_magnitude(x, w), stft_magnitude(y, w)
        denom = np.linalg.norm(sa) + np.linalg.norm(sb)
        sc = float(np.linalg.norm(sa - sb) / denom) if denom > 0 else 0.0
        mag = float(np.mean(np.abs(np.log(sa + LOG_EPS) - np.log(sb + LOG_EPS))))
        total += sc + mag
    return total / len(STFT_WINDOWS)


def compare_irs(pred: ImpulseResponse, target: ImpulseResponse) -> MetricReport:
    """
    All six errors for one pair. T60 error is percent of the target's T60,
    EDT error is in milliseconds. When either decay analysis fails the pair
    is marked skipped and its T60/C50/EDT entries are left out of averages.
    """
    report = dict(amp_err=amp_err(pred, target), env_err=env_err(pred, target), stft_err=stft_err(pred, target))
    try:
        t_pred, t_true = t60(pred), t60(target)
        report["t60_err"] = abs(t_pred - t_true) / t_true * 100.0
        report["edt_err"] = abs(edt(pred) - edt(target)) * 1000.0
        report["c50_err"] = abs(c50(pred) - c50(target))
    except (InsufficientDecayError, SilentSignalError):
        return MetricReport(**report, skipped=1)
    return MetricReport(**report)


def aggregate_reports(reports: Iterable[MetricReport]) -> MetricReport:
    """Count-weighted means; decay metrics only over non-skipped pairs."""
    reports = list(reports)
    if not reports:
        return MetricReport(count=0)
    counts = np.array([r.count for r in reports], dtype=float)
    valid = np.array([r.count - r.skipped for r in reports], dtype=float)

    def mean(name: str, w: np.ndarray) -> float:
        vals = np.array([getattr(r, name) for r in reports])
        return float(np.sum(w * vals) / np.sum(w)) if np.sum(w) > 0 else 0.0

    return MetricReport(
        amp_err=mean("amp_err", counts), env_err=mean("env_err", counts), stft_err=mean("stft_err", counts),
        t60_err=mean("t60_err", valid), c50_err=mean("c50_err", valid), edt_err=mean("edt_err", valid),
        count=int(counts.sum()), skipped=int(sum(r.skipped for r in reports)),
    )


def metric_row(report: MetricReport) -> List[float]:
    return [report.amp_err, report.env_err, report.t60_err, report.c50_err, report.edt_err, report.stft_err]


def write_metric_csv(path: Path, rows: Iterable[Tuple[str, MetricReport]]) -> None:
    """Columns: name, amp, env, t60, c50, edt, stft, count, skipped."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["name", *CSV_COLUMNS, "count", "skipped"])
        for name, report in rows:
            writer.writerow([name, *(repr(v) for v in metric_row(report)), report.count, report.skipped])


def read_metric_csv(path: Path) -> List[Tuple[str, MetricReport]]:
    out = []
    with Path(path).open(newline="") as f:
        for row in csv.DictReader(f):
            out.append((row["name"], MetricReport(
                amp_err=float(row["amp"]), env_err=float(row["env"]), t60_err=float(row["t60"]),
                c50_err=float(row["c50"]), edt_err=float(row["edt"]), stft_err=float(row["stft"]),
                count=int(row["count"]), skipped=int(row["skipped"]),
            )))
    return out
