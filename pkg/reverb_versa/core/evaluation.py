"""
Held-out evaluation of trained fields and interpolation baselines, the
learned-reciprocity probe, and the acceptance checks used by `--check`.

Predictions and targets are both brought to the field's working rate and
length before comparison, so field and baseline numbers share one scale.
"""
from typing import Dict, List, Optional, Sequence, Tuple

from reverb_versa import config as env_config
from reverb_versa.core import rng as rng_utils
from reverb_versa.core.baselines import baseline_predict
from reverb_versa.core.dataset import Dataset, Sample, generate
from reverb_versa.core.field import AcousticField, render_many
from reverb_versa.core.metrics import aggregate_reports, compare_irs
from reverb_versa.core.presets import resolve_scene
from reverb_versa.core.signals import ImpulseResponse, resample_to
from reverb_versa.core.training import train
from reverb_versa.models import AcceptanceThresholds, ExperimentConfig, GainPattern, MetricReport, PreconditionError


def evaluate_predictions(preds: Sequence[ImpulseResponse], samples: Sequence[Sample],
                         rate: int = env_config.FIELD_SAMPLE_RATE,
                         n_samples: int = env_config.FIELD_IR_SAMPLES) -> MetricReport:
    if len(preds) != len(samples):
        raise PreconditionError(f"{len(preds)} predictions for {len(samples)} samples")
    reports = [
        compare_irs(resample_to(p, rate, n_samples), resample_to(s.ir, rate, n_samples))
        for p, s in zip(preds, samples)
    ]
    return aggregate_reports(reports)


def _split(dataset: Dataset, split: str) -> List[Sample]:
    samples = [s for s in dataset.samples if s.split == split and not s.is_virtual]
    if not samples:
        raise PreconditionError(f"dataset has no real '{split}' samples to evaluate")
    return samples


def evaluate_field(fld: AcousticField, dataset: Dataset, split: str = "test",
                   listener_pattern: Optional[GainPattern] = None, verbose: bool = False) -> MetricReport:
    samples = _split(dataset, split)
    preds = render_many(fld, [s.emitter for s in samples], [s.listener for s in samples],
                        listener_pattern or dataset.listener_pattern)
    report = evaluate_predictions(preds, samples, fld.descriptor.sample_rate, fld.descriptor.ir_samples)
    if verbose:
        print(f"DEBUG: Field on {len(samples)} {split} samples: stft={report.stft_err:.4f} c50={report.c50_err:.3f}")
    return report


def evaluate_baseline(kind: str, dataset: Dataset, split: str = "test", k: int = 4,
                      rate: int = env_config.FIELD_SAMPLE_RATE,
                      n_samples: int = env_config.FIELD_IR_SAMPLES) -> MetricReport:
    samples = _split(dataset, split)
    preds = [baseline_predict(kind, dataset, s.emitter, s.listener, k=k) for s in samples]
    return evaluate_predictions(preds, samples, rate, n_samples)


def learned_reciprocity_probe(fld: AcousticField, dataset: Dataset, n_pairs: int,
                              pattern: Optional[GainPattern] = None, seed: int = 0) -> MetricReport:
    """
    Renders A->B and B->A for random (emitter pose, listener pose) pairs
    drawn from the dataset, both through the same listener pattern, and
    averages the metric distances between the two renders.
    """
    if n_pairs < 1:
        raise PreconditionError("the probe needs at least one pose pair")
    pattern = pattern or dataset.listener_pattern
    emitters = list({s.emitter: None for s in dataset.samples if not s.is_virtual})
    listeners = list({s.listener: None for s in dataset.samples if not s.is_virtual})
    if not emitters or not listeners:
        raise PreconditionError("dataset has no poses to probe")
    stream = rng_utils.derived_rng(seed, 4)
    a = [emitters[int(i)] for i in stream.integers(0, len(emitters), n_pairs)]
    b = [listeners[int(i)] for i in stream.integers(0, len(listeners), n_pairs)]
    forward = render_many(fld, a, b, pattern)
    backward = render_many(fld, b, a, pattern)
    return aggregate_reports(compare_irs(y, x) for x, y in zip(forward, backward))


def relative_gain(base: float, new: float) -> float:
    """Fractional improvement of `new` over `base` (positive is better)."""
    return (base - new) / base if base > 0 else 0.0


def acceptance_failures(reports: Dict[str, MetricReport], probes: Dict[str, MetricReport],
                        thresholds: AcceptanceThresholds) -> List[str]:
    """
    Checks whichever comparisons the available runs allow. Keys are regime
    names (vanilla, ele, ssl) or baseline names (nearest, linear).
    """
    failures = []

    def beats(better: str, worse: str, needed: float) -> None:
        for metric in ("stft_err", "c50_err"):
            gain = relative_gain(getattr(reports[worse], metric), getattr(reports[better], metric))
            if gain < needed:
                failures.append(f"{better} improves {metric} over {worse} by {gain:.1%} (needs {needed:.0%})")

    if "ele" in reports and "vanilla" in reports:
        beats("ele", "vanilla", thresholds.ele_gain)
    if "ssl" in reports and "ele" in reports:
        beats("ssl", "ele", thresholds.ssl_gain)
    if "vanilla" in probes:
        for versa in ("ele", "ssl"):
            if versa not in probes:
                continue
            for metric in ("amp_err", "env_err", "t60_err", "c50_err", "edt_err"):
                base = getattr(probes["vanilla"], metric)
                value = getattr(probes[versa], metric)
                if value > thresholds.probe_ratio * base:
                    failures.append(f"{versa} probe {metric} {value:.4g} exceeds {thresholds.probe_ratio} x vanilla {base:.4g}")
    learned = [r for name, r in reports.items() if name in ("vanilla", "ele", "ssl")]
    if learned:
        best = min(r.stft_err for r in learned)
        for kind in ("nearest", "linear"):
            if kind in reports and best >= reports[kind].stft_err:
                failures.append(f"best field stft_err {best:.4f} does not beat the {kind} baseline ({reports[kind].stft_err:.4f})")
    return failures


def emitter_sweep(cfg: ExperimentConfig, counts: Sequence[int], regimes: Sequence[str],
                  verbose: bool = False) -> List[Tuple[int, str, MetricReport]]:
    """
    For each training-emitter count: build the preset dataset, train every
    regime on it and evaluate on the held-out emitters.
    """
    rows = []
    for n in counts:
        if n < 1:
            raise PreconditionError(f"emitter counts must be >= 1, got {n}")
        scene, emitter_pattern, listener_pattern = resolve_scene(cfg, n_train=n)
        ds = generate(scene, emitter_pattern, listener_pattern, cfg.simulation, verbose=verbose)
        for regime in regimes:
            fld, _ = train(ds, cfg.training.model_copy(update={"regime": regime}), cfg.field, verbose=verbose)
            report = evaluate_field(fld, ds, verbose=verbose)
            if verbose:
                print(f"DEBUG: {n} emitter(s), {regime}: stft={report.stft_err:.4f}")
            rows.append((n, regime, report))
    return rows


def trend_failures(rows: Sequence[Tuple[int, str, MetricReport]], metric: str = "stft_err") -> List[str]:
    """Regimes whose error grows as training emitters are added."""
    failures = []
    for regime in dict.fromkeys(r for _, r, _ in rows):
        series = sorted((n, getattr(rep, metric)) for n, r, rep in rows if r == regime)
        for (n0, v0), (n1, v1) in zip(series, series[1:]):
            if v1 > v0:
                failures.append(f"{regime}: {metric} rises from {v0:.4f} ({n0} emitters) to {v1:.4f} ({n1} emitters)")
    return failures


def regime_gap_failures(rows: Sequence[Tuple[int, str, MetricReport]], better: str = "ele",
                        baseline: str = "vanilla", metric: str = "stft_err") -> List[str]:
    """Emitter counts at which `better` scores worse than `baseline`. Counts missing either regime are ignored."""
    by_count = {}
    for n, regime, rep in rows:
        by_count.setdefault(n, {})[regime] = getattr(rep, metric)
    failures = []
    for n in sorted(by_count):
        scores = by_count[n]
        if better in scores and baseline in scores and scores[better] > scores[baseline]:
            failures.append(f"{better} {metric} {scores[better]:.4f} exceeds {baseline} {scores[baseline]:.4f} "
                            f"at {n} emitters")
    return failures
