"""
Empirical reciprocity check: simulate A->B and B->A for random location
pairs and compare the paired distance with the distance between
non-matching pairs of the same room.

Distances are the per-metric errors of metrics.compare_irs (Amp, Env,
T60 in percent, C50 in dB, EDT in ms), averaged over all comparisons.
"""
import csv
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from reverb_versa.core import rng as rng_utils
from reverb_versa.core.metrics import aggregate_reports, compare_irs
from reverb_versa.core.patterns import omni_pattern
from reverb_versa.core.signals import ImpulseResponse
from reverb_versa.core.simulator import simulate_ir
from reverb_versa.models import (
    EmptyPathSetError,
    GainPattern,
    MetricReport,
    Pose,
    PreconditionError,
    ShoeboxRoom,
    SimulationConfig,
    VerificationReport,
    VerificationRow,
    VerificationSettings,
)

RATIO_METRICS = ("amp", "env", "t60", "c50", "edt")

Pair = Tuple[ShoeboxRoom, Pose, Pose]


def random_pairs(rooms: Sequence[ShoeboxRoom], pair_count: int, margin: float, seed: int) -> List[Pair]:
    """
    pair_count (room, A, B) triples, rooms used round-robin. Positions are
    uniform inside each room shrunk by `margin`; facings are uniform.
    """
    if pair_count < 2:
        raise PreconditionError("reciprocity verification needs at least two pairs")
    if not rooms:
        raise PreconditionError("no rooms to verify")
    stream = rng_utils.derived_rng(seed, 3)
    pairs = []
    for i in range(pair_count):
        room = rooms[i % len(rooms)]
        if np.any(room.size <= 2 * margin):
            raise PreconditionError(f"room {room.dimensions} is too small for a {margin} m margin")
        poses = []
        for _ in range(2):
            pos = stream.uniform(margin, room.size - margin)
            facing = stream.normal(size=3)
            poses.append(Pose.facing(pos, facing))
        pairs.append((room, poses[0], poses[1]))
    return pairs


def _simulate(room, emitter, listener, ep, lp, config, mode) -> ImpulseResponse:
    try:
        return simulate_ir(room, emitter, listener, ep, lp, config, mode=mode)
    except EmptyPathSetError:
        # no ray reached the capture sphere
        return ImpulseResponse(np.zeros(config.n_samples), config.sample_rate)


def _row(variant: str, report: MetricReport, ray_count: Optional[int] = None) -> VerificationRow:
    return VerificationRow(variant=variant, ray_count=ray_count, amp=report.amp_err, env=report.env_err,
                           t60=report.t60_err, c50=report.c50_err, edt=report.edt_err)


def _paired(pairs: Sequence[Pair], forward, backward) -> MetricReport:
    return aggregate_reports(compare_irs(backward[i], forward[i]) for i in range(len(pairs)))


def _unpaired(pairs: Sequence[Pair], forward, backward) -> MetricReport:
    reports = [
        compare_irs(backward[j], forward[i])
        for i in range(len(pairs)) for j in range(len(pairs))
        if i != j and pairs[i][0] == pairs[j][0]
    ]
    if not reports:
        raise PreconditionError("un-paired distances need at least two pairs in one room")
    return aggregate_reports(reports)


def verify_reciprocity(rooms: Sequence[ShoeboxRoom], settings: VerificationSettings, simulation: SimulationConfig,
                       mode: str = "ism", emitter_pattern: Optional[GainPattern] = None,
                       listener_pattern: Optional[GainPattern] = None, seed: int = 0,
                       verbose: bool = False) -> VerificationReport:
    """
    ism: one paired and one un-paired row; exact reciprocity shows as a
    paired row of zeros. rays: one paired row per entry of the ray sweep
    (averaged over settings.seeds independent tracings) and an un-paired
    row at the highest ray count, where the paired/un-paired ratios are
    also taken.
    """
    ep = emitter_pattern or omni_pattern()
    lp = listener_pattern or omni_pattern()
    pairs = random_pairs(rooms, settings.pair_count, settings.margin, seed)
    base = simulation.model_copy(update={"max_image_order": settings.max_image_order})

    def run(config: SimulationConfig, sim_mode: str):
        forward = [_simulate(room, a, b, ep, lp, config, sim_mode) for room, a, b in pairs]
        backward = [_simulate(room, b, a, ep, lp, config, sim_mode) for room, a, b in pairs]
        return forward, backward

    if mode == "ism":
        forward, backward = run(base, "ism")
        paired, unpaired = _paired(pairs, forward, backward), _unpaired(pairs, forward, backward)
        if verbose:
            print(f"DEBUG: ISM reciprocity over {len(pairs)} pairs: paired amp {paired.amp_err:.3g}")
        rows = [_row("paired", paired), _row("un-paired", unpaired)]
        return VerificationReport(mode="ism", pair_count=len(pairs), rows=rows, ratios=_ratios(paired, unpaired))
    if mode != "rays":
        raise PreconditionError(f"unknown verification mode '{mode}' (expected 'ism' or 'rays')")
    if not settings.ray_sweep:
        raise PreconditionError("the ray sweep is empty")

    rows, paired, last = [], None, None
    sweep = sorted(set(settings.ray_sweep))
    for count in sweep:
        per_seed = []
        for s in range(settings.seeds):
            forward, backward = [], []
            for i, (room, a, b) in enumerate(pairs):
                cfg_ab = base.model_copy(update={"ray_count": count, "rng_seed": rng_utils.derive_seed(seed, i, s, 0)})
                cfg_ba = base.model_copy(update={"ray_count": count, "rng_seed": rng_utils.derive_seed(seed, i, s, 1)})
                forward.append(_simulate(room, a, b, ep, lp, cfg_ab, "rays"))
                backward.append(_simulate(room, b, a, ep, lp, cfg_ba, "rays"))
            per_seed.append(_paired(pairs, forward, backward))
            if s == 0:
                last = (forward, backward)
        paired = aggregate_reports(per_seed)
        rows.append(_row("paired", paired, ray_count=count))
        if verbose:
            print(f"DEBUG: {count} rays x {settings.seeds} seed(s): paired amp {paired.amp_err:.4g}")
    unpaired = _unpaired(pairs, *last)
    rows.append(_row("un-paired", unpaired, ray_count=sweep[-1]))
    return VerificationReport(mode="rays", pair_count=len(pairs), rows=rows, ratios=_ratios(paired, unpaired))


def _ratios(paired: MetricReport, unpaired: MetricReport) -> dict:
    p, u = _row("paired", paired), _row("un-paired", unpaired)
    return {m: (getattr(p, m) / getattr(u, m) if getattr(u, m) > 0 else 0.0) for m in RATIO_METRICS}


def paired_trend(report: VerificationReport, metric: str = "amp") -> List[Tuple[int, float]]:
    """(ray count, paired distance) in sweep order."""
    return [(r.ray_count, getattr(r, metric)) for r in report.rows if r.variant == "paired" and r.ray_count is not None]


def write_verification_csv(report: VerificationReport, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "ray_count", *RATIO_METRICS])
        for r in report.rows:
            writer.writerow([r.variant, "" if r.ray_count is None else r.ray_count,
                             *(repr(float(getattr(r, m))) for m in RATIO_METRICS)])
