import typer
from typing import List, NoReturn, Optional, Tuple
from typing_extensions import Annotated
from pathlib import Path
import csv

from . import config
from .core import dataset as dataset_io
from .core import evaluation, metrics, plots, presets, reciprocity, training
from .core.patterns import omni_pattern
from .core.simulator import SynthesisReport, simulate_ir
from .models import (
    AcceptanceError,
    ExperimentConfig,
    MetricReport,
    Pose,
    ReverbVersaError,
)

app = typer.Typer(help="Reverb Versa CLI - Simulates room impulse responses and trains reciprocity-aware acoustic fields.")

REGIMES = ("vanilla", "ele", "ssl")

# --- Shared options ---
ConfigOption = Annotated[Optional[Path], typer.Option(
    "--config", "-c",
    help="Experiment config (JSON). Unknown keys are rejected.",
    exists=True, file_okay=True, dir_okay=False, readable=True, resolve_path=True,
)]
SeedOption = Annotated[Optional[int], typer.Option("--seed", help="Root seed; overrides the config's simulation and training seeds.")]
OutOption = Annotated[Optional[Path], typer.Option("--out", "-o", help=f"Output directory. [default: config output_dir or {config.OUTPUT_DIR}]")]
VerboseOption = Annotated[bool, typer.Option("--verbose", "-v", help="Enable verbose output for debugging.")]
CheckOption = Annotated[bool, typer.Option("--check", help="Turn the acceptance thresholds into the exit code (2 on failure).")]


def _abort(e: Exception) -> NoReturn:
    """One machine-readable error line, exit 2 for failed acceptance checks, 1 otherwise."""
    typer.secho(f"ERROR [{type(e).__name__}]: {e}", fg=typer.colors.RED, err=True)
    raise typer.Exit(code=2 if isinstance(e, AcceptanceError) else 1)


def _load_config(config_path: Optional[Path], seed: Optional[int]) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if config_path is not None:
        cfg = ExperimentConfig.model_validate_json(config_path.read_bytes())
    if seed is not None:
        cfg = cfg.model_copy(update={
            "simulation": cfg.simulation.model_copy(update={"rng_seed": seed}),
            "training": cfg.training.model_copy(update={"seed": seed}),
        })
        # re-validate so an out-of-range seed is reported like any config error
        cfg = ExperimentConfig.model_validate(cfg.model_dump())
    return cfg


def _out_dir(out: Optional[Path], cfg: ExperimentConfig) -> Path:
    path = out if out is not None else Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(cfg: ExperimentConfig, out_dir: Path) -> None:
    typer.echo("Verbose mode enabled.")
    typer.echo(f"--> Initial Config:")
    typer.echo(f"    Preset: {cfg.preset}")
    typer.echo(f"    Output Directory: {out_dir}")
    typer.echo(f"    Simulation Seed: {cfg.simulation.rng_seed}")
    typer.echo(f"    Training Seed: {cfg.training.seed}")
    typer.echo(f"    Worker Threads: {config.worker_count()}")


@app.command()
def simulate(
    config_path: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    mode: Annotated[str, typer.Option("--mode", help="Path source: 'ism' (image sources) or 'rays' (stochastic tracer).")] = "ism",
    emitter: Annotated[Optional[Tuple[float, float, float]], typer.Option("--emitter", help="Emitter position x y z (meters). [default: first training emitter]")] = None,
    listener: Annotated[Optional[Tuple[float, float, float]], typer.Option("--listener", help="Listener position x y z (meters). [default: first grid listener]")] = None,
    emitter_facing: Annotated[Tuple[float, float, float], typer.Option("--emitter-facing", help="Emitter facing vector.")] = (1.0, 0.0, 0.0),
    listener_facing: Annotated[Tuple[float, float, float], typer.Option("--listener-facing", help="Listener facing vector.")] = (1.0, 0.0, 0.0),
    verbose: VerboseOption = False,
):
    """
    Simulates one impulse response and writes it as ir.wav
    plus an ir.csv metadata table.
    """
    try:
        cfg = _load_config(config_path, seed)
        out_dir = _out_dir(out, cfg)
        if verbose:
            _echo_config(cfg, out_dir)
            typer.echo(f"    Mode: {mode}")
        scene, emitter_pattern, listener_pattern = presets.resolve_scene(cfg)
        e_pos = emitter if emitter is not None else scene.train_emitters[0].position
        l_pos = listener if listener is not None else scene.listener_grid[0].position
        e_pose = Pose.facing(e_pos, emitter_facing)
        l_pose = Pose.facing(l_pos, listener_facing)
        typer.echo(f"Simulating {mode} impulse response...")
        report = SynthesisReport()
        ir = simulate_ir(scene.room, e_pose, l_pose, emitter_pattern, listener_pattern, cfg.simulation,
                         mode=mode, report=report, verbose=verbose)
        ir.to_wav(out_dir / "ir.wav")
        with (out_dir / "ir.csv").open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["key", "value"])
            writer.writerow(["mode", mode])
            writer.writerow(["sample_rate", ir.sample_rate])
            writer.writerow(["samples", len(ir)])
            writer.writerow(["emitter", " ".join(repr(v) for v in e_pose.position)])
            writer.writerow(["emitter_facing", " ".join(repr(v) for v in e_pose.orientation)])
            writer.writerow(["listener", " ".join(repr(v) for v in l_pose.position)])
            writer.writerow(["listener_facing", " ".join(repr(v) for v in l_pose.orientation)])
            writer.writerow(["paths", report.total])
            writer.writerow(["truncated_paths", report.truncated])
            writer.writerow(["seed", cfg.simulation.rng_seed])
    except (ReverbVersaError, ValueError, OSError) as e:
        _abort(e)
    if report.truncated:
        typer.secho(f"Warning: {report.truncated} of {report.total} paths arrived after the IR end.", fg=typer.colors.YELLOW)
    typer.secho(f"SUCCESS: Impulse response written to {out_dir / 'ir.wav'}", fg=typer.colors.GREEN)


@app.command("make-dataset")
def make_dataset(
    config_path: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    emitters: Annotated[Optional[int], typer.Option("--emitters", min=1, help="Number of training emitters (uses the preset layout).")] = None,
    wav: Annotated[bool, typer.Option("--wav", help="Also export every IR as a WAV file.")] = False,
    verbose: VerboseOption = False,
):
    """
    Simulates the sparse-emitter dataset of a scene into
    dataset.rvds with a manifest.csv of its poses.
    """
    try:
        cfg = _load_config(config_path, seed)
        out_dir = _out_dir(out, cfg)
        if verbose:
            _echo_config(cfg, out_dir)
        scene, emitter_pattern, listener_pattern = presets.resolve_scene(cfg, n_train=emitters)
        typer.echo(f"Simulating {len(scene.train_emitters) + len(scene.test_emitters)} emitters "
                   f"x {len(scene.listener_grid)} listeners...")
        ds = dataset_io.generate(scene, emitter_pattern, listener_pattern, cfg.simulation, verbose=verbose)
        dataset_io.write(ds, out_dir / "dataset.rvds")
        dataset_io.write_manifest(ds, out_dir / "manifest.csv")
        if wav:
            count = dataset_io.export_wavs(ds, out_dir / "wav")
            if verbose:
                typer.echo(f"    Exported {count} WAV files")
    except (ReverbVersaError, ValueError, OSError) as e:
        _abort(e)
    typer.secho(f"SUCCESS: {len(ds)} samples written to {out_dir / 'dataset.rvds'}", fg=typer.colors.GREEN)


@app.command()
def augment(
    input_path: Annotated[Path, typer.Option(
        ..., "--input", "-i",
        help="Dataset file to augment.",
        exists=True, file_okay=True, dir_okay=False, readable=True, resolve_path=True,
    )],
    out: OutOption = None,
    positions_only: Annotated[bool, typer.Option("--positions-only", help="Exchange positions but keep each role's orientation.")] = False,
    verbose: VerboseOption = False,
):
    """
    Adds the emitter-listener exchanged copy of every training
    sample and writes dataset_ele.rvds.
    """
    try:
        out_dir = _out_dir(out, ExperimentConfig())
        ds = dataset_io.read(input_path)
        if verbose:
            typer.echo("Verbose mode enabled.")
            typer.echo(f"    Input: {input_path} ({len(ds)} samples)")
        augmented = dataset_io.ele_augment(ds, exchange_orientations=not positions_only, verbose=verbose)
        dataset_io.write(augmented, out_dir / "dataset_ele.rvds")
        dataset_io.write_manifest(augmented, out_dir / "manifest_ele.csv")
    except (ReverbVersaError, ValueError, OSError) as e:
        _abort(e)
    added = len(augmented) - len(ds)
    typer.secho(f"SUCCESS: {added} virtual samples added "
                f"({augmented.ele_duplicates_removed - ds.ele_duplicates_removed} duplicates removed).",
                fg=typer.colors.GREEN)


@app.command("verify-reciprocity")
def verify_reciprocity(
    config_path: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    mode: Annotated[str, typer.Option("--mode", help="'ism' for the exact check, 'rays' for the ray-count sweep.")] = "ism",
    check: CheckOption = False,
    verbose: VerboseOption = False,
):
    """
    Compares A->B with B->A impulse responses over random location
    pairs and writes verification.csv (plus a trend plot for rays).
    """
    try:
        cfg = _load_config(config_path, seed)
        out_dir = _out_dir(out, cfg)
        if verbose:
            _echo_config(cfg, out_dir)
        root = cfg.simulation.rng_seed
        settings = cfg.verification
        if settings.rooms:
            rooms = settings.rooms
        elif mode == "ism":
            rooms = presets.random_rooms(3, root)
        else:
            rooms = [presets.resolve_scene(cfg)[0].room]
        typer.echo(f"Verifying reciprocity ({mode}) over {settings.pair_count} pairs in {len(rooms)} room(s)...")
        report = reciprocity.verify_reciprocity(
            rooms, settings, cfg.simulation, mode=mode,
            emitter_pattern=cfg.emitter_pattern or omni_pattern(),
            listener_pattern=cfg.listener_pattern or omni_pattern(),
            seed=root, verbose=verbose)
        reciprocity.write_verification_csv(report, out_dir / "verification.csv")
        if mode == "rays":
            plots.line_chart(out_dir / "verification_trend.svg",
                             {m: reciprocity.paired_trend(report, m) for m in ("amp", "env")},
                             title="Paired distance vs ray count", xlabel="rays", ylabel="distance", log_x=True)
    except (ReverbVersaError, ValueError, OSError) as e:
        _abort(e)

    for row in report.rows:
        rays = f" @ {row.ray_count} rays" if row.ray_count is not None else ""
        typer.echo(f"  {row.variant:<10}{rays}: amp={row.amp:.4g} env={row.env:.4g} "
                   f"t60={row.t60:.4g} c50={row.c50:.4g} edt={row.edt:.4g}")
    if check:
        failures = _verification_failures(report, cfg)
        if failures:
            _abort(AcceptanceError("; ".join(failures)))
    typer.secho(f"SUCCESS: Verification table written to {out_dir / 'verification.csv'}", fg=typer.colors.GREEN)


def _verification_failures(report, cfg: ExperimentConfig) -> List[str]:
    paired = [r for r in report.rows if r.variant == "paired"]
    if report.mode == "ism":
        return [f"paired {m} distance is {getattr(r, m)!r}, not 0"
                for r in paired for m in reciprocity.RATIO_METRICS if getattr(r, m) != 0.0]
    failures = []
    for m in ("amp", "env"):
        trend = reciprocity.paired_trend(report, m)
        if any(b >= a for (_, a), (_, b) in zip(trend, trend[1:])):
            failures.append(f"paired {m} distance does not decrease across the ray sweep")
        if report.ratios.get(m, 0.0) > cfg.acceptance.ray_ratio:
            failures.append(f"paired/un-paired {m} ratio {report.ratios[m]:.3f} exceeds {cfg.acceptance.ray_ratio}")
    return failures


@app.command()
def train(
    input_path: Annotated[Path, typer.Option(
        ..., "--input", "-i",
        help="Training dataset file.",
        exists=True, file_okay=True, dir_okay=False, readable=True, resolve_path=True,
    )],
    config_path: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    regime: Annotated[Optional[str], typer.Option("--regime", help="vanilla, ele or ssl. [default: config training.regime]")] = None,
    check: CheckOption = False,
    verbose: VerboseOption = False,
):
    """
    Trains an acoustic field and writes field_<regime>.rvck
    plus train_log_<regime>.csv.
    """
    try:
        cfg = _load_config(config_path, seed)
        out_dir = _out_dir(out, cfg)
        training_cfg = cfg.training
        if regime is not None:
            training_cfg = training_cfg.model_copy(update={"regime": regime})
            training_cfg = type(training_cfg).model_validate(training_cfg.model_dump())
        if verbose:
            _echo_config(cfg, out_dir)
            typer.echo(f"    Regime: {training_cfg.regime}")
            typer.echo(f"    Epochs: {training_cfg.epochs}")
        ds = dataset_io.read(input_path)
        typer.echo(f"Training '{training_cfg.regime}' field on {len(ds.train)} training samples...")
        fld, log = training.train(ds, training_cfg, cfg.field, verbose=verbose)
        name = training_cfg.regime
        training.save_checkpoint(fld, out_dir / f"field_{name}.rvck", training_cfg, ds.listener_pattern,
                                 extracted_pattern=log.extracted_pattern)
        log.write_csv(out_dir / f"train_log_{name}.csv")
    except (ReverbVersaError, ValueError, OSError) as e:
        _abort(e)

    if log.collapse_ratio is not None:
        typer.echo(f"Rendered energy after consistency training: {log.collapse_ratio:.3f} x stage 1")
    if check and log.collapse_ratio is not None and log.collapse_ratio < cfg.acceptance.collapse_ratio:
        _abort(AcceptanceError(
            f"rendered energy fell to {log.collapse_ratio:.3f} of its stage-1 value (needs {cfg.acceptance.collapse_ratio})"))
    typer.secho(f"SUCCESS: Checkpoint written to {out_dir / f'field_{name}.rvck'}", fg=typer.colors.GREEN)


@app.command("eval")
def evaluate(
    input_path: Annotated[Path, typer.Option(
        ..., "--input", "-i",
        help="Dataset with the held-out test split.",
        exists=True, file_okay=True, dir_okay=False, readable=True, resolve_path=True,
    )],
    checkpoints: Annotated[Optional[List[Path]], typer.Option(
        "--checkpoint",
        help="Trained field checkpoint; repeat to compare several.",
        exists=True, file_okay=True, dir_okay=False, readable=True, resolve_path=True,
    )] = None,
    baselines: Annotated[bool, typer.Option("--baselines/--no-baselines", help="Also score the interpolation baselines.")] = True,
    config_path: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    check: CheckOption = False,
    verbose: VerboseOption = False,
):
    """
    Scores fields and baselines on the test split (eval.csv) and
    runs the learned-reciprocity probe on each field (probe.csv).
    """
    reports, probes = {}, {}
    try:
        cfg = _load_config(config_path, seed)
        out_dir = _out_dir(out, cfg)
        if verbose:
            _echo_config(cfg, out_dir)
        ds = dataset_io.read(input_path)
        rate, n_samples = config.FIELD_SAMPLE_RATE, config.FIELD_IR_SAMPLES
        for path in checkpoints or []:
            fld, header = training.load_checkpoint(path)
            name = header.training.regime
            if name in reports:
                name = f"{name}_{len(reports)}"
            rate, n_samples = fld.descriptor.sample_rate, fld.descriptor.ir_samples
            typer.echo(f"Evaluating {path.name} as '{name}'...")
            reports[name] = evaluation.evaluate_field(fld, ds, verbose=verbose)
            probes[name] = evaluation.learned_reciprocity_probe(
                fld, ds, cfg.evaluation.probe_pairs, seed=cfg.simulation.rng_seed)
        if baselines:
            for kind in cfg.evaluation.baselines:
                typer.echo(f"Evaluating {kind} baseline...")
                reports[kind] = evaluation.evaluate_baseline(kind, ds, k=cfg.evaluation.linear_k,
                                                             rate=rate, n_samples=n_samples)
        if not reports:
            raise ValueError("nothing to evaluate: pass --checkpoint or enable --baselines")
        metrics.write_metric_csv(out_dir / "eval.csv", reports.items())
        if probes:
            metrics.write_metric_csv(out_dir / "probe.csv", probes.items())
    except (ReverbVersaError, ValueError, OSError) as e:
        _abort(e)

    for name, rep in reports.items():
        typer.echo(f"  {name:<10} stft={rep.stft_err:.4f} c50={rep.c50_err:.3f} t60={rep.t60_err:.2f} "
                   f"edt={rep.edt_err:.2f} amp={rep.amp_err:.4g} env={rep.env_err:.4g}")
    if check:
        failures = evaluation.acceptance_failures(reports, probes, cfg.acceptance)
        if failures:
            _abort(AcceptanceError("; ".join(failures)))
    typer.secho(f"SUCCESS: Metrics written to {out_dir / 'eval.csv'}", fg=typer.colors.GREEN)


def _parse_sweep(text: str) -> List[int]:
    key, _, values = text.partition("=")
    if key.strip() != "emitters" or not values:
        raise ValueError(f"unsupported sweep '{text}' (expected emitters=N1,N2,...)")
    try:
        return [int(v) for v in values.split(",") if v.strip()]
    except ValueError as e:
        raise ValueError(f"emitter counts must be integers: '{values}'") from e


@app.command()
def report(
    inputs: Annotated[Optional[List[Path]], typer.Option(
        "--input", "-i",
        help="eval.csv file to merge; repeat for several runs.",
        exists=True, file_okay=True, dir_okay=False, readable=True, resolve_path=True,
    )] = None,
    sweep: Annotated[Optional[str], typer.Option("--sweep", help="Run a sweep, e.g. emitters=2,3,5,7.")] = None,
    regimes: Annotated[Optional[List[str]], typer.Option("--regime", help="Regimes to train in a sweep; repeatable. [default: all]")] = None,
    config_path: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    check: CheckOption = False,
    verbose: VerboseOption = False,
):
    """
    Merges eval CSVs into comparison.csv with bar charts, or runs an
    emitter-count sweep into sweep.csv with a trend chart.
    """
    try:
        cfg = _load_config(config_path, seed)
        out_dir = _out_dir(out, cfg)
        if verbose:
            _echo_config(cfg, out_dir)
        if sweep is None and not inputs:
            raise ValueError("pass --input eval CSVs or a --sweep")
        failures: List[str] = []
        if inputs:
            merged = _merge_eval_csvs(inputs)
            metrics.write_metric_csv(out_dir / "comparison.csv", merged)
            names = [name for name, _ in merged]
            for column, attr in (("stft", "stft_err"), ("c50", "c50_err")):
                plots.bar_chart(out_dir / f"comparison_{column}.svg", names,
                                {column: [getattr(r, attr) for _, r in merged]},
                                title=f"{column.upper()} error", ylabel=column)
            typer.echo(f"Merged {len(merged)} rows from {len(inputs)} file(s).")
        if sweep is not None:
            counts = _parse_sweep(sweep)
            chosen = regimes or list(REGIMES)
            for r in chosen:
                if r not in REGIMES:
                    raise ValueError(f"unknown regime '{r}' (expected one of {', '.join(REGIMES)})")
            typer.echo(f"Sweeping {len(counts)} emitter counts x {len(chosen)} regime(s)...")
            rows = evaluation.emitter_sweep(cfg, counts, chosen, verbose=verbose)
            _write_sweep_csv(out_dir / "sweep.csv", rows)
            plots.line_chart(out_dir / "sweep_stft.svg",
                             {r: [(n, rep.stft_err) for n, rr, rep in rows if rr == r] for r in chosen},
                             title="STFT error vs training emitters", xlabel="emitters", ylabel="stft")
            if check:
                failures += evaluation.trend_failures(rows) + evaluation.regime_gap_failures(rows)
    except (ReverbVersaError, ValueError, OSError) as e:
        _abort(e)
    if failures:
        _abort(AcceptanceError("; ".join(failures)))
    typer.secho(f"SUCCESS: Report written to {out_dir}", fg=typer.colors.GREEN)


def _merge_eval_csvs(paths: List[Path]) -> List[Tuple[str, MetricReport]]:
    """Rows of all files in order; a name seen before is prefixed with its directory name."""
    merged, seen = [], set()
    for path in paths:
        for name, rep in metrics.read_metric_csv(path):
            key = name if name not in seen else f"{path.parent.name}/{name}"
            seen.add(key)
            merged.append((key, rep))
    return merged


def _write_sweep_csv(path: Path, rows) -> None:
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["emitters", "regime", *metrics.CSV_COLUMNS, "count", "skipped"])
        for n, regime, rep in rows:
            writer.writerow([n, regime, *(repr(v) for v in metrics.metric_row(rep)), rep.count, rep.skipped])


@app.callback()
def main(
    ctx: typer.Context, # Context object for Typer
):
     """
     Reverb Versa CLI Toolkit - room impulse responses, reciprocity
     checks and reciprocity-aware acoustic fields.
     Use --verbose for detailed debug output.
     """
     pass

if __name__ == "__main__":
     app()
