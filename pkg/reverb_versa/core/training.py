"""
Training regimes, gradient checking and checkpoints for the acoustic field.

  vanilla  audio loss on real training samples
  ele      the same loss over the ELE-augmented training split
  ssl      vanilla for the first ssl_start_fraction of epochs; then the
           emitter pattern is estimated once and every step adds
           ssl_weight * L(h1, h2), where h1 renders F(p_e, p_l, w_e) and h2
           renders the exchanged poses F(p_l, p_e, w_l), both through the
           estimated emitter pattern. One branch is detached per step, and
           the detached side alternates between steps. SSL positions get
           Gaussian noise whose std ramps linearly from 0 to
           pose_noise_std_max over the second stage.

Checkpoint layout: b"RVCK" | u32 version | u64 header length | JSON
CheckpointHeader | u32 CRC32 | float64 LE parameters in named_parameters()
order | u32 CRC32.
"""
import copy
import csv
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
import torch

from reverb_versa import config as env_config
from reverb_versa.core import file_utils, metadata_builder
from reverb_versa.core.dataset import Dataset, Sample, ele_augment
from reverb_versa.core.field import AcousticField, audio_loss, pattern_gains, pose_tensors
from reverb_versa.core.patterns import extract_emitter_pattern
from reverb_versa.core.signals import resample_to
from reverb_versa.models import (
    CHECKPOINT_FORMAT_VERSION,
    DatasetFormatError,
    FieldDescriptor,
    GainPattern,
    PreconditionError,
    TrainingConfig,
    TrainingDivergedError,
)

MAGIC = b"RVCK"
LOG_COLUMNS = ("epoch", "l_a", "l_ssl", "lr", "noise_std")


@dataclass
class TrainingLog:
    rows: List[dict] = dc_field(default_factory=list)
    extracted_pattern: Optional[GainPattern] = None
    stage1_energy: Optional[float] = None
    final_energy: Optional[float] = None

    @property
    def collapse_ratio(self) -> Optional[float]:
        if self.stage1_energy is None or self.final_energy is None or self.stage1_energy == 0.0:
            return None
        return self.final_energy / self.stage1_energy

    def write_csv(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=LOG_COLUMNS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in LOG_COLUMNS})


def training_samples(dataset: Dataset, regime: str, exchange_orientations: bool = True) -> List[Sample]:
    if regime == "ele":
        if not any(s.is_virtual for s in dataset.train):
            dataset = ele_augment(dataset, exchange_orientations=exchange_orientations)
        return dataset.train
    return [s for s in dataset.train if not s.is_virtual]


def target_tensor(samples: List[Sample], descriptor: FieldDescriptor, dtype=torch.float32) -> torch.Tensor:
    rows = [resample_to(s.ir, descriptor.sample_rate, descriptor.ir_samples).samples for s in samples]
    return torch.tensor(np.array(rows), dtype=dtype)


def mean_render_energy(fld: AcousticField, samples: List[Sample], gains: torch.Tensor, batch_size: int = 64) -> float:
    total = 0.0
    with torch.no_grad():
        for s in range(0, len(samples), batch_size):
            chunk = samples[s:s + batch_size]
            e_pos, l_pos, e_dir = pose_tensors([x.emitter for x in chunk], [x.listener for x in chunk])
            h = fld.render_batch(e_pos, l_pos, e_dir, gains[s:s + batch_size])
            total += float((h.double() ** 2).mean(dim=1).sum())
    return total / len(samples)


def _unique_emitters(samples: List[Sample]):
    seen, out = set(), []
    for s in samples:
        if s.emitter.position not in seen:
            seen.add(s.emitter.position)
            out.append(s.emitter)
    return out


def ssl_branches(fld: AcousticField, pattern: GainPattern, e_pos, l_pos, e_dir, l_dir):
    """(h1, h2): the field at (p_e, p_l) and at the exchanged poses, both rendered through `pattern`."""
    dirs = fld.quadrature.directions
    g1 = torch.tensor(pattern_gains(pattern, dirs, l_dir.double().numpy()))
    g2 = torch.tensor(pattern_gains(pattern, dirs, e_dir.double().numpy()))
    return fld.render_batch(e_pos, l_pos, e_dir, g1), fld.render_batch(l_pos, e_pos, l_dir, g2)


def ssl_pair_loss(fld: AcousticField, pattern: GainPattern, e_pos, l_pos, e_dir, l_dir,
                  stop_second: bool, config: TrainingConfig,
                  branches: Optional[Tuple[torch.Tensor, torch.Tensor]] = None) -> torch.Tensor:
    """Consistency loss with one branch detached. `branches` reuses already rendered (h1, h2)."""
    h1, h2 = branches if branches is not None else ssl_branches(fld, pattern, e_pos, l_pos, e_dir, l_dir)
    if stop_second:
        h2 = h2.detach()
    else:
        h1 = h1.detach()
    return audio_loss(h1, h2, config.loss_stft_weight, config.loss_time_weight)


def train(dataset: Dataset, config: TrainingConfig, descriptor: Optional[FieldDescriptor] = None,
          verbose: bool = False) -> Tuple[AcousticField, TrainingLog]:
    descriptor = descriptor or FieldDescriptor()
    samples = training_samples(dataset, config.regime, config.exchange_orientations)
    if not samples:
        raise PreconditionError("training needs a non-empty train split")
    torch.set_num_threads(env_config.worker_count())
    g = torch.Generator().manual_seed(int(config.seed))

    fld = AcousticField(descriptor).reset_parameters(config.seed)
    targets = target_tensor(samples, descriptor)
    e_pos_all, l_pos_all, e_dir_all = pose_tensors([s.emitter for s in samples], [s.listener for s in samples])
    l_dir_all = torch.tensor(np.array([s.listener.dir for s in samples]), dtype=torch.float32)
    dirs = fld.quadrature.directions
    gains_all = torch.tensor(pattern_gains(dataset.listener_pattern, dirs, l_dir_all.double().numpy()),
                             dtype=torch.float32)

    n = len(samples)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    optimizer = torch.optim.AdamW(fld.parameters(), lr=config.lr_start, weight_decay=config.weight_decay)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=total_steps, eta_min=config.lr_end)

    ssl_start = max(1, int(math.floor(config.ssl_start_fraction * config.epochs))) if config.regime == "ssl" else None
    if ssl_start is not None and ssl_start >= config.epochs:
        raise PreconditionError(f"ssl needs at least one second-stage epoch; {config.epochs} epoch(s) leave none")
    ssl_steps = max(config.epochs - ssl_start, 0) * steps_per_epoch if ssl_start is not None else 0
    ssl_batch = config.ssl_batch_size or config.batch_size
    pattern: Optional[GainPattern] = None
    log = TrainingLog()
    step = 0
    ssl_step = 0
    if verbose:
        print(f"DEBUG: Training '{config.regime}' on {n} samples, {fld.parameter_count()} parameters, "
              f"{total_steps} steps")

    for epoch in range(config.epochs):
        if ssl_start is not None and epoch == ssl_start:
            log.stage1_energy = mean_render_energy(fld, samples, gains_all)
            if config.ssl_pattern_source == "ground_truth":
                pattern = dataset.emitter_pattern
            else:
                pattern = extract_emitter_pattern(fld, _unique_emitters(samples), fld.quadrature, verbose=verbose)
            log.extracted_pattern = pattern
            if verbose:
                print(f"DEBUG: Stage 2 begins at epoch {epoch}; stage-1 render energy {log.stage1_energy:.6g}")

        perm = torch.randperm(n, generator=g)
        sums = {"l_a": 0.0, "l_ssl": 0.0}
        noise_std = 0.0
        for b in range(steps_per_epoch):
            idx = perm[b * config.batch_size:(b + 1) * config.batch_size]
            e_pos, l_pos = e_pos_all[idx], l_pos_all[idx]
            if config.train_pose_noise_std > 0:
                e_pos = e_pos + config.train_pose_noise_std * torch.randn(e_pos.shape, generator=g)
                l_pos = l_pos + config.train_pose_noise_std * torch.randn(l_pos.shape, generator=g)
            pred = fld.render_batch(e_pos, l_pos, e_dir_all[idx], gains_all[idx])
            l_a = audio_loss(pred, targets[idx], config.loss_stft_weight, config.loss_time_weight)
            loss = l_a
            l_ssl_value = 0.0
            if pattern is not None:
                noise_std = config.pose_noise_std_max * ssl_step / max(ssl_steps - 1, 1)
                pick = torch.randint(0, n, (ssl_batch,), generator=g)
                pe = e_pos_all[pick] + noise_std * torch.randn((ssl_batch, 3), generator=g)
                pl = l_pos_all[pick] + noise_std * torch.randn((ssl_batch, 3), generator=g)
                l_ssl = ssl_pair_loss(fld, pattern, pe, pl, e_dir_all[pick], l_dir_all[pick],
                                      stop_second=(ssl_step % 2 == 0), config=config)
                loss = l_a + config.ssl_weight * l_ssl
                l_ssl_value = l_ssl.item()
                ssl_step += 1
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"loss became {loss.item()} at step {step} (epoch {epoch})", step)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()
            sums["l_a"] += l_a.item()
            sums["l_ssl"] += l_ssl_value
            step += 1

        row = {"epoch": epoch, "l_a": sums["l_a"] / steps_per_epoch, "l_ssl": sums["l_ssl"] / steps_per_epoch,
               "lr": float(optimizer.param_groups[0]["lr"]), "noise_std": float(noise_std)}
        log.rows.append(row)
        if verbose:
            print(f"DEBUG: epoch {epoch}: l_a={row['l_a']:.6f} l_ssl={row['l_ssl']:.6f} "
                  f"lr={row['lr']:.2e} noise={row['noise_std']:.3f}")

    if log.stage1_energy is not None:
        log.final_energy = mean_render_energy(fld, samples, gains_all)
        if verbose:
            print(f"DEBUG: Collapse guard: rendered energy is {log.collapse_ratio:.3f} of its stage-1 value")
    return fld, log


# --- Gradient check ---

@dataclass
class GradCheckReport:
    max_rel_error: float
    fraction_within: float
    checked: int
    stopped_branch_grad: Optional[float] = None


def _locate(params, offsets: np.ndarray, flat_index: int):
    k = int(np.searchsorted(offsets, flat_index, side="right")) - 1
    return params[k], flat_index - int(offsets[k])


def grad_check(fld: AcousticField, sample: Sample, tolerance: float = 1e-4, loss: str = "audio",
               pattern: Optional[GainPattern] = None, n_params: int = 200, step: float = 1e-5,
               loss_fn: Optional[Callable[[AcousticField], torch.Tensor]] = None,
               seed: int = 0, abs_floor: float = 1e-8,
               config: Optional[TrainingConfig] = None) -> GradCheckReport:
    """
    Analytic gradients of a float64 copy of `fld` against central finite
    differences on randomly chosen parameters. For loss="ssl" the loss goes
    through ssl_pair_loss with the exchanged branch detached; that branch is
    rendered once and held fixed while differencing.
    """
    fld.check_ready()
    f64 = copy.deepcopy(fld).double()
    f64.initialized = True
    d = f64.descriptor
    e_pos, l_pos, e_dir = pose_tensors([sample.emitter], [sample.listener], dtype=torch.float64)
    l_dir = torch.tensor(sample.listener.dir[None], dtype=torch.float64)
    stopped = None

    if loss_fn is not None:
        objective = lambda: loss_fn(f64)
    elif loss == "audio":
        target = torch.tensor(resample_to(sample.ir, d.sample_rate, d.ir_samples).samples[None], dtype=torch.float64)
        gains = torch.tensor(pattern_gains(pattern, f64.quadrature.directions, l_dir.numpy())) if pattern else \
            torch.ones(1, d.quadrature_size, dtype=torch.float64)
        objective = lambda: audio_loss(f64.render_batch(e_pos, l_pos, e_dir, gains), target)
    elif loss == "ssl":
        if pattern is None:
            raise PreconditionError("the consistency loss needs the emitter pattern")
        config = config or TrainingConfig()
        args = (f64, pattern, e_pos, l_pos, e_dir, l_dir)
        stopped = 0.0
        for stop_second in (True, False):
            h1, h2 = ssl_branches(*args)
            value = ssl_pair_loss(*args, stop_second=stop_second, config=config, branches=(h1, h2))
            held = h2 if stop_second else h1
            (grad,) = torch.autograd.grad(value, held, allow_unused=True)
            if grad is not None:
                stopped = max(stopped, float(grad.abs().max()))
        h2_const = ssl_branches(*args)[1].detach()
        objective = lambda: ssl_pair_loss(*args, stop_second=True, config=config,
                                          branches=(ssl_branches(*args)[0], h2_const))
    else:
        raise PreconditionError(f"unknown loss '{loss}'")

    f64.zero_grad()
    objective().backward()
    params = list(f64.parameters())
    offsets = np.cumsum([0] + [p.numel() for p in params])
    g = torch.Generator().manual_seed(int(seed))
    chosen = torch.randperm(int(offsets[-1]), generator=g)[:max(n_params, 0)].tolist()
    errors = []
    with torch.no_grad():
        for k in chosen:
            p, j = _locate(params, offsets, k)
            view = p.view(-1)
            analytic = 0.0 if p.grad is None else float(p.grad.view(-1)[j])
            orig = float(view[j])
            view[j] = orig + step
            plus = float(objective())
            view[j] = orig - step
            minus = float(objective())
            view[j] = orig
            numeric = (plus - minus) / (2.0 * step)
            errors.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), abs_floor))
    errors = np.array(errors) if errors else np.zeros(1)
    return GradCheckReport(
        max_rel_error=float(errors.max()),
        fraction_within=float(np.mean(errors <= tolerance)),
        checked=len(chosen),
        stopped_branch_grad=stopped,
    )


# --- Checkpoints ---

def checkpoint_bytes(fld: AcousticField, training: TrainingConfig, listener_pattern: GainPattern,
                     extracted_pattern: Optional[GainPattern] = None) -> bytes:
    fld.check_ready()
    header = metadata_builder.create_checkpoint_header(
        descriptor=fld.descriptor, training=training, seed=training.seed,
        parameter_shapes=fld.parameter_shapes(), listener_pattern=listener_pattern,
        extracted_pattern=extracted_pattern,
    )
    params = np.concatenate([p.detach().double().reshape(-1).numpy() for p in fld.parameters()])
    return file_utils.pack_container(MAGIC, CHECKPOINT_FORMAT_VERSION,
                                     metadata_builder.serialize_header_to_bytes(header),
                                     [params.astype("<f8").tobytes()])


def save_checkpoint(fld: AcousticField, path: Path, training: TrainingConfig, listener_pattern: GainPattern,
                    extracted_pattern: Optional[GainPattern] = None) -> None:
    file_utils.save_bytes_to_file(Path(path), checkpoint_bytes(fld, training, listener_pattern, extracted_pattern))


def load_checkpoint(path: Path):
    """(field, header) from a checkpoint file."""
    data = file_utils.read_file_content(Path(path))
    raw_header, offset = file_utils.unpack_header(data, MAGIC, CHECKPOINT_FORMAT_VERSION)
    header = metadata_builder.parse_checkpoint_header(raw_header)
    fld = AcousticField(header.descriptor)
    expected = fld.parameter_shapes()
    stored = [(name, list(shape)) for name, shape in header.parameter_shapes]
    if stored != expected:
        raise DatasetFormatError("checkpoint parameter shapes do not match its architecture descriptor")
    count = fld.parameter_count()
    (block,) = file_utils.unpack_blocks(data, offset, 8 * count, 1, "parameter block")
    values = np.frombuffer(block, dtype="<f8")
    with torch.no_grad():
        start = 0
        for p in fld.parameters():
            chunk = values[start:start + p.numel()].reshape(tuple(p.shape))
            p.copy_(torch.from_numpy(chunk.copy()).to(p.dtype))
            start += p.numel()
    fld.initialized = True
    return fld, header
