"""
The trainable acoustic field.

F(p_e, p_l, w_e, w) is a coordinate MLP returning the signal that arrives
at the listener from direction w. The listener pattern is applied only at
render time:

    h(t) = sum_i  weight_i * F(p_e, p_l, w_e, w_i)(t) * G_l(w_i; w_l)

over a Fibonacci quadrature whose weights sum to 1. Swapping G_l at render
time is the hook used both by consistency training and by inference-time
pattern replacement.
"""
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from reverb_versa.core.patterns import eval_pattern_many, make_quadrature
from reverb_versa.core.signals import ImpulseResponse
from reverb_versa.models import FieldDescriptor, FieldStateError, GainPattern, Pose, PreconditionError

STFT_WINDOWS = (64, 256, 1024)
LOG_EPS = 1e-7
# 4 position/direction triples: p_e, p_l, w_e, w
INPUT_SCALARS = 12


class PositionalEncoding(nn.Module):
    """x -> (x, sin(2^k pi x), cos(2^k pi x)) for k < octaves."""

    def __init__(self, octaves: int = 6):
        super().__init__()
        self.octaves = octaves
        self.register_buffer("frequency_bands", (2.0 ** torch.arange(octaves, dtype=torch.float64)) * np.pi,
                             persistent=False)

    def output_dim(self, input_dim: int) -> int:
        return input_dim * (1 + 2 * self.octaves)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        encoding = [x]
        for freq in self.frequency_bands.to(x.dtype):
            encoding.append(torch.sin(x * freq))
            encoding.append(torch.cos(x * freq))
        return torch.cat(encoding, dim=-1)


class AcousticField(nn.Module):
    def __init__(self, descriptor: Optional[FieldDescriptor] = None):
        super().__init__()
        self.descriptor = descriptor or FieldDescriptor()
        d = self.descriptor
        self.encoding = PositionalEncoding(d.encoding_octaves)
        layers = []
        width = self.encoding.output_dim(INPUT_SCALARS)
        for _ in range(d.hidden_layers):
            layers.append(nn.Linear(width, d.hidden_width))
            layers.append(nn.SiLU() if d.activation == "silu" else nn.Identity())
            width = d.hidden_width
        layers.append(nn.Linear(width, d.ir_samples))
        self.net = nn.Sequential(*layers)

        self.quadrature = make_quadrature(d.quadrature_size)
        self.register_buffer("directions", torch.tensor(self.quadrature.directions, dtype=torch.float32), persistent=False)
        self.register_buffer("weights", torch.tensor(self.quadrature.weights, dtype=torch.float32), persistent=False)
        self.initialized = False

    def reset_parameters(self, seed: int) -> "AcousticField":
        """Uniform(+-1/sqrt(fan_in)) weights and biases drawn from a seeded generator."""
        g = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for m in self.net:
                if isinstance(m, nn.Linear):
                    bound = 1.0 / np.sqrt(m.in_features)
                    m.weight.uniform_(-bound, bound, generator=g)
                    m.bias.uniform_(-bound, bound, generator=g)
        self.initialized = True
        return self

    def check_ready(self) -> None:
        if not self.initialized:
            raise FieldStateError("acoustic field has no parameters yet; call reset_parameters() or load a checkpoint")

    def parameter_shapes(self):
        return [(name, list(p.shape)) for name, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def directional(self, e_pos: torch.Tensor, l_pos: torch.Tensor, e_dir: torch.Tensor) -> torch.Tensor:
        """Per-direction signals, shape (B, Q, T)."""
        self.check_ready()
        dtype = self.net[0].weight.dtype
        scale = self.descriptor.position_scale
        b, q = e_pos.shape[0], self.directions.shape[0]
        poses = torch.cat([(e_pos / scale).to(dtype), (l_pos / scale).to(dtype), e_dir.to(dtype)], dim=-1)
        x = torch.cat([poses[:, None, :].expand(b, q, 9), self.directions.to(dtype)[None].expand(b, q, 3)], dim=-1)
        return self.net(self.encoding(x))

    def render_batch(self, e_pos: torch.Tensor, l_pos: torch.Tensor, e_dir: torch.Tensor,
                     gains: torch.Tensor) -> torch.Tensor:
        """(B, T) signals; `gains` holds the listener pattern per direction, (B, Q)."""
        return combine_directions(self.directional(e_pos, l_pos, e_dir), self.weights, gains)

    def probe_energy(self, emitter: Pose, listener_positions) -> np.ndarray:
        """Mean-square of the omnidirectionally rendered signal at each probe position."""
        self.check_ready()
        l_pos = torch.as_tensor(np.asarray(listener_positions, dtype=float))
        n = len(l_pos)
        e_pos = torch.as_tensor(emitter.pos).expand(n, 3)
        e_dir = torch.as_tensor(emitter.dir).expand(n, 3)
        with torch.no_grad():
            h = self.render_batch(e_pos, l_pos, e_dir, torch.ones(n, len(self.weights), dtype=self.weights.dtype))
        return (h.double() ** 2).mean(dim=1).numpy()


def combine_directions(h_dirs: torch.Tensor, weights: torch.Tensor, gains: torch.Tensor) -> torch.Tensor:
    """sum_i weights_i * gains[..., i] * h_dirs[..., i, :]."""
    w = (weights.to(h_dirs.dtype) * gains.to(h_dirs.dtype))
    return torch.einsum("...qt,...q->...t", h_dirs, w)


def pattern_gains(pattern: GainPattern, directions: np.ndarray, facings) -> np.ndarray:
    """Listener-pattern gains for each facing, shape (B, Q)."""
    return np.stack([eval_pattern_many(pattern, directions, f) for f in np.atleast_2d(facings)])


def pose_tensors(emitters: Sequence[Pose], listeners: Sequence[Pose], dtype=torch.float32):
    e_pos = torch.tensor(np.array([e.pos for e in emitters]), dtype=dtype)
    l_pos = torch.tensor(np.array([l.pos for l in listeners]), dtype=dtype)
    e_dir = torch.tensor(np.array([e.dir for e in emitters]), dtype=dtype)
    return e_pos, l_pos, e_dir


def render_many(field: AcousticField, emitters: Sequence[Pose], listeners: Sequence[Pose],
                listener_pattern: GainPattern, batch_size: int = 64) -> list:
    field.check_ready()
    out = []
    dirs = field.quadrature.directions
    for s in range(0, len(emitters), batch_size):
        es, ls = list(emitters[s:s + batch_size]), list(listeners[s:s + batch_size])
        e_pos, l_pos, e_dir = pose_tensors(es, ls)
        gains = torch.tensor(pattern_gains(pattern=listener_pattern, directions=dirs, facings=[l.dir for l in ls]))
        with torch.no_grad():
            h = field.render_batch(e_pos, l_pos, e_dir, gains)
        out.extend(ImpulseResponse(row.astype(float), field.descriptor.sample_rate) for row in h.double().numpy())
    return out


def render(field: AcousticField, emitter: Pose, listener: Pose, listener_pattern: GainPattern) -> ImpulseResponse:
    """The IR heard by `listener` through `listener_pattern`, at the field's working rate."""
    return render_many(field, [emitter], [listener], listener_pattern)[0]


# --- Losses ---

def _safe_norm(x: torch.Tensor, dims) -> torch.Tensor:
    sq = (x * x).sum(dim=dims)
    return torch.where(sq > 0, sq.clamp_min(1e-30).sqrt(), torch.zeros_like(sq))


def stft_magnitude(x: torch.Tensor, window: int) -> torch.Tensor:
    """Same framing and scaling as metrics.stft_magnitude."""
    win = torch.hann_window(window, periodic=True, dtype=x.dtype)
    z = torch.stft(x, n_fft=window, hop_length=window // 4, win_length=window, window=win,
                   center=True, pad_mode="constant", return_complex=True)
    return z.abs() / win.sum()


def stft_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-item multi-resolution STFT error, shape (B,)."""
    n = pred.shape[-1]
    if n < max(STFT_WINDOWS):
        pad = max(STFT_WINDOWS) - n
        pred = nn.functional.pad(pred, (0, pad))
        target = nn.functional.pad(target, (0, pad))
    total = torch.zeros(pred.shape[0], dtype=pred.dtype)
    for w in STFT_WINDOWS:
        sa, sb = stft_magnitude(pred, w), stft_magnitude(target, w)
        num = _safe_norm(sa - sb, (1, 2))
        denom = _safe_norm(sa, (1, 2)) + _safe_norm(sb, (1, 2))
        sc = num / denom.clamp_min(1e-12)
        mag = (torch.log(sa + LOG_EPS) - torch.log(sb + LOG_EPS)).abs().mean(dim=(1, 2))
        total = total + sc + mag
    return total / len(STFT_WINDOWS)


def audio_loss(pred: torch.Tensor, target: torch.Tensor, stft_weight: float = 1.0,
               time_weight: float = 1.0) -> torch.Tensor:
    """Batch mean of stft_weight * multi-res STFT error + time_weight * mean |pred - target|."""
    if pred.shape != target.shape:
        raise PreconditionError(f"prediction shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")
    per_item = stft_weight * stft_loss(pred, target) + time_weight * (pred - target).abs().mean(dim=-1)
    return per_item.mean()


def loss_audio(pred: ImpulseResponse, target: ImpulseResponse, stft_weight: float = 1.0,
               time_weight: float = 1.0) -> float:
    if pred.sample_rate != target.sample_rate or len(pred) != len(target):
        raise PreconditionError("loss needs matching sample rates and lengths")
    a = torch.tensor(np.asarray(pred.samples, dtype=float))[None]
    b = torch.tensor(np.asarray(target.samples, dtype=float))[None]
    return float(audio_loss(a, b, stft_weight, time_weight))
