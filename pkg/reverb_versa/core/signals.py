from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from reverb_versa.models import PreconditionError


@dataclass(frozen=True, eq=False)
class ImpulseResponse:
    """Sampled IR; duration is derived so len(samples) == round(rate * duration) holds by construction."""
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise PreconditionError("sample_rate must be > 0")
        if self.samples.ndim != 1:
            raise PreconditionError("an impulse response is a 1-D signal")
        if not np.all(np.isfinite(self.samples)):
            raise PreconditionError("impulse response samples must be finite")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImpulseResponse):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and self.samples.dtype == other.samples.dtype
            and np.array_equal(self.samples, other.samples)
        )

    def astype(self, dtype) -> "ImpulseResponse":
        return ImpulseResponse(self.samples.astype(dtype), self.sample_rate)

    def to_wav(self, path: Path) -> None:
        """32-bit float, mono, little-endian WAV."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        wavfile.write(str(path), self.sample_rate, self.samples.astype("<f4"))


def read_wav(path: Path) -> ImpulseResponse:
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise PreconditionError(f"{path} is not a mono file")
    return ImpulseResponse(np.asarray(data), int(rate))


def zero_pad_pair(a: np.ndarray, b: np.ndarray, minimum: int = 0):
    """Both signals zero-padded to the longer length (and at least `minimum`)."""
    n = max(len(a), len(b), minimum)
    return np.pad(a, (0, n - len(a))), np.pad(b, (0, n - len(b)))


def resample_to(ir: ImpulseResponse, rate: int, n_samples: int) -> ImpulseResponse:
    """Polyphase resampling to `rate`, then cut or zero-pad to `n_samples`."""
    x = np.asarray(ir.samples, dtype=float)
    if rate != ir.sample_rate:
        g = np.gcd(int(rate), int(ir.sample_rate))
        x = resample_poly(x, int(rate) // g, int(ir.sample_rate) // g)
    x = x[:n_samples]
    if len(x) < n_samples:
        x = np.pad(x, (0, n_samples - len(x)))
    return ImpulseResponse(x, int(rate))
