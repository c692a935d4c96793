"""
Spherical-harmonic gain patterns and the Fibonacci sphere quadrature.

Patterns are evaluated in the device's facing frame (facing -> +z). By
default only zonal harmonics (m = 0) take part, which makes every pattern
axially symmetric about the facing vector. Full-SH patterns inherit the roll
of geometry.facing_frame; emitter extraction during training stays zonal.
"""
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import eval_legendre, gammaln, lpmv

from reverb_versa import config
from reverb_versa.core.geometry import check_unit, to_local, to_world
from reverb_versa.models import DegeneratePatternError, GainPattern, Pose, PreconditionError

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


def sh_index(l: int, m: int) -> int:
    return l * l + l + m


def n_coeffs(order: int) -> int:
    return (order + 1) ** 2


def real_sh_basis(local_dirs, order: int, zonal_only: bool = True) -> np.ndarray:
    """
    Orthonormal real SH evaluated at unit directions, shape (N, (order+1)^2).
    With `zonal_only` the m != 0 columns are zero.
    """
    d = np.atleast_2d(np.asarray(local_dirs, dtype=float))
    cos_t = np.clip(d[:, 2], -1.0, 1.0)
    phi = np.arctan2(d[:, 1], d[:, 0])
    out = np.zeros((len(d), n_coeffs(order)))
    for l in range(order + 1):
        out[:, sh_index(l, 0)] = np.sqrt((2 * l + 1) / (4 * np.pi)) * eval_legendre(l, cos_t)
        if zonal_only:
            continue
        for m in range(1, l + 1):
            norm = np.sqrt((2 * l + 1) / (4 * np.pi) * np.exp(gammaln(l - m + 1) - gammaln(l + m + 1)))
            # lpmv carries the Condon-Shortley phase; drop it
            plm = (-1) ** m * lpmv(m, l, cos_t)
            out[:, sh_index(l, m)] = np.sqrt(2.0) * norm * plm * np.cos(m * phi)
            out[:, sh_index(l, -m)] = np.sqrt(2.0) * norm * plm * np.sin(m * phi)
    return out


def _active_columns(order: int, zonal_only: bool) -> np.ndarray:
    if zonal_only:
        return np.array([sh_index(l, 0) for l in range(order + 1)])
    return np.arange(n_coeffs(order))


def _raw_gain(coeffs: np.ndarray, local_dirs: np.ndarray, zonal_only: bool) -> np.ndarray:
    order = int(round(np.sqrt(len(coeffs)))) - 1
    return real_sh_basis(local_dirs, order, zonal_only) @ coeffs


def _normalization_grid(zonal_only: bool) -> np.ndarray:
    if zonal_only:
        z = np.linspace(-1.0, 1.0, 4097)
        return np.stack([np.sqrt(np.maximum(0.0, 1.0 - z * z)), np.zeros_like(z), z], axis=1)
    grid = make_quadrature(8192).directions
    return np.vstack([grid, [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]])


def normalize_pattern(pattern: GainPattern) -> GainPattern:
    """Scales the expansion so its maximum over the evaluation grid is 1."""
    coeffs = np.asarray(pattern.sh_coeffs, dtype=float)
    if pattern.zonal_only:
        mask = np.zeros_like(coeffs)
        mask[_active_columns(pattern.order, True)] = 1.0
        coeffs = coeffs * mask
    peak = float(np.max(_raw_gain(coeffs, _normalization_grid(pattern.zonal_only), pattern.zonal_only)))
    if not np.isfinite(peak) or peak <= 0.0:
        raise DegeneratePatternError("pattern has no positive gain anywhere; cannot peak-normalize")
    return GainPattern(sh_coeffs=tuple(float(c) for c in coeffs / peak), floor=pattern.floor, zonal_only=pattern.zonal_only)


def make_pattern(coeffs, floor: float = config.PATTERN_FLOOR, zonal_only: bool = True,
                 order: int = config.PATTERN_SH_ORDER) -> GainPattern:
    c = np.zeros(n_coeffs(order))
    src = np.asarray(coeffs, dtype=float)
    c[:len(src)] = src
    return normalize_pattern(GainPattern(sh_coeffs=tuple(c), floor=floor, zonal_only=zonal_only))


def omni_pattern(order: int = config.PATTERN_SH_ORDER) -> GainPattern:
    return make_pattern([1.0], order=order)


def cardioid_pattern(order: int = config.PATTERN_SH_ORDER) -> GainPattern:
    """0.5 * (1 + cos theta): exactly the l = 0 and l = 1 zonal terms."""
    c = np.zeros(n_coeffs(order))
    c[sh_index(0, 0)] = 0.5 * np.sqrt(4 * np.pi)
    c[sh_index(1, 0)] = 0.5 * np.sqrt(4 * np.pi / 3)
    return make_pattern(c, order=order)


def eval_pattern_many(pattern: GainPattern, directions, facing) -> np.ndarray:
    """Gains in (0, 1] for many unit directions relative to one facing vector."""
    d = check_unit(np.atleast_2d(directions), "direction")
    f = check_unit(facing, "facing")
    if is_omni(pattern):
        return np.ones(len(d))
    coeffs = np.asarray(pattern.sh_coeffs, dtype=float)
    raw = _raw_gain(coeffs, to_local(d, f), pattern.zonal_only)
    return np.clip(raw, pattern.floor, 1.0)


def eval_pattern(pattern: GainPattern, direction, facing) -> float:
    return float(eval_pattern_many(pattern, np.asarray(direction, dtype=float)[None, :], facing)[0])


def is_omni(pattern: GainPattern) -> bool:
    c = np.asarray(pattern.sh_coeffs)
    return bool(c[0] > 0.0 and np.all(c[1:] == 0.0))


@dataclass(frozen=True, eq=False)
class SphereQuadrature:
    directions: np.ndarray  # (n, 3)
    weights: np.ndarray     # (n,), sums to 1

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values) -> np.ndarray:
        return np.tensordot(self.weights, np.asarray(values, dtype=float), axes=(0, 0))


def make_quadrature(n: int) -> SphereQuadrature:
    """Fibonacci-sphere directions with equal weights 1/n."""
    if n < 4:
        raise PreconditionError(f"quadrature needs n >= 4, got {n}")
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * GOLDEN_ANGLE
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return SphereQuadrature(directions=dirs, weights=np.full(n, 1.0 / n))


def fit_pattern(local_dirs, values, order: int = config.PATTERN_SH_ORDER, zonal_only: bool = True,
                floor: float = config.PATTERN_FLOOR) -> GainPattern:
    """Least-squares SH fit of per-direction values (in the facing frame), peak-normalized."""
    values = np.asarray(values, dtype=float)
    cols = _active_columns(order, zonal_only)
    basis = real_sh_basis(local_dirs, order, zonal_only)[:, cols]
    sol, *_ = np.linalg.lstsq(basis, values, rcond=None)
    coeffs = np.zeros(n_coeffs(order))
    coeffs[cols] = sol
    return normalize_pattern(GainPattern(sh_coeffs=tuple(float(c) for c in coeffs), floor=floor, zonal_only=zonal_only))


def extract_emitter_pattern(field, emitter: Union[Pose, Sequence[Pose]], quadrature: SphereQuadrature,
                            zonal_only: bool = True, quantity: str = "energy",
                            verbose: bool = False) -> GainPattern:
    """
    Probes the field on a sphere around each emitter, one probe listener per
    quadrature direction (taken in the emitter's facing frame), and fits an
    SH pattern to the mean signal energy per direction. Several emitters are
    averaged direction-by-direction in their own frames.

    `field` must provide `probe_energy(emitter, listener_positions)` and a
    `descriptor.probe_radius`.
    """
    poses = [emitter] if isinstance(emitter, Pose) else list(emitter)
    if not poses:
        raise PreconditionError("pattern extraction needs at least one emitter pose")
    radius = field.descriptor.probe_radius
    energies = np.zeros(len(quadrature))
    for pose in poses:
        probes = pose.pos + radius * to_world(quadrature.directions, pose.dir)
        energies += np.asarray(field.probe_energy(pose, probes), dtype=float)
    energies /= len(poses)
    if not np.all(np.isfinite(energies)) or not np.any(energies > 0.0):
        raise DegeneratePatternError("field emits no energy in any direction")
    values = np.sqrt(energies) if quantity == "rms" else energies
    pattern = fit_pattern(quadrature.directions, values, zonal_only=zonal_only)
    if verbose:
        print(f"DEBUG: Extracted emitter pattern from {len(poses)} pose(s): "
              f"{[round(c, 4) for c in pattern.sh_coeffs[:9]]}...")
    return pattern
