"""
Geometric-acoustics impulse responses for shoebox rooms.

Two path sources feed one synthesizer:
  * enumerate_image_paths: exact specular image-source paths (the oracle).
  * trace_stochastic: Monte-Carlo rays with specular/Lambertian bounces and
    a listener capture sphere.

Every path carries a delay, a geometric amplitude (1/d times the product of
the surface coefficients it met), its launch direction at the emitter and
the direction it arrives from at the listener. Surface products are formed
from the coefficients in ascending order, which makes them independent of
traversal direction, and synthesis accumulates contributions in a
canonical (delay, value) order. Together these make image-source IRs of
swapped poses bit-identical when the two devices share a gain pattern.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import firwin

from reverb_versa import config as env_config
from reverb_versa.core import rng as rng_utils
from reverb_versa.core.geometry import PropagationPath, random_unit_vectors
from reverb_versa.core.patterns import eval_pattern_many
from reverb_versa.core.signals import ImpulseResponse
from reverb_versa.models import (
    DegenerateGeometryError,
    EmptyPathSetError,
    GainPattern,
    GeometryError,
    Pose,
    PreconditionError,
    ShoeboxRoom,
    SimulationConfig,
)


@dataclass(frozen=True, eq=False)
class PathImpact:
    delay: float
    amplitude: float
    band_gains: Optional[np.ndarray] = None

    def __eq__(self, other) -> bool:
        if not isinstance(other, PathImpact):
            return NotImplemented
        if (self.band_gains is None) != (other.band_gains is None):
            return False
        same_bands = self.band_gains is None or np.array_equal(self.band_gains, other.band_gains)
        return self.delay == other.delay and self.amplitude == other.amplitude and same_bands


def interaction_gain(coeffs) -> np.ndarray:
    """
    Product of surface coefficients over the interaction axis (-2) of a
    (..., K, B) array. Factors are multiplied in ascending order so that the
    result does not depend on the order the surfaces were met in.
    """
    c = np.sort(np.asarray(coeffs, dtype=float), axis=-2)
    g = np.ones(c.shape[:-2] + c.shape[-1:])
    for k in range(c.shape[-2]):
        g = g * c[..., k, :]
    return g


def path_impact(path: PropagationPath, config: SimulationConfig, n_bands: Optional[int] = None) -> PathImpact:
    d = float(path.total_length)
    if not d > 0.0:
        raise DegenerateGeometryError("zero-length propagation path")
    band_counts = {m.n_bands for m in path.interaction_materials}
    if len(band_counts) > 1:
        raise PreconditionError("interaction materials use different band grids")
    bands = band_counts.pop() if band_counts else (n_bands or 1)
    table = np.array([m.reflection_coeffs for m in path.interaction_materials], dtype=float).reshape(-1, bands)
    gains = interaction_gain(table) / d
    if bands == 1:
        return PathImpact(delay=d / config.speed_of_sound, amplitude=float(gains[0]))
    return PathImpact(delay=d / config.speed_of_sound, amplitude=float(np.mean(gains)), band_gains=gains)


@dataclass(frozen=True, eq=False)
class PathSet:
    """
    Parallel per-path arrays. `weights` is 1 for image-source paths and the
    capture-sphere Monte-Carlo weight for traced hits; it multiplies the
    contribution at synthesis and is not part of the path impact.
    """
    delays: np.ndarray
    amplitudes: np.ndarray
    band_gains: Optional[np.ndarray]      # (N, B) or None when flat
    launch_dirs: np.ndarray               # (N, 3)
    arrival_dirs: np.ndarray              # (N, 3), listener -> incoming sound
    weights: np.ndarray
    band_edges: Tuple[float, ...] = ()
    path_builder: Optional[Callable[[int], PropagationPath]] = None

    def __len__(self) -> int:
        return len(self.delays)

    def path(self, index: int) -> PropagationPath:
        if self.path_builder is None:
            raise PreconditionError("path geometry was not recorded for this set (trace with keep_points=True)")
        return self.path_builder(index)

    @cached_property
    def paths(self) -> List[PropagationPath]:
        return [self.path(i) for i in range(len(self))]

    @cached_property
    def impacts(self) -> List[PathImpact]:
        out = []
        for i in range(len(self)):
            bands = None if self.band_gains is None else self.band_gains[i].copy()
            out.append(PathImpact(float(self.delays[i]), float(self.amplitudes[i]), bands))
        return out

    def union(self, other: "PathSet") -> "PathSet":
        return concat_path_sets([self, other])


def empty_path_set(n_bands: int = 1, band_edges: Tuple[float, ...] = ()) -> PathSet:
    return PathSet(
        delays=np.zeros(0), amplitudes=np.zeros(0),
        band_gains=None if n_bands == 1 else np.zeros((0, n_bands)),
        launch_dirs=np.zeros((0, 3)), arrival_dirs=np.zeros((0, 3)), weights=np.zeros(0),
        band_edges=tuple(band_edges),
    )


def concat_path_sets(parts: Sequence[PathSet]) -> PathSet:
    parts = list(parts)
    if not parts:
        return empty_path_set()
    flat = [p.band_gains is None for p in parts]
    if any(flat) and not all(flat):
        raise PreconditionError("cannot merge flat and multi-band path sets")
    offsets = np.cumsum([0] + [len(p) for p in parts])

    def build(index: int) -> PropagationPath:
        k = int(np.searchsorted(offsets, index, side="right")) - 1
        return parts[k].path(index - int(offsets[k]))

    return PathSet(
        delays=np.concatenate([p.delays for p in parts]),
        amplitudes=np.concatenate([p.amplitudes for p in parts]),
        band_gains=None if all(flat) else np.concatenate([p.band_gains for p in parts]),
        launch_dirs=np.concatenate([p.launch_dirs for p in parts]),
        arrival_dirs=np.concatenate([p.arrival_dirs for p in parts]),
        weights=np.concatenate([p.weights for p in parts]),
        band_edges=parts[0].band_edges,
        path_builder=build if all(p.path_builder is not None for p in parts) else None,
    )


# --- Image sources ---

def _check_inside(room: ShoeboxRoom, emitter: np.ndarray, listener: np.ndarray) -> None:
    if not room.contains(emitter):
        raise GeometryError(f"emitter {emitter.tolist()} is not strictly inside the room")
    if not room.contains(listener):
        raise GeometryError(f"listener {listener.tolist()} is not strictly inside the room")
    if np.array_equal(emitter, listener):
        raise DegenerateGeometryError("emitter and listener coincide")


def image_indices(max_order: int) -> np.ndarray:
    """Integer image indices (ix, iy, iz) with |ix|+|iy|+|iz| <= max_order, lexicographic."""
    o = int(max_order)
    idx = np.arange(-o, o + 1)
    grid = np.stack(np.meshgrid(idx, idx, idx, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid[np.abs(grid).sum(axis=1) <= o]


def wall_hit_counts(indices: np.ndarray) -> np.ndarray:
    """(N, 6) reflections per wall in wall order x-low, x-high, y-low, ..."""
    i = np.asarray(indices)
    low = np.where(i > 0, i // 2, (-i + 1) // 2)
    high = np.where(i > 0, (i + 1) // 2, (-i) // 2)
    return np.stack([low[:, 0], high[:, 0], low[:, 1], high[:, 1], low[:, 2], high[:, 2]], axis=1)


def _wall_gains(counts: np.ndarray, table: np.ndarray) -> np.ndarray:
    n, bands = len(counts), table.shape[1]
    kmax = int(counts.sum(axis=1).max()) if n else 0
    slots = np.ones((n, kmax, bands))
    fill = np.zeros(n, dtype=int)
    for w in range(6):
        for r in range(int(counts[:, w].max()) if n else 0):
            rows = np.nonzero(counts[:, w] > r)[0]
            slots[rows, fill[rows], :] = table[w]
            fill[rows] += 1
    return interaction_gain(slots)


def _fold(x: np.ndarray, size: np.ndarray) -> np.ndarray:
    m = np.floor(x / size)
    r = x - m * size
    return np.where(m % 2 == 1, size - r, r)


def _unfolded_path(src, lst, index, delta, length, room: ShoeboxRoom) -> PropagationPath:
    size = room.size
    p_img = lst + delta
    crossings = []
    for a in range(3):
        i = int(index[a])
        planes = range(1, i + 1) if i > 0 else range(i + 1, 1)
        for k in planes:
            t = (k * size[a] - p_img[a]) / (lst[a] - p_img[a])
            crossings.append((t, a, 2 * a + (k % 2)))
    crossings.sort()
    u = -delta / length
    sign = 1 - 2 * (np.asarray(index) % 2)
    points, dirs, mats = [src.copy()], [sign * u], []
    for t, a, wall in crossings:
        p = _fold(p_img + t * (lst - p_img), size)
        p[a] = 0.0 if wall % 2 == 0 else size[a]
        points.append(p)
        mats.append(room.wall_materials[wall])
        sign = sign.copy()
        sign[a] = -sign[a]
        dirs.append(sign * u)
    points.append(lst.copy())
    return PropagationPath(
        points=np.array(points), segment_directions=np.array(dirs, dtype=float),
        interaction_materials=tuple(mats), total_length=float(length),
    )


def enumerate_image_paths(room: ShoeboxRoom, emitter, listener, max_order: int,
                          speed_of_sound: float = env_config.SPEED_OF_SOUND,
                          verbose: bool = False) -> PathSet:
    """
    All specular paths of reflection order <= max_order, ordered
    lexicographically on the image index.
    """
    src = np.asarray(emitter, dtype=float)
    lst = np.asarray(listener, dtype=float)
    if max_order < 0:
        raise PreconditionError("max_order must be >= 0")
    _check_inside(room, src, lst)

    size = room.size
    grid = image_indices(max_order)
    q = grid % 2
    n = (grid + q) // 2
    # image minus listener; written so that swapping src and lst negates it exactly
    delta = np.where(q == 0, (src - lst) + (2 * n) * size, (2 * n) * size - (src + lst))
    length = np.sqrt(delta[:, 0] ** 2 + delta[:, 1] ** 2 + delta[:, 2] ** 2)
    launch = (1 - 2 * q) * (-delta / length[:, None])
    arrival = delta / length[:, None]

    gains = _wall_gains(wall_hit_counts(grid), room.coefficient_table()) / length[:, None]
    if room.n_bands == 1:
        amplitudes, band_gains = gains[:, 0], None
    else:
        amplitudes, band_gains = gains.mean(axis=1), gains

    if verbose:
        print(f"DEBUG: Image sources up to order {max_order}: {len(grid)} paths, "
              f"shortest {length.min():.4f} m, longest {length.max():.4f} m")

    return PathSet(
        delays=length / speed_of_sound,
        amplitudes=amplitudes,
        band_gains=band_gains,
        launch_dirs=launch,
        arrival_dirs=arrival,
        weights=np.ones(len(grid)),
        band_edges=room.band_edges,
        path_builder=lambda i: _unfolded_path(src, lst, grid[i], delta[i], length[i], room),
    )


# --- Stochastic rays ---

def _lambert(rng: np.random.Generator, axis: np.ndarray, inward: np.ndarray) -> np.ndarray:
    """Cosine-weighted directions about the inward wall normal."""
    u = rng.random((len(axis), 2))
    r = np.sqrt(u[:, 0])
    phi = 2.0 * np.pi * u[:, 1]
    rows = np.arange(len(axis))
    out = np.empty((len(axis), 3))
    out[rows, axis] = inward * np.sqrt(1.0 - u[:, 0])
    out[rows, (axis + 1) % 3] = r * np.cos(phi)
    out[rows, (axis + 2) % 3] = r * np.sin(phi)
    return out


def trace_rays(room: ShoeboxRoom, emitter: Pose, listener: Pose, directions, config: SimulationConfig,
               rng: np.random.Generator, n_rays_total: Optional[int] = None,
               keep_points: bool = False) -> PathSet:
    """
    Traces the given launch directions. A ray contributes once for every
    segment whose closest approach to the listener lies inside the capture
    sphere. Each hit is weighted by 3*chord*d^2 / (N r^3), which makes the
    expected weighted hit count of a geometric path equal to one.
    """
    dirs = np.array(directions, dtype=float, copy=True)
    n = len(dirs)
    total = n_rays_total or n
    size = room.size
    table = room.coefficient_table()
    bands = table.shape[1]
    max_len = config.speed_of_sound * config.ir_duration
    r = config.capture_radius
    target = listener.pos

    pos = np.tile(emitter.pos, (n, 1))
    travelled = np.zeros(n)
    gains = np.ones((n, bands))
    launch = dirs.copy()
    ray_id = np.arange(n)
    history = [[(emitter.pos.copy(), None)] for _ in range(n)] if keep_points else None

    hits = {"d": [], "gains": [], "launch": [], "arrival": [], "weight": [], "ray": [], "bounces": []}
    while len(ray_id):
        with np.errstate(divide="ignore", invalid="ignore"):
            t_axis = np.where(dirs > 0, (size - pos) / dirs, np.where(dirs < 0, -pos / dirs, np.inf))
        axis = np.argmin(t_axis, axis=1)
        rows = np.arange(len(ray_id))
        t_wall = np.maximum(t_axis[rows, axis], 0.0)
        reach = np.minimum(t_wall, max_len - travelled)

        rel = target - pos
        t_c = np.einsum("ij,ij->i", rel, dirs)
        b2 = np.einsum("ij,ij->i", rel, rel) - t_c * t_c
        hit = (t_c >= 0.0) & (t_c < reach) & (b2 < r * r)
        if np.any(hit):
            d = travelled[hit] + t_c[hit]
            chord = 2.0 * np.sqrt(np.maximum(r * r - b2[hit], 0.0))
            hits["d"].append(d)
            hits["gains"].append(gains[hit])
            hits["launch"].append(launch[hit])
            hits["arrival"].append(-dirs[hit])
            hits["weight"].append(3.0 * chord * d * d / (total * r ** 3))
            hits["ray"].append(ray_id[hit])
            hits["bounces"].append(np.array([len(history[k]) - 1 for k in ray_id[hit]]) if keep_points
                                   else np.zeros(int(hit.sum()), dtype=int))

        going_on = travelled + t_wall < max_len
        old_sign = np.sign(dirs[rows, axis])
        pos = pos + dirs * t_wall[:, None]
        pos[rows, axis] = np.where(old_sign > 0, size[axis], 0.0)
        travelled = travelled + t_wall
        wall = 2 * axis + (old_sign > 0)
        gains = gains * table[wall]

        diffuse = rng.random(len(ray_id)) < config.scattering
        scattered = _lambert(rng, axis, -old_sign)
        specular = dirs.copy()
        specular[rows, axis] = -specular[rows, axis]
        dirs = np.where(diffuse[:, None], scattered, specular)

        if keep_points:
            for k, p, w in zip(ray_id, pos, wall):
                history[k].append((p.copy(), int(w)))

        keep = going_on & (gains.max(axis=1) >= config.min_ray_gain)
        pos, dirs, travelled, gains, launch, ray_id = (
            pos[keep], dirs[keep], travelled[keep], gains[keep], launch[keep], ray_id[keep])

    if not hits["d"]:
        return empty_path_set(bands, room.band_edges)
    d = np.concatenate(hits["d"])
    g = np.concatenate(hits["gains"]) / d[:, None]
    rays = np.concatenate(hits["ray"])
    bounces = np.concatenate(hits["bounces"])

    def build(i: int) -> PropagationPath:
        steps = history[rays[i]][: bounces[i] + 1]
        points = np.array([p for p, _ in steps] + [target])
        seg = np.diff(points, axis=0)
        seg_dirs = seg / np.linalg.norm(seg, axis=1)[:, None]
        mats = tuple(room.wall_materials[w] for _, w in steps[1:])
        return PropagationPath(points=points, segment_directions=seg_dirs,
                               interaction_materials=mats, total_length=float(d[i]))

    return PathSet(
        delays=d / config.speed_of_sound,
        amplitudes=g[:, 0] if bands == 1 else g.mean(axis=1),
        band_gains=None if bands == 1 else g,
        launch_dirs=np.concatenate(hits["launch"]),
        arrival_dirs=np.concatenate(hits["arrival"]),
        weights=np.concatenate(hits["weight"]),
        band_edges=room.band_edges,
        path_builder=build if keep_points else None,
    )


def trace_stochastic(room: ShoeboxRoom, emitter: Pose, listener: Pose, config: SimulationConfig,
                     keep_points: bool = False, verbose: bool = False) -> PathSet:
    """
    config.ray_count uniform rays in batches of config.ray_batch_size. Batch b
    draws from its own stream derived from (rng_seed, b); batches are merged
    in batch order, so the result does not depend on the worker count.
    """
    if config.ray_count == 0:
        raise EmptyPathSetError("ray_count is 0; nothing to trace")
    _check_inside(room, emitter.pos, listener.pos)

    sizes = [min(config.ray_batch_size, config.ray_count - s)
             for s in range(0, config.ray_count, config.ray_batch_size)]

    def run(b: int) -> PathSet:
        stream = rng_utils.derived_rng(config.rng_seed, b)
        directions = random_unit_vectors(stream, sizes[b])
        return trace_rays(room, emitter, listener, directions, config, stream,
                          n_rays_total=config.ray_count, keep_points=keep_points)

    workers = min(env_config.worker_count(), len(sizes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(b) for b in range(len(sizes))]
    paths = concat_path_sets(parts)
    if verbose:
        print(f"DEBUG: Traced {config.ray_count} rays in {len(sizes)} batch(es) "
              f"on {workers} worker(s): {len(paths)} listener hits")
    return paths


# --- Synthesis ---

@dataclass
class SynthesisReport:
    total: int = 0
    truncated: int = 0


def band_filters(band_edges: Sequence[float], sample_rate: int, taps: int) -> np.ndarray:
    """
    Linear-phase FIR band splitter, shape (B, taps). Bands are differences
    of windowed lowpasses, so they sum to a centred unit impulse.
    """
    nyquist = sample_rate / 2.0
    if any(e >= nyquist for e in band_edges):
        raise PreconditionError(f"band edges {tuple(band_edges)} must lie below Nyquist ({nyquist} Hz)")
    delta = np.zeros(taps)
    delta[taps // 2] = 1.0
    lowpasses = [np.zeros(taps)] + [firwin(taps, e, fs=sample_rate) for e in band_edges] + [delta]
    return np.array([hi - lo for lo, hi in zip(lowpasses, lowpasses[1:])])


def _accumulate(n: int, t: np.ndarray, values: np.ndarray, config: SimulationConfig) -> np.ndarray:
    out = np.zeros(n)
    if config.delay_mode == "nearest":
        idx = np.rint(t).astype(int)
        ok = idx < n
        np.add.at(out, idx[ok], values[ok])
        return out
    half = config.sinc_taps // 2
    offsets = np.arange(-half + 1, half + 1)
    n0 = np.floor(t).astype(int)
    x = offsets[None, :] - (t - n0)[:, None]
    # Hann-windowed sinc; the window vanishes at |x| = half
    h = np.sinc(x) * 0.5 * (1.0 + np.cos(np.pi * x / half))
    idx = n0[:, None] + offsets[None, :]
    ok = (idx >= 0) & (idx < n)
    np.add.at(out, idx[ok], (values[:, None] * h)[ok])
    return out


def synthesize_ir(paths: PathSet, emitter_pattern: GainPattern, listener_pattern: GainPattern,
                  emitter: Pose, listener: Pose, config: SimulationConfig,
                  report: Optional[SynthesisReport] = None, verbose: bool = False) -> ImpulseResponse:
    """
    Sum of amplitude * G_e(launch) * G_l(arrival) pulses. Paths whose delay
    falls at or beyond the IR end are dropped and counted in `report`.
    """
    if len(paths) == 0:
        raise EmptyPathSetError("cannot synthesize an impulse response from an empty path set")
    fs, n = config.sample_rate, config.n_samples
    g = eval_pattern_many(emitter_pattern, paths.launch_dirs, emitter.dir) * \
        eval_pattern_many(listener_pattern, paths.arrival_dirs, listener.dir)
    t = paths.delays * fs
    inside = t < n
    truncated = int(np.count_nonzero(~inside))
    if report is not None:
        report.total += len(paths)
        report.truncated += truncated
    if verbose and truncated:
        print(f"DEBUG: {truncated} of {len(paths)} paths arrive after {config.ir_duration} s and were dropped")

    t, g, w = t[inside], g[inside], paths.weights[inside]
    if paths.band_gains is None:
        values = w * (paths.amplitudes[inside] * g)
        order = np.lexsort((values, t))
        return ImpulseResponse(_accumulate(n, t[order], values[order], config), fs)

    filters = band_filters(paths.band_edges, fs, config.band_filter_taps)
    half = config.band_filter_taps // 2
    out = np.zeros(n)
    for b, fir in enumerate(filters):
        values = w * (paths.band_gains[inside, b] * g)
        order = np.lexsort((values, t))
        train = _accumulate(n, t[order], values[order], config)
        out += np.convolve(train, fir)[half:half + n]
    return ImpulseResponse(out, fs)



def simulate_ir(room: ShoeboxRoom, emitter: Pose, listener: Pose, emitter_pattern: GainPattern,
                listener_pattern: GainPattern, config: SimulationConfig, mode: str = "ism",
                report: Optional[SynthesisReport] = None, verbose: bool = False) -> ImpulseResponse:
    """One IR from either path source; `mode` is "ism" or "rays"."""
    if mode == "ism":
        paths = enumerate_image_paths(room, emitter.pos, listener.pos, config.max_image_order,
                                      speed_of_sound=config.speed_of_sound, verbose=verbose)
    elif mode == "rays":
        paths = trace_stochastic(room, emitter, listener, config, verbose=verbose)
    else:
        raise PreconditionError(f"unknown simulation mode '{mode}' (expected 'ism' or 'rays')")
    return synthesize_ir(paths, emitter_pattern, listener_pattern, emitter, listener, config,
                         report=report, verbose=verbose)
