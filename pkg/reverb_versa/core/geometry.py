from dataclasses import dataclass
from typing import Tuple

import numpy as np

from reverb_versa.models import Material, PreconditionError, UNIT_TOLERANCE


@dataclass(frozen=True, eq=False)
class PropagationPath:
    """
    Ordered interaction points p_0 = emitter .. p_{K+1} = listener with the
    K+1 unit segment directions and the K interaction materials in order.
    """
    points: np.ndarray                      # (K+2, 3)
    segment_directions: np.ndarray          # (K+1, 3)
    interaction_materials: Tuple[Material, ...]
    total_length: float

    @property
    def order(self) -> int:
        return len(self.interaction_materials)

    @property
    def launch_direction(self) -> np.ndarray:
        return self.segment_directions[0]

    @property
    def arrival_direction(self) -> np.ndarray:
        """Direction from the listener towards the incoming sound."""
        return -self.segment_directions[-1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PropagationPath):
            return NotImplemented
        return (
            np.array_equal(self.points, other.points)
            and np.array_equal(self.segment_directions, other.segment_directions)
            and self.interaction_materials == other.interaction_materials
            and self.total_length == other.total_length
        )


def make_path(points, materials=()) -> PropagationPath:
    """Builds a path from raw points, deriving directions and length."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
        raise PreconditionError("a path needs at least two 3-D points")
    if len(materials) != len(pts) - 2:
        raise PreconditionError(f"{len(pts) - 2} interaction points need as many materials, got {len(materials)}")
    seg = np.diff(pts, axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        dirs = seg / lengths[:, None]
    return PropagationPath(
        points=pts,
        segment_directions=dirs,
        interaction_materials=tuple(materials),
        total_length=float(np.sum(lengths)),
    )


def reverse_path(path: PropagationPath) -> PropagationPath:
    """Emitter and listener exchanged: same points backwards, directions negated."""
    return PropagationPath(
        points=path.points[::-1].copy(),
        segment_directions=-path.segment_directions[::-1],
        interaction_materials=tuple(reversed(path.interaction_materials)),
        total_length=path.total_length,
    )


def check_unit(v, what: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norms = np.linalg.norm(v, axis=-1)
    if not np.all(np.abs(norms - 1.0) <= UNIT_TOLERANCE):
        raise PreconditionError(f"{what} must be unit-norm (got norm {np.max(np.abs(norms - 1.0)) + 1.0:.12g})")
    return v


def facing_frame(facing) -> np.ndarray:
    """
    Rows (e1, e2, facing): a right-handed orthonormal frame whose third axis
    is `facing`. The helper axis is chosen deterministically from the
    smallest facing component, so the roll of (e1, e2) about `facing` is a
    convention of this function. Zonal patterns never see it. Full-SH
    patterns (zonal_only=False) are defined relative to this roll and are
    not invariant under rotations about the facing axis.
    """
    f = np.asarray(facing, dtype=float)
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(f)))] = 1.0
    e1 = np.cross(helper, f)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(f, e1)
    return np.stack([e1, e2, f])


def to_local(directions, facing) -> np.ndarray:
    """World directions expressed in the facing frame (facing -> +z)."""
    return np.asarray(directions, dtype=float) @ facing_frame(facing).T


def to_world(directions, facing) -> np.ndarray:
    return np.asarray(directions, dtype=float) @ facing_frame(facing)


def random_unit_vectors(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform directions on the sphere (z uniform in [-1, 1], azimuth uniform)."""
    z = rng.uniform(-1.0, 1.0, n)
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
