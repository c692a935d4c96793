import math
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    computed_field,
    field_validator,
    model_validator,
)

from . import config

Vec3 = Tuple[float, float, float]

DATASET_FORMAT_VERSION = 1
CHECKPOINT_FORMAT_VERSION = 1
UNIT_TOLERANCE = 1e-9


# --- Errors ---

class ReverbVersaError(Exception):
    """Root of every domain error raised by this package."""


class PreconditionError(ReverbVersaError, ValueError):
    pass


class GeometryError(PreconditionError):
    pass


class DegenerateGeometryError(GeometryError):
    pass


class EmptyPathSetError(PreconditionError):
    pass


class SilentSignalError(PreconditionError):
    pass


class InsufficientDecayError(ReverbVersaError, ValueError):
    pass


class DegeneratePatternError(ReverbVersaError, ValueError):
    pass


class DatasetFormatError(ReverbVersaError, ValueError):
    """Container could not be decoded: bad magic, version mismatch or truncation."""


class ChecksumError(DatasetFormatError):
    pass


class FieldStateError(ReverbVersaError, RuntimeError):
    pass


class TrainingDivergedError(ReverbVersaError, RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class AcceptanceError(ReverbVersaError):
    """An acceptance threshold checked under --check was not met."""


# --- Scene records ---

def _finite3(v: Vec3, what: str) -> Vec3:
    if not all(math.isfinite(x) for x in v):
        raise ValueError(f"{what} components must be finite, got {v}")
    return v


class Pose(BaseModel):
    """
    Position (meters) plus a unit facing vector of an emitter or listener.
    Roll is not represented; gain patterns are axially symmetric about the
    facing vector.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    position: Vec3 = Field(description="Position in meters.")
    orientation: Vec3 = Field(default=(1.0, 0.0, 0.0), description="Unit facing vector.")

    @field_validator("position")
    @classmethod
    def _position_finite(cls, v: Vec3) -> Vec3:
        return _finite3(v, "position")

    @field_validator("orientation")
    @classmethod
    def _orientation_unit(cls, v: Vec3) -> Vec3:
        _finite3(v, "orientation")
        norm = math.sqrt(sum(x * x for x in v))
        if abs(norm - 1.0) > UNIT_TOLERANCE:
            raise ValueError(f"orientation must be a unit vector (norm {norm!r})")
        return v

    @classmethod
    def facing(cls, position, direction) -> "Pose":
        """Builds a pose, normalizing `direction`."""
        d = np.asarray(direction, dtype=float)
        n = float(np.linalg.norm(d))
        if n == 0.0 or not math.isfinite(n):
            raise ValueError("facing direction must be non-zero and finite")
        d = d / n
        return cls(position=tuple(float(x) for x in position), orientation=tuple(float(x) for x in d))

    @property
    def pos(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)

    @property
    def dir(self) -> np.ndarray:
        return np.asarray(self.orientation, dtype=float)


class Material(BaseModel):
    """
    Per-band amplitude reflection coefficients. `band_edges` holds the
    interior band edges in Hz, so a flat material has one coefficient and
    no edges.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    reflection_coeffs: Tuple[float, ...] = (0.8,)
    band_edges: Tuple[float, ...] = ()

    @field_validator("reflection_coeffs")
    @classmethod
    def _coeffs_in_range(cls, v):
        if len(v) == 0:
            raise ValueError("a material needs at least one reflection coefficient")
        for r in v:
            if not (0.0 <= r <= 1.0):
                raise ValueError(f"reflection coefficient {r} outside [0, 1]")
        return v

    @model_validator(mode="after")
    def _edges_match_bands(self):
        edges = self.band_edges
        if len(edges) != len(self.reflection_coeffs) - 1:
            raise ValueError(
                f"{len(self.reflection_coeffs)} bands need {len(self.reflection_coeffs) - 1} interior edges, got {len(edges)}")
        if any(e <= 0 for e in edges) or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("band edges must be positive and strictly increasing")
        return self

    @property
    def n_bands(self) -> int:
        return len(self.reflection_coeffs)

    @classmethod
    def flat(cls, coeff: float) -> "Material":
        return cls(reflection_coeffs=(float(coeff),))

    @classmethod
    def octave(cls, coeffs) -> "Material":
        """Six-band material on the 125 Hz .. 4 kHz octave grid."""
        coeffs = tuple(float(c) for c in coeffs)
        if len(coeffs) != len(config.OCTAVE_BAND_EDGES) + 1:
            raise ValueError(f"octave material needs {len(config.OCTAVE_BAND_EDGES) + 1} coefficients")
        return cls(reflection_coeffs=coeffs, band_edges=config.OCTAVE_BAND_EDGES)


class ShoeboxRoom(BaseModel):
    """
    Axis-aligned box [0, Lx] x [0, Ly] x [0, Lz]. Walls are ordered
    x-low, x-high, y-low, y-high, z-low, z-high.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    dimensions: Vec3
    wall_materials: Tuple[Material, Material, Material, Material, Material, Material]

    @field_validator("dimensions")
    @classmethod
    def _positive(cls, v: Vec3) -> Vec3:
        _finite3(v, "dimensions")
        if any(x <= 0 for x in v):
            raise ValueError(f"room dimensions must be > 0, got {v}")
        return v

    @model_validator(mode="after")
    def _shared_band_grid(self):
        grids = {m.band_edges for m in self.wall_materials}
        if len(grids) != 1:
            raise ValueError("all wall materials must share one frequency-band grid")
        return self

    @classmethod
    def uniform(cls, dimensions, material=0.8) -> "ShoeboxRoom":
        if not isinstance(material, Material):
            material = Material.flat(material)
        return cls(dimensions=tuple(float(x) for x in dimensions), wall_materials=(material,) * 6)

    @property
    def size(self) -> np.ndarray:
        return np.asarray(self.dimensions, dtype=float)

    @property
    def band_edges(self) -> Tuple[float, ...]:
        return self.wall_materials[0].band_edges

    @property
    def n_bands(self) -> int:
        return self.wall_materials[0].n_bands

    def coefficient_table(self) -> np.ndarray:
        """(6, n_bands) reflection coefficients in wall order."""
        return np.array([m.reflection_coeffs for m in self.wall_materials], dtype=float)

    def contains(self, point, margin: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p > margin) and np.all(p < self.size - margin))


class SimulationConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    speed_of_sound: float = Field(default=config.SPEED_OF_SOUND, gt=0, description="m/s")
    sample_rate: int = Field(default=config.SAMPLE_RATE, gt=0, description="Hz")
    ir_duration: float = Field(default=config.IR_DURATION, gt=0, description="seconds")
    max_image_order: int = Field(default=8, ge=0)
    ray_count: int = Field(default=10000, ge=0)
    rng_seed: int = Field(default=0, ge=0, lt=2**64)
    capture_radius: float = Field(default=0.2, gt=0, description="Listener capture sphere radius, meters.")
    scattering: float = Field(default=0.2, ge=0, le=1, description="Probability of a Lambertian bounce.")
    delay_mode: Literal["sinc", "nearest"] = "sinc"
    sinc_taps: int = Field(default=32, ge=2)
    band_filter_taps: int = Field(default=255, ge=3)
    ray_batch_size: int = Field(default=8192, ge=1)
    min_ray_gain: float = Field(default=1e-6, ge=0, description="Rays whose band gains all drop below this stop.")

    @field_validator("sinc_taps")
    @classmethod
    def _even_taps(cls, v):
        if v % 2:
            raise ValueError("sinc_taps must be even")
        return v

    @field_validator("band_filter_taps")
    @classmethod
    def _odd_taps(cls, v):
        if v % 2 == 0:
            raise ValueError("band_filter_taps must be odd (linear-phase type I)")
        return v

    @property
    def n_samples(self) -> int:
        return int(round(self.sample_rate * self.ir_duration))


class GainPattern(BaseModel):
    """
    Real spherical-harmonic directivity, coefficients indexed l*l + l + m.
    Stored coefficients are already peak-normalized (see patterns.normalize_pattern).
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    sh_coeffs: Tuple[float, ...]
    floor: float = Field(default=config.PATTERN_FLOOR, gt=0, lt=1)
    zonal_only: bool = True

    @field_validator("sh_coeffs")
    @classmethod
    def _square_length(cls, v):
        order = int(round(math.sqrt(len(v)))) - 1
        if len(v) == 0 or (order + 1) ** 2 != len(v):
            raise ValueError(f"SH coefficient count must be (L+1)^2, got {len(v)}")
        if not all(math.isfinite(c) for c in v):
            raise ValueError("SH coefficients must be finite")
        return v

    @property
    def order(self) -> int:
        return int(round(math.sqrt(len(self.sh_coeffs)))) - 1


# --- Training records ---

class FieldDescriptor(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    hidden_layers: int = Field(default=4, ge=0)
    hidden_width: int = Field(default=128, ge=1)
    encoding_octaves: int = Field(default=6, ge=0)
    activation: Literal["silu", "identity"] = "silu"
    sample_rate: int = Field(default=config.FIELD_SAMPLE_RATE, gt=0)
    ir_samples: int = Field(default=config.FIELD_IR_SAMPLES, gt=0)
    quadrature_size: int = Field(default=config.FIELD_QUADRATURE_SIZE, ge=4)
    position_scale: float = Field(default=5.0, gt=0, description="Positions are divided by this before encoding.")
    probe_radius: float = Field(default=0.5, gt=0, description="Probe sphere radius for emitter-pattern extraction.")


class TrainingConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    regime: Literal["vanilla", "ele", "ssl"] = "vanilla"
    ssl_weight: float = Field(default=0.8, ge=0, description="Weight of the consistency loss (lambda).")
    epochs: int = Field(default=60, ge=1)
    batch_size: int = Field(default=16, ge=1)
    ssl_batch_size: Optional[int] = Field(default=None, ge=1)
    lr_start: float = Field(default=1e-3, gt=0)
    lr_end: float = Field(default=1e-4, gt=0)
    weight_decay: float = Field(default=0.01, ge=0)
    ssl_start_fraction: float = Field(default=0.5, gt=0, lt=1)
    pose_noise_std_max: float = Field(default=0.3, ge=0, description="meters")
    train_pose_noise_std: float = Field(default=0.0, ge=0, description="Position noise on supervised samples, meters.")
    ssl_pattern_source: Literal["extracted", "ground_truth"] = "extracted"
    exchange_orientations: bool = True
    loss_stft_weight: float = Field(default=1.0, ge=0)
    loss_time_weight: float = Field(default=1.0, ge=0)
    seed: int = Field(default=0, ge=0, lt=2**64)


class LossReport(BaseModel):
    l_a: float
    l_ssl: float = 0.0
    ssl_weight: float = 0.0

    @computed_field
    @property
    def total(self) -> float:
        return self.l_a + self.ssl_weight * self.l_ssl


class MetricReport(BaseModel):
    """Six IR errors: T60 in percent of the target, C50 in dB, EDT in ms."""
    amp_err: float = 0.0
    env_err: float = 0.0
    t60_err: float = 0.0
    c50_err: float = 0.0
    edt_err: float = 0.0
    stft_err: float = 0.0
    count: int = 1
    skipped: int = 0

    @field_validator("amp_err", "env_err", "t60_err", "c50_err", "edt_err", "stft_err")
    @classmethod
    def _non_negative(cls, v):
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"metric errors must be finite and >= 0, got {v}")
        return v


# --- Dataset records ---

class SceneSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    room: ShoeboxRoom
    train_emitters: List[Pose]
    test_emitters: List[Pose] = Field(default_factory=list)
    listener_grid: List[Pose]
    min_separation: float = Field(default=1.0, ge=0, description="Minimum test/train emitter distance, meters.")

    @model_validator(mode="after")
    def _check_layout(self):
        for pose in [*self.train_emitters, *self.test_emitters, *self.listener_grid]:
            if not self.room.contains(pose.position):
                raise ValueError(f"pose at {pose.position} is not strictly inside the room")
        for t in self.test_emitters:
            for e in self.train_emitters:
                if float(np.linalg.norm(t.pos - e.pos)) < self.min_separation:
                    raise ValueError(
                        f"test emitter {t.position} is closer than {self.min_separation} m to train emitter {e.position}")
        return self


class SampleRecord(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    emitter: Pose
    listener: Pose
    split: Literal["train", "test"]
    is_virtual: bool = False


class DatasetHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format_version: int = DATASET_FORMAT_VERSION
    room: ShoeboxRoom
    emitter_pattern: GainPattern
    listener_pattern: GainPattern
    simulation: SimulationConfig
    sample_rate: int
    ir_samples: int
    sample_count: int
    samples: List[SampleRecord]
    ele_duplicates_removed: int = 0

    @model_validator(mode="after")
    def _count_matches(self):
        if self.sample_count != len(self.samples):
            raise ValueError(f"sample_count {self.sample_count} != {len(self.samples)} sample records")
        return self


class CheckpointHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format_version: int = CHECKPOINT_FORMAT_VERSION
    descriptor: FieldDescriptor
    training: TrainingConfig
    seed: int
    parameter_shapes: List[Tuple[str, List[int]]]
    listener_pattern: GainPattern
    extracted_pattern: Optional[GainPattern] = None


# --- Reports ---

class VerificationRow(BaseModel):
    variant: str
    ray_count: Optional[int] = None
    amp: float
    env: float
    t60: float
    c50: float
    edt: float


class VerificationReport(BaseModel):
    mode: Literal["ism", "rays"]
    pair_count: int
    rows: List[VerificationRow]
    ratios: Dict[str, float] = Field(default_factory=dict, description="paired / un-paired per metric at the highest ray count")


# --- Experiment config ---

class VerificationSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    pair_count: int = Field(default=20, ge=2)
    rooms: Optional[List[ShoeboxRoom]] = None
    ray_sweep: List[int] = Field(default_factory=lambda: [1000, 10000, 100000])
    seeds: int = Field(default=5, ge=1)
    margin: float = Field(default=0.5, ge=0)
    max_image_order: int = Field(default=4, ge=0)


class EvaluationSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    probe_pairs: int = Field(default=32, ge=1)
    baselines: List[Literal["nearest", "linear"]] = Field(default_factory=lambda: ["nearest", "linear"])
    linear_k: int = Field(default=4, ge=1)


class AcceptanceThresholds(BaseModel):
    model_config = ConfigDict(extra="forbid")

    ele_gain: float = 0.15
    ssl_gain: float = 0.10
    probe_ratio: float = 0.5
    ray_ratio: float = 0.1
    collapse_ratio: float = 0.5


class ExperimentConfig(BaseModel):
    """Schema-strict experiment file; unknown keys are rejected at every level."""
    model_config = ConfigDict(extra="forbid")

    preset: Optional[Literal["same-pattern", "diff-pattern"]] = "same-pattern"
    scene: Optional[SceneSpec] = None
    emitter_pattern: Optional[GainPattern] = None
    listener_pattern: Optional[GainPattern] = None
    simulation: SimulationConfig = Field(default_factory=SimulationConfig)
    field: FieldDescriptor = Field(default_factory=FieldDescriptor)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    verification: VerificationSettings = Field(default_factory=VerificationSettings)
    evaluation: EvaluationSettings = Field(default_factory=EvaluationSettings)
    acceptance: AcceptanceThresholds = Field(default_factory=AcceptanceThresholds)
    output_dir: str = config.OUTPUT_DIR

    @model_validator(mode="after")
    def _scene_source(self):
        if self.preset is None and self.scene is None:
            raise ValueError("either 'preset' or 'scene' must be given")
        return self


