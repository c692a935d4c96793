"""
Built-in desk-scale scenes.

  same-pattern   omnidirectional emitter and listener
  diff-pattern   cardioid emitter, omnidirectional listener

Both share one 5 x 4 x 3 m room, five training emitters, ten held-out
emitters at least 1 m from every training emitter and a 20 x 20 listener
grid at ear height. Emitter layouts are drawn from a fixed seed.
"""
from typing import List, Optional, Tuple

import numpy as np

from reverb_versa.core import rng as rng_utils
from reverb_versa.core.patterns import cardioid_pattern, omni_pattern
from reverb_versa.models import ExperimentConfig, GainPattern, Pose, PreconditionError, SceneSpec, ShoeboxRoom

PRESETS = ("same-pattern", "diff-pattern")
PRESET_SEED = 20240917
ROOM_DIMENSIONS = (5.0, 4.0, 3.0)
WALL_COEFFICIENT = 0.7
LISTENER_HEIGHT = 1.2
EMITTER_HEIGHTS = (1.0, 2.0)
MARGIN = 0.5


def preset_room() -> ShoeboxRoom:
    return ShoeboxRoom.uniform(ROOM_DIMENSIONS, WALL_COEFFICIENT)


def listener_grid(room: ShoeboxRoom, side: int = 20, height: float = LISTENER_HEIGHT) -> List[Pose]:
    """side x side listeners facing +x, evenly spread inside the margin."""
    size = room.size
    xs = np.linspace(MARGIN, size[0] - MARGIN, side)
    ys = np.linspace(MARGIN, size[1] - MARGIN, side)
    return [Pose(position=(float(x), float(y), height), orientation=(1.0, 0.0, 0.0)) for x in xs for y in ys]


def _random_emitter(room: ShoeboxRoom, stream: np.random.Generator) -> Pose:
    size = room.size
    x = stream.uniform(MARGIN, size[0] - MARGIN)
    y = stream.uniform(MARGIN, size[1] - MARGIN)
    z = stream.uniform(*EMITTER_HEIGHTS)
    az = stream.uniform(0.0, 2.0 * np.pi)
    return Pose.facing((x, y, z), (np.cos(az), np.sin(az), 0.0))


def emitter_layout(room: ShoeboxRoom, n_train: int, n_test: int, min_separation: float = 1.0,
                   seed: int = PRESET_SEED, max_tries: int = 100000) -> Tuple[List[Pose], List[Pose]]:
    """
    Training emitters first, then rejection-sampled test emitters. The i-th
    training emitter depends only on the seed, so smaller sweeps are
    prefixes of larger ones.
    """
    train_stream = rng_utils.derived_rng(seed, 0)
    train = [_random_emitter(room, train_stream) for _ in range(n_train)]
    test_stream = rng_utils.derived_rng(seed, 1)
    test: List[Pose] = []
    for _ in range(max_tries):
        if len(test) == n_test:
            break
        cand = _random_emitter(room, test_stream)
        if all(np.linalg.norm(cand.pos - e.pos) >= min_separation for e in train):
            test.append(cand)
    if len(test) < n_test:
        raise PreconditionError(f"could not place {n_test} test emitters {min_separation} m away from training emitters")
    return train, test


def scene_preset(name: str, n_train: int = 5, n_test: int = 10, grid_side: int = 20,
                 seed: int = PRESET_SEED) -> Tuple[SceneSpec, GainPattern, GainPattern]:
    """(scene, emitter pattern, listener pattern) for a preset name."""
    if name not in PRESETS:
        raise PreconditionError(f"unknown preset '{name}' (choose from {', '.join(PRESETS)})")
    room = preset_room()
    train, test = emitter_layout(room, n_train, n_test, seed=seed)
    scene = SceneSpec(room=room, train_emitters=train, test_emitters=test,
                      listener_grid=listener_grid(room, grid_side))
    emitter = omni_pattern() if name == "same-pattern" else cardioid_pattern()
    return scene, emitter, omni_pattern()


def resolve_scene(cfg: ExperimentConfig, n_train: Optional[int] = None) -> Tuple[SceneSpec, GainPattern, GainPattern]:
    """Scene and patterns of an experiment: explicit entries win over the preset."""
    if cfg.scene is not None and n_train is None:
        scene = cfg.scene
        emitter, listener = omni_pattern(), omni_pattern()
        if cfg.preset is not None:
            _, emitter, listener = scene_preset(cfg.preset, n_train=0, n_test=0, grid_side=1)
    else:
        scene, emitter, listener = scene_preset(cfg.preset or "same-pattern", n_train=n_train or 5)
    return scene, cfg.emitter_pattern or emitter, cfg.listener_pattern or listener


def random_rooms(count: int, seed: int) -> List[ShoeboxRoom]:
    """Shoeboxes with random dimensions and one random flat wall coefficient each."""
    stream = rng_utils.derived_rng(seed, 2)
    rooms = []
    for _ in range(count):
        dims = (stream.uniform(3.0, 8.0), stream.uniform(3.0, 7.0), stream.uniform(2.5, 4.0))
        rooms.append(ShoeboxRoom.uniform(dims, float(stream.uniform(0.5, 0.9))))
    return rooms
