import numpy as np
import pytest

from reverb_versa.core import geometry
from reverb_versa.models import Material, PreconditionError


def test_make_path_directions_and_length():
    wall = Material.flat(0.5)
    path = geometry.make_path([(0, 0, 0), (3, 0, 0), (3, 4, 0)], [wall])
    assert path.total_length == pytest.approx(7.0)
    assert path.order == 1
    np.testing.assert_allclose(path.launch_direction, [1, 0, 0])
    np.testing.assert_allclose(path.arrival_direction, [0, -1, 0])


def test_make_path_needs_one_material_per_interaction():
    with pytest.raises(PreconditionError):
        geometry.make_path([(0, 0, 0), (1, 0, 0), (1, 1, 0)])


def test_reverse_path_swaps_launch_and_arrival():
    a, b = Material.flat(0.5), Material.flat(0.9)
    path = geometry.make_path([(0, 0, 0), (2, 0, 0), (2, 2, 0), (0, 3, 1)], [a, b])
    rev = geometry.reverse_path(path)
    np.testing.assert_array_equal(rev.launch_direction, path.arrival_direction)
    np.testing.assert_array_equal(rev.arrival_direction, path.launch_direction)
    assert rev.interaction_materials == (b, a)
    assert rev.total_length == path.total_length
    assert geometry.reverse_path(rev) == path


@pytest.mark.parametrize("facing", [(1, 0, 0), (0, 0, -1), (0.6, 0.0, 0.8), (-0.48, 0.6, 0.64)])
def test_facing_frame_is_right_handed_orthonormal(facing):
    frame = geometry.facing_frame(facing)
    np.testing.assert_allclose(frame @ frame.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(frame) == pytest.approx(1.0)
    np.testing.assert_allclose(geometry.to_local(facing, facing), [0, 0, 1], atol=1e-12)


def test_local_world_round_trip():
    dirs = geometry.random_unit_vectors(np.random.default_rng(1), 20)
    facing = np.array([0.0, 0.6, 0.8])
    back = geometry.to_world(geometry.to_local(dirs, facing), facing)
    np.testing.assert_allclose(back, dirs, atol=1e-12)


def test_random_unit_vectors_are_unit():
    dirs = geometry.random_unit_vectors(np.random.default_rng(0), 100)
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0)


def test_check_unit_rejects_non_unit():
    with pytest.raises(PreconditionError):
        geometry.check_unit([1.0, 1.0, 0.0])
