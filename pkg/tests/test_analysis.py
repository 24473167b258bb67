import numpy as np
import pytest

from trajattn.analysis import (
    attention_map,
    diagonal_ratio,
    inter_frame_fg_score,
    std_uplift,
    toy_features,
)
from trajattn.attention import BlockWeights
from trajattn.errors import OutOfBounds
from trajattn.lattice import TokenLattice
from trajattn.rope import RopeLayout, build_3d_rope
from trajattn.trajectory import Trajectory


def test_uniform_attention_score_is_box_fraction():
    lat = TokenLattice(3, 4, 4)
    traj = Trajectory.from_tuples([(0, 0, 2, 2), (1, 1, 3, 3), (2, 0, 4, 2)])
    uniform = np.full((lat.length, lat.length), 1.0 / lat.length)
    assert inter_frame_fg_score(uniform, traj, lat) == pytest.approx(4 / 48, abs=1e-15)


def test_single_frame_score_is_undefined():
    lat = TokenLattice(1, 2, 2)
    assert inter_frame_fg_score(np.eye(4), Trajectory.static((0, 0, 1, 1), 1), lat) is None


def test_one_frame_map_is_full_row_stochastic():
    lat = TokenLattice(1, 3, 3)
    table = build_3d_rope(lat, RopeLayout.default(16))
    x = toy_features(lat, 64, 0)
    m = attention_map(x, table, None, BlockWeights.init(0), 0, 0)
    assert m.shape == (9, 9)
    np.testing.assert_allclose(m.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert np.all((m >= 0) & (m <= 1))
    with pytest.raises(OutOfBounds):
        attention_map(x, table, None, BlockWeights.init(0), 0, 1)


def test_diagonal_ratio_definition():
    block = np.full((3, 3), 0.1)
    np.fill_diagonal(block, 0.4)
    assert diagonal_ratio(block) == pytest.approx(4.0)


def test_toy_features_are_seeded():
    lat = TokenLattice(2, 2, 2)
    assert np.array_equal(toy_features(lat, 8, 3), toy_features(lat, 8, 3))
    assert not np.array_equal(toy_features(lat, 8, 3), toy_features(lat, 8, 4))


def test_uncorrelated_projections_show_no_uplift_guarantee():
    # with qk_align = 0 the query of a token carries no preference for its own
    # rotary phase, so the decoupled table is not expected to help every seed
    lat = TokenLattice(4, 8, 8)
    traj = Trajectory.from_tuples([(0, 2, 2, 5), (2, 2, 4, 5), (4, 2, 6, 5), (6, 2, 8, 5)])
    ratios = [std_uplift(lat, traj, s, qk_align=0.0).diagonal_ratio for s in range(5)]
    aligned = [std_uplift(lat, traj, s).diagonal_ratio for s in range(5)]
    assert min(aligned) > max(ratios)
