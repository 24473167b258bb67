import os
from unittest import mock

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from trajattn.export import (
    atomic_write_text,
    export_mask_pgm,
    pgm_text,
    read_pgm,
    to_gray,
    write_matrix_csv,
    write_pgm,
)
from trajattn.masking import build_self_mask


def test_to_gray_scaling():
    g = to_gray(np.array([[0.1, 0.2], [0.3, 0.5]]))
    assert g.min() == 0 and g.max() == 255
    assert g[0, 1] == round(0.1 / 0.4 * 255)
    assert np.all(to_gray(np.full((2, 3), 0.7)) == 0)


def test_pgm_header():
    assert pgm_text(np.array([[0, 255, 7]])) == "P2\n3 1\n255\n0 255 7\n"


@settings(max_examples=30, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.integers(0, 255)))
def test_pgm_round_trip(tmp_path_factory, gray):
    path = tmp_path_factory.mktemp("pgm") / "x.pgm"
    write_pgm(path, gray)
    back, maxval = read_pgm(path)
    assert maxval == 255 and np.array_equal(back, gray)


def test_mask_pgm_is_binary(tmp_path):
    mask = build_self_mask(frozenset({0}), frozenset({2}), 3)
    export_mask_pgm(tmp_path / "m.pgm", mask)
    grid, maxval = read_pgm(tmp_path / "m.pgm")
    assert maxval == 1
    assert grid.tolist() == [[1, 1, 0], [1, 1, 1], [0, 1, 1]]


def test_matrix_csv_round_trips_floats(tmp_path):
    m = np.random.default_rng(0).random((3, 4))
    write_matrix_csv(tmp_path / "m.csv", m)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "k0,k1,k2,k3"
    back = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    assert np.array_equal(back, m)


def test_interrupted_write_leaves_no_artifact(tmp_path):
    target = tmp_path / "report.json"
    target.write_text("old")
    with mock.patch("trajattn.export.os.replace", side_effect=KeyboardInterrupt):
        with pytest.raises(KeyboardInterrupt):
            atomic_write_text(target, "new")
    assert target.read_text() == "old"
    assert os.listdir(tmp_path) == ["report.json"]
