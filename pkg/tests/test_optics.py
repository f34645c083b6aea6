import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ionwitness.geometry import sample_crystal
from ionwitness.optics import (
    FWHM_PER_SIGMA,
    REFERENCE_MODEL,
    PROSPECT_MODEL,
    WIDE_FIELD_MODEL,
    DetectionModel,
    contributing_count,
    efficiency_at,
    load_model,
    per_ion_efficiencies,
    save_model,
)

MODEL = DetectionModel(eta0=6.1e-4, sigma_r_um=2.3, sigma_a_um=98.0)


@pytest.mark.parametrize(
    "r, a, expected",
    [
        (0.0, 0.0, 6.1e-4),
        (2.3, 0.0, 6.1e-4 * math.exp(-0.5)),
        (0.0, 98.0, 6.1e-4 * math.exp(-0.5)),
        (2.3, 98.0, 6.1e-4 * math.exp(-1.0)),
    ],
)
def test_efficiency_at(r, a, expected):
    assert efficiency_at(MODEL, r, a) == pytest.approx(expected, rel=1e-14)


def test_efficiency_vectorised():
    out = efficiency_at(MODEL, np.array([0.0, 2.3]), np.array([0.0, 0.0]))
    np.testing.assert_allclose(out, [6.1e-4, 6.1e-4 * math.exp(-0.5)])


def test_per_ion_empty_and_origin():
    assert per_ion_efficiencies(MODEL, np.empty((0, 3))).shape == (0,)
    np.testing.assert_allclose(per_ion_efficiencies(MODEL, np.zeros((1, 3))), [6.1e-4])


def test_per_ion_mirror_symmetry():
    pos = np.array([[1.0, 2.0, 30.0], [-1.0, -2.0, -30.0]])
    eta = per_ion_efficiencies(MODEL, pos)
    assert eta[0] == pytest.approx(eta[1], rel=1e-15)


def test_per_ion_axis_choice():
    pos = np.array([[0.0, 0.0, 10.0]])
    along_z = per_ion_efficiencies(MODEL, pos, axis=(0, 0, 1))[0]
    along_x = per_ion_efficiencies(MODEL, pos, axis=(1, 0, 0))[0]
    assert along_z == pytest.approx(efficiency_at(MODEL, 0.0, 10.0))
    assert along_x == pytest.approx(efficiency_at(MODEL, 10.0, 0.0))
    with pytest.raises(ValueError):
        per_ion_efficiencies(MODEL, pos, axis=(0, 0, 2))


@pytest.mark.parametrize(
    "etas, th, expected",
    [
        ([1.0, 0.5, 0.2], 0.4, 2),
        ([1.0, 0.5, 0.2], 0.0, 3),
        ([1.0, 0.5, 0.2], 1.0, 1),
        ([0.3], 1 / math.e, 1),
    ],
)
def test_contributing_count(etas, th, expected):
    assert contributing_count(etas, th) == expected


def test_contributing_count_empty():
    with pytest.raises(ValueError):
        contributing_count([], 0.5)


@given(st.floats(0, 1), st.floats(0, 1))
def test_contributing_count_monotone(a, b):
    etas = per_ion_efficiencies(WIDE_FIELD_MODEL, sample_crystal(275, 4.0, 3))
    lo, hi = sorted((a, b))
    assert contributing_count(etas, lo) >= contributing_count(etas, hi)


def test_total_efficiency_sublinear_in_crystal_size():
    # outer shells sit far from the focus and add little
    ns = np.array([12, 55, 125, 204, 275])
    sums = np.array(
        [per_ion_efficiencies(REFERENCE_MODEL, sample_crystal(n, 4.0, 0)).sum() for n in ns]
    )
    assert np.all(sums <= ns * REFERENCE_MODEL.eta0)
    assert sums[-1] / ns[-1] < 0.2 * sums[0] / ns[0]


def test_presets():
    assert FWHM_PER_SIGMA == pytest.approx(2.3548200450309493)
    assert WIDE_FIELD_MODEL.sigma_r_um == pytest.approx(8.4932, rel=1e-4)
    e1, e2 = REFERENCE_MODEL.peak_detector_efficiencies
    assert e1 == pytest.approx(3.3e-4)
    assert e2 == pytest.approx(2.8e-4)
    assert PROSPECT_MODEL.eta0 == 4e-4


@pytest.mark.parametrize(
    "kwargs",
    [
        {"eta0": 0.0},
        {"eta0": 1.5},
        {"sigma_r_um": 0.0},
        {"split_T": 1.0},
        {"kappa1": -0.1},
        {"dark_prob": 1.0},
        {"split_T": 0.5, "kappa1": 2.5},
    ],
)
def test_invalid_models(kwargs):
    with pytest.raises(ValueError):
        DetectionModel(**kwargs)


def test_model_config_round_trip(tmp_path):
    path = tmp_path / "model.cfg"
    save_model(REFERENCE_MODEL, path)
    assert load_model(path) == REFERENCE_MODEL


def test_model_config_defaults_and_errors(tmp_path):
    path = tmp_path / "model.cfg"
    path.write_text("# narrow\neta0 = 4e-4\n\n")
    assert load_model(path) == DetectionModel(eta0=4e-4)
    path.write_text("colour = blue\n")
    with pytest.raises(ValueError):
        load_model(path)
