import math
import time
from fractions import Fraction

import numpy as np
import pytest

from ionwitness.geometry import REFERENCE_SPACING_UM, sample_crystal
from ionwitness.optics import REFERENCE_MODEL, DetectionModel
from ionwitness.simulate import (
    ClassicalConfig,
    ClickBins,
    ContinuousConfig,
    PulsedConfig,
    calibrate_emission_rate,
    classical_clicks,
    closed_form_classical,
    closed_form_witness,
    mean_photon_number,
    run_classical,
    run_continuous,
    run_pulsed,
    simulate_emitters,
)
from ionwitness.stats import variance_d, variance_d_multinomial
from ionwitness.timetag import bin_counts_continuous
from ionwitness.witness import analytic_probs, analytic_witness, probabilities_from_counts

from oracles import enumerate_click_probs, thermal_probs_series


def _z(observed, expected, n):
    """Binomial z-score of a frequency."""
    sd = math.sqrt(max(expected * (1 - expected), 1e-300) / n)
    return abs(observed - expected) / sd


def test_single_ideal_emitter():
    clicks = simulate_emitters([1.0], 10**5, seed=1)
    counts = clicks.counts()
    assert counts.n_c == 0
    assert counts.n_silent == 0
    assert _z(counts.n_s1 / counts.n_tb, 0.5, counts.n_tb) < 4


@pytest.mark.parametrize(
    "etas, T",
    [
        ([Fraction(1, 2)], Fraction(1, 2)),
        ([Fraction(1, 2), Fraction(1, 3)], Fraction(1, 2)),
        ([Fraction(3, 4), Fraction(1, 2), Fraction(1, 4)], Fraction(2, 5)),
    ],
)
def test_pulsed_matches_enumeration(etas, T):
    n = 200_000
    q1 = [e * T for e in etas]
    q2 = [e * (1 - T) for e in etas]
    p00, p01, p02, pc = (float(x) for x in enumerate_click_probs(q1, q2))
    clicks = simulate_emitters([float(e) for e in etas], n, seed=3, shares=(float(T), float(1 - T)))
    freq = probabilities_from_counts(clicks.counts())
    for got, want in [(freq.p00, p00), (freq.p01, p01), (freq.p02, p02), (freq.pc, pc)]:
        assert _z(got, want, n) < 4.5


@pytest.mark.parametrize("seed", range(4))
def test_pulsed_matches_analytic_for_crystals(seed):
    layout = sample_crystal(125, REFERENCE_SPACING_UM, seed)
    cfg = PulsedConfig(layout, REFERENCE_MODEL, eta_p=0.8, n_pulses=10**6, seed=seed)
    probs = analytic_probs(
        cfg.efficiencies() * 0.8, REFERENCE_MODEL.split_T, REFERENCE_MODEL.kappa1, REFERENCE_MODEL.kappa2
    )
    est = probabilities_from_counts(run_pulsed(cfg).counts())
    sigma = math.sqrt(variance_d_multinomial(probs, cfg.n_pulses))
    assert abs(est.d - probs.d) < 4 * sigma
    assert _z(est.p00, probs.p00, cfg.n_pulses) < 4


def test_mean_photon_number():
    assert mean_photon_number(275, 0.71) == pytest.approx(195.25)
    clicks = run_pulsed(
        PulsedConfig(sample_crystal(275, 4.0, 0), REFERENCE_MODEL, eta_p=0.71, n_pulses=10**5, seed=0)
    )
    per_pulse = clicks.n_emitted / clicks.n_bins
    assert per_pulse == pytest.approx(195.25, abs=4 * math.sqrt(275 * 0.71 * 0.29 / 10**5))


def test_pulsed_deterministic():
    cfg = PulsedConfig(sample_crystal(55, 4.0, 1), REFERENCE_MODEL, n_pulses=10**5, seed=42)
    a, b = run_pulsed(cfg), run_pulsed(cfg)
    np.testing.assert_array_equal(a.clicks1, b.clicks1)
    np.testing.assert_array_equal(a.clicks2, b.clicks2)
    c = run_pulsed(PulsedConfig(cfg.layout, cfg.model, n_pulses=10**5, seed=43))
    assert not np.array_equal(a.clicks1, c.clicks1)


def test_blocks_are_independently_seeded():
    # two blocks of one run differ, and block layout does not alter statistics
    clicks = simulate_emitters([0.5], 2 * 1000, seed=0, block=1000)
    first = clicks.clicks1[clicks.clicks1 < 1000]
    second = clicks.clicks1[clicks.clicks1 >= 1000] - 1000
    assert not np.array_equal(first, second)


def test_chunk_counts_add_up():
    clicks = simulate_emitters([0.3, 0.2], 10**5 + 3, seed=0)
    parts = clicks.chunk_counts(5)
    assert sum(parts[1:], parts[0]) == clicks.counts()


@pytest.mark.slow
def test_pulsed_throughput():
    cfg = PulsedConfig(sample_crystal(275, 4.0, 0), REFERENCE_MODEL, eta_p=0.71, n_pulses=10**7, seed=0)
    start = time.perf_counter()
    run_pulsed(cfg)
    assert time.perf_counter() - start < 1.0


def test_invalid_configs():
    with pytest.raises(ValueError):
        simulate_emitters([0.5], 0, seed=0)
    with pytest.raises(ValueError):
        simulate_emitters([1.5], 10, seed=0)
    with pytest.raises(ValueError):
        ClassicalConfig("laser", 0.1, 10)
    with pytest.raises(ValueError):
        ClassicalConfig("coherent", -0.1, 10)


def test_dark_counts_only():
    clicks = simulate_emitters([0.0], 10**6, seed=2, dark_prob=0.01)
    counts = clicks.counts()
    assert _z(counts.n_c / counts.n_tb, 1e-4, counts.n_tb) < 4


def test_poissonian_background_does_not_raise_d():
    rng = np.random.default_rng(4)
    for _ in range(50):
        etas = rng.uniform(0, 0.3, size=rng.integers(1, 20))
        b1, b2 = rng.uniform(0.5, 1.0, size=2)
        probs = analytic_probs(etas)
        noisy = math.sqrt(probs.p01 * b1 * probs.p02 * b2) - math.sqrt(probs.p00 * b1 * b2)
        assert noisy <= probs.d


def test_coherent_background_does_not_help():
    n = 10**6
    ensemble = simulate_emitters(np.full(10, 0.05), n, seed=5)
    background = classical_clicks(ClassicalConfig("coherent", 0.02, n, seed=6))
    mixed = probabilities_from_counts(ensemble.union(background).counts())
    ideal = analytic_probs(np.full(10, 0.05))
    sigma = math.sqrt(variance_d_multinomial(mixed, n))
    assert mixed.d <= ideal.d + 3 * sigma


@pytest.mark.parametrize("mu", [0.0, 0.01, 0.5, 3.0])
@pytest.mark.parametrize("T", [0.2, 0.5, 0.7])
def test_closed_form_coherent_is_zero(mu, T):
    assert closed_form_witness("coherent", mu, T) == 0.0
    assert closed_form_classical("coherent", mu, T).d == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("mu", [0.01, 0.1, 0.5, 2.0, 10.0])
@pytest.mark.parametrize("T", [0.2, 0.5, 0.7])
def test_closed_form_thermal(mu, T):
    probs = closed_form_classical("thermal", mu, T)
    assert closed_form_witness("thermal", mu, T) == pytest.approx(probs.d, rel=1e-9)
    assert probs.d < 0
    if mu <= 0.5:
        p00, p01, p02 = thermal_probs_series(mu, T)
        assert probs.p01 == pytest.approx(p01, rel=1e-12)
        assert probs.p02 == pytest.approx(p02, rel=1e-12)


def test_thermal_weak_limit():
    mu = 1e-4
    # d = -mu^2 / 8 + O(mu^3) at T = 1/2
    assert closed_form_witness("thermal", mu) == pytest.approx(-(mu**2) / 8, rel=1e-3)


@pytest.mark.parametrize("kind", ["coherent", "thermal"])
@pytest.mark.parametrize("mu", [0.05, 0.5, 2.0])
@pytest.mark.parametrize("T", [0.3, 0.5])
def test_classical_mc_matches_closed_form(kind, mu, T):
    n = 10**6
    probs = closed_form_classical(kind, mu, T)
    est = probabilities_from_counts(run_classical(ClassicalConfig(kind, mu, n, T, seed=11)))
    sigma = math.sqrt(variance_d_multinomial(probs, n))
    assert abs(est.d - probs.d) < 4 * sigma
    assert _z(est.p00, probs.p00, n) < 4


def test_classical_zero_intensity_is_silent():
    counts = run_classical(ClassicalConfig("thermal", 0.0, 1000))
    assert counts.n_silent == 1000


def test_click_bins_to_stream_places_tags_in_window():
    clicks = ClickBins(4, np.array([0, 2]), np.array([2, 3]))
    stream = clicks.to_stream(1000, (100, 200), seed=0)
    phase = stream.times_ps % 1000
    assert np.all((phase >= 100) & (phase < 200))
    assert sorted((stream.times_ps // 1000).tolist()) == [0, 2, 2, 3]


def _single_ion(model=None):
    from ionwitness.geometry import CrystalLayout

    layout = CrystalLayout(np.zeros((1, 3)), "shells", None, None)
    return layout, model or DetectionModel(eta0=1.0)


def test_continuous_zero_rate_is_empty():
    layout, model = _single_ion()
    cfg = ContinuousConfig(layout, model, rate_per_ion=0.0, duration=1e-3, bin_tau=1e-9)
    assert len(run_continuous(cfg)) == 0


def test_continuous_dead_time_excludes_double_emissions():
    layout, model = _single_ion()
    cfg = ContinuousConfig(
        layout, model, rate_per_ion=5e7, duration=2e-3, bin_tau=10e-9, dead_time=20e-9, seed=1
    )
    stream = run_continuous(cfg)
    assert np.diff(stream.times_ps.astype(np.int64)).min() >= 20_000 - 1
    counts = bin_counts_continuous(stream, cfg.bin_tau_ps, cfg.duration_ps)
    assert counts.n_c == 0
    assert counts.n_s1 + counts.n_s2 == len(stream)


def test_continuous_without_dead_time_is_poissonian():
    layout, model = _single_ion()
    cfg = ContinuousConfig(layout, model, rate_per_ion=2e7, duration=0.05, bin_tau=10e-9, seed=2)
    stream = run_continuous(cfg)
    counts = bin_counts_continuous(stream, cfg.bin_tau_ps, cfg.duration_ps)
    probs = probabilities_from_counts(counts)
    sigma = math.sqrt(variance_d_multinomial(probs, counts.n_tb))
    assert abs(probs.d) < 4 * sigma
    # detector rate matches the emission rate
    assert len(stream) / cfg.duration == pytest.approx(2e7, rel=0.01)


def test_continuous_dead_time_gives_positive_d():
    layout, model = _single_ion(DetectionModel(eta0=0.5))
    cfg = ContinuousConfig(
        layout, model, rate_per_ion=5e7, duration=0.02, bin_tau=10e-9, dead_time=20e-9, seed=3
    )
    stream = run_continuous(cfg)
    probs = probabilities_from_counts(bin_counts_continuous(stream, cfg.bin_tau_ps, cfg.duration_ps))
    sigma = math.sqrt(variance_d_multinomial(probs, cfg.duration_ps // cfg.bin_tau_ps))
    assert probs.d > 4 * sigma


def test_continuous_rate_calibration():
    layout = sample_crystal(275, REFERENCE_SPACING_UM, 0)
    rate = calibrate_emission_rate(layout, REFERENCE_MODEL, 36900.0, dead_time=50e-9)
    cfg = ContinuousConfig(layout, REFERENCE_MODEL, rate, duration=1.0, bin_tau=1e-7, dead_time=50e-9, seed=4)
    stream = run_continuous(cfg)
    r1 = np.count_nonzero(stream.channels == 1) / cfg.duration
    r2 = np.count_nonzero(stream.channels == 2) / cfg.duration
    assert r1 == pytest.approx(36900, rel=0.05)
    assert r2 == pytest.approx(31500, rel=0.05)
    assert stream.is_ordered()


def test_continuous_deterministic():
    layout, model = _single_ion()
    cfg = ContinuousConfig(layout, model, rate_per_ion=1e6, duration=1e-3, bin_tau=1e-9, seed=9)
    assert run_continuous(cfg) == run_continuous(cfg)


def test_analytic_agrees_with_ensemble_mc_at_reference_point():
    layout = sample_crystal(275, REFERENCE_SPACING_UM, 0)
    cfg = PulsedConfig(layout, REFERENCE_MODEL, eta_p=0.71, n_pulses=10**6, seed=0)
    etas = cfg.efficiencies() * 0.71
    d = analytic_witness(etas, 0.5, REFERENCE_MODEL.kappa1, REFERENCE_MODEL.kappa2)
    counts = run_pulsed(cfg).counts()
    est = probabilities_from_counts(counts)
    assert abs(est.d - d) < 4 * math.sqrt(variance_d(est.pc, est.ps_excl, est.p00, counts.n_tb))
