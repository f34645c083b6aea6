"""Monte Carlo generation of click data.

Pulsed ensembles, continuously emitting ensembles and classical reference
light (coherent and single-mode thermal).  Every generator is a pure
function of its config, including the seed; long runs are split into
blocks with independent child streams so blocks could be run in parallel
without changing the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .geometry import CrystalLayout
from .optics import DetectionModel, per_ion_efficiencies
from .timetag import BinCounts, TagStream
from .witness import ClickProbabilities

__all__ = [
    "BLOCK",
    "ClickBins",
    "PulsedConfig",
    "ContinuousConfig",
    "ClassicalConfig",
    "simulate_emitters",
    "run_pulsed",
    "run_continuous",
    "calibrate_emission_rate",
    "run_classical",
    "classical_clicks",
    "closed_form_classical",
    "closed_form_witness",
    "mean_photon_number",
]

# pulses (or bins) per independently seeded block
BLOCK = 1 << 22

PS_PER_S = 10**12


def _sorted_unique(parts: list[np.ndarray]) -> np.ndarray:
    if not parts:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(parts).astype(np.int64, copy=False))


@dataclass(frozen=True, eq=False)
class ClickBins:
    """Indices of the bins in which each detector clicked.

    A compact, exact representation of a binary click record: bins not
    listed are silent for that detector.
    """

    n_bins: int
    clicks1: np.ndarray
    clicks2: np.ndarray
    n_emitted: int | None = None

    def counts(self, start: int = 0, stop: int | None = None) -> BinCounts:
        """Tallies over bins ``[start, stop)``."""
        stop = self.n_bins if stop is None else stop
        c1 = self.clicks1[np.searchsorted(self.clicks1, start) : np.searchsorted(self.clicks1, stop)]
        c2 = self.clicks2[np.searchsorted(self.clicks2, start) : np.searchsorted(self.clicks2, stop)]
        n_c = np.intersect1d(c1, c2, assume_unique=True).size
        return BinCounts(stop - start, c1.size - n_c, c2.size - n_c, n_c)

    def chunk_counts(self, n_chunks: int) -> list[BinCounts]:
        """Tallies of ``n_chunks`` contiguous, (nearly) equal-length parts."""
        edges = np.linspace(0, self.n_bins, n_chunks + 1).round().astype(np.int64)
        return [self.counts(a, b) for a, b in zip(edges[:-1], edges[1:])]

    def union(self, other: "ClickBins") -> "ClickBins":
        """Bin-wise OR of two independent click records of equal length."""
        if other.n_bins != self.n_bins:
            raise ValueError("click records cover different numbers of bins")
        return ClickBins(
            self.n_bins,
            np.union1d(self.clicks1, other.clicks1),
            np.union1d(self.clicks2, other.clicks2),
        )

    def to_stream(
        self,
        period_ps: int,
        window_ps: tuple[int, int] | None = None,
        seed: int | None = 0,
    ) -> TagStream:
        """Time tags: one record per click, uniformly placed in ``window_ps``.

        ``window_ps`` is the ``[start, stop)`` phase range inside each bin
        and defaults to the whole period.
        """
        lo, hi = window_ps if window_ps is not None else (0, period_ps)
        rng = np.random.default_rng(seed)
        idx = np.concatenate([self.clicks1, self.clicks2]).astype(np.uint64)
        ch = np.concatenate(
            [np.ones(self.clicks1.size, np.uint8), np.full(self.clicks2.size, 2, np.uint8)]
        )
        t = idx * np.uint64(period_ps) + rng.integers(lo, hi, size=idx.size, dtype=np.uint64)
        order = np.argsort(t, kind="stable")
        return TagStream(ch[order], t[order])


def _distinct(rng: np.random.Generator, population: int, k: int) -> np.ndarray:
    """``k`` distinct indices below ``population`` in random order."""
    if k >= population:
        return rng.permutation(population)
    return rng.choice(population, size=k, replace=False)


def _emitter_block(
    rng: np.random.Generator,
    n_bins: int,
    etas: np.ndarray,
    shares: tuple[float, float],
    eta_p: float,
    dark_prob: float,
) -> tuple[np.ndarray, np.ndarray, int]:
    s1, s2 = shares
    emitted = rng.binomial(n_bins, eta_p, size=etas.size)
    detected = rng.binomial(emitted, np.clip(etas * (s1 + s2), 0.0, 1.0))
    to_first = rng.binomial(detected, s1 / (s1 + s2) if s1 + s2 > 0 else 0.0)
    first, second = [], []
    for i in np.flatnonzero(detected):
        # by exchangeability the detected pulses are a uniform random subset
        pulses = _distinct(rng, n_bins, int(detected[i]))
        first.append(pulses[: to_first[i]])
        second.append(pulses[to_first[i] :])
    if dark_prob:
        for sink in (first, second):
            sink.append(_distinct(rng, n_bins, int(rng.binomial(n_bins, dark_prob))))
    return _sorted_unique(first), _sorted_unique(second), int(emitted.sum())


def simulate_emitters(
    etas,
    n_pulses: int,
    seed: int,
    shares: tuple[float, float] = (0.5, 0.5),
    eta_p: float = 1.0,
    dark_prob: float = 0.0,
    block: int = BLOCK,
) -> ClickBins:
    """Pulsed click record for independent single-photon emitters.

    Per pulse each emitter is prepared with probability ``eta_p`` and then
    emits one photon, detected by detector 1 with probability
    ``eta_i * shares[0]`` or detector 2 with ``eta_i * shares[1]``.
    """
    etas = np.asarray(etas, dtype=float).ravel()
    if n_pulses < 1:
        raise ValueError("need at least one pulse")
    if not 0 <= eta_p <= 1:
        raise ValueError(f"eta_p must be in [0, 1], got {eta_p}")
    if etas.size and (etas.min() < 0 or etas.max() * sum(shares) > 1):
        raise ValueError("detection probabilities out of range")
    n_blocks = -(-n_pulses // block)
    children = np.random.SeedSequence(seed).spawn(n_blocks)
    c1, c2, emitted = [], [], 0
    for b, child in enumerate(children):
        start = b * block
        size = min(block, n_pulses - start)
        rng = np.random.default_rng(child)
        f, s, e = _emitter_block(rng, size, etas, shares, eta_p, dark_prob)
        c1.append(f + start)
        c2.append(s + start)
        emitted += e
    return ClickBins(n_pulses, np.concatenate(c1), np.concatenate(c2), emitted)


@dataclass(frozen=True)
class PulsedConfig:
    layout: CrystalLayout
    model: DetectionModel
    eta_p: float = 1.0
    n_pulses: int = 10**6
    seed: int = 0
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not 0 <= self.eta_p <= 1:
            raise ValueError(f"eta_p must be in [0, 1], got {self.eta_p}")
        if self.n_pulses < 1:
            raise ValueError("need at least one pulse")

    def efficiencies(self) -> np.ndarray:
        return per_ion_efficiencies(self.model, self.layout, self.axis)


def mean_photon_number(n_ions: int, eta_p: float) -> float:
    """Mean number of photons emitted per pulse by the whole ensemble."""
    return n_ions * eta_p


def run_pulsed(config: PulsedConfig) -> ClickBins:
    return simulate_emitters(
        config.efficiencies(),
        config.n_pulses,
        config.seed,
        shares=config.model.detector_shares,
        eta_p=config.eta_p,
        dark_prob=config.model.dark_prob,
    )


@dataclass(frozen=True)
class ContinuousConfig:
    """Continuously driven ensemble; times in seconds.

    Each ion re-emits after an exponential wait at ``rate_per_ion`` that
    starts only once ``dead_time`` has elapsed since its previous photon.
    """

    layout: CrystalLayout
    model: DetectionModel
    rate_per_ion: float
    duration: float
    bin_tau: float
    dead_time: float = 0.0
    seed: int = 0
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.rate_per_ion < 0 or self.dead_time < 0:
            raise ValueError("rates and dead time must be non-negative")
        if not (self.duration > 0 and self.bin_tau > 0):
            raise ValueError("duration and bin width must be positive")

    @property
    def duration_ps(self) -> int:
        return round(self.duration * PS_PER_S)

    @property
    def bin_tau_ps(self) -> int:
        return round(self.bin_tau * PS_PER_S)


def _detected_renewal(
    rng: np.random.Generator, rate: float, dead: float, q: float, duration: float
) -> np.ndarray:
    """Detection times of one ion: every emission is kept with probability q.

    Between kept emissions lie G ~ Geometric(q) emission intervals, so the
    gap is G*dead plus a Gamma(G, 1/rate) waiting time.  The first emission
    has no preceding dead time.
    """
    if rate <= 0 or q <= 0:
        return np.empty(0)
    mean_gap = (dead + 1 / rate) / q
    times = []
    t = 0.0
    first = True
    while t < duration:
        n = max(16, int(1.2 * (duration - t) / mean_gap) + 16)
        g = rng.geometric(q, size=n)
        gaps = rng.gamma(g, 1 / rate) + g * dead
        if first:
            gaps[0] -= dead
            first = False
        cum = t + np.cumsum(gaps)
        times.append(cum[cum < duration])
        t = cum[-1]
    return np.concatenate(times)


def run_continuous(config: ContinuousConfig) -> TagStream:
    """Time-tag stream of the ensemble plus optional dark clicks."""
    etas = per_ion_efficiencies(config.model, config.layout, config.axis)
    s1, s2 = config.model.detector_shares
    children = np.random.SeedSequence(config.seed).spawn(etas.size + 2)
    times, chans = [], []
    for eta, child in zip(etas, children):
        rng = np.random.default_rng(child)
        t = _detected_renewal(
            rng, config.rate_per_ion, config.dead_time, eta * (s1 + s2), config.duration
        )
        ch = np.where(rng.random(t.size) < s1 / (s1 + s2), 1, 2).astype(np.uint8)
        times.append(t)
        chans.append(ch)
    dark_rate = config.model.dark_prob / config.bin_tau
    for ch, child in zip((1, 2), children[-2:]):
        rng = np.random.default_rng(child)
        k = rng.poisson(dark_rate * config.duration) if dark_rate else 0
        times.append(rng.uniform(0, config.duration, size=k))
        chans.append(np.full(k, ch, np.uint8))
    t = np.concatenate(times) if times else np.empty(0)
    ch = np.concatenate(chans) if chans else np.empty(0, np.uint8)
    t_ps = np.floor(t * PS_PER_S).astype(np.uint64)
    order = np.argsort(t_ps, kind="stable")
    return TagStream(ch[order], t_ps[order])


def calibrate_emission_rate(
    layout: CrystalLayout,
    model: DetectionModel,
    detector1_rate: float,
    dead_time: float = 0.0,
    axis=(0.0, 0.0, 1.0),
) -> float:
    """Per-ion excitation rate giving ``detector1_rate`` counts/s on detector 1."""
    etas = per_ion_efficiencies(model, layout, axis)
    s1, _ = model.detector_shares
    # a renewal with dead time D emits rate / (1 + rate * D) photons per second
    emitted = detector1_rate / (s1 * etas.sum())
    if emitted * dead_time >= 1:
        raise ValueError("requested count rate exceeds the dead-time limit")
    return emitted / (1 - emitted * dead_time)


@dataclass(frozen=True)
class ClassicalConfig:
    kind: Literal["coherent", "thermal"]
    mu: float
    n_bins: int
    split_T: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("coherent", "thermal"):
            raise ValueError(f"unknown light kind {self.kind!r}")
        if self.mu < 0:
            raise ValueError(f"mean photon number must be non-negative, got {self.mu}")
        if self.n_bins < 1:
            raise ValueError("need at least one bin")
        if not 0 < self.split_T < 1:
            raise ValueError("split_T must be in (0, 1)")


def _coherent_block(rng, size, mu, T):
    out = []
    for mu_k in (mu * T, mu * (1 - T)):
        # detector k clicks independently with probability 1 - exp(-mu_k)
        k = rng.binomial(size, -math.expm1(-mu_k))
        out.append(np.sort(_distinct(rng, size, int(k))))
    return out


def _thermal_block(rng, size, mu, T):
    photons = rng.geometric(1 / (1 + mu), size=size) - 1
    first = rng.binomial(photons, T)
    return np.flatnonzero(first > 0), np.flatnonzero(photons - first > 0)


def classical_clicks(config: ClassicalConfig, block: int = BLOCK) -> ClickBins:
    """Per-bin binary clicks for coherent or single-mode thermal light."""
    n_blocks = -(-config.n_bins // block)
    children = np.random.SeedSequence(config.seed).spawn(n_blocks)
    sampler = _coherent_block if config.kind == "coherent" else _thermal_block
    c1, c2 = [], []
    for b, child in enumerate(children):
        start = b * block
        size = min(block, config.n_bins - start)
        f, s = sampler(np.random.default_rng(child), size, config.mu, config.split_T)
        c1.append(f.astype(np.int64) + start)
        c2.append(s.astype(np.int64) + start)
    return ClickBins(config.n_bins, np.concatenate(c1), np.concatenate(c2))


def run_classical(config: ClassicalConfig) -> BinCounts:
    return classical_clicks(config).counts()


def closed_form_classical(kind: str, mu: float, split_T: float = 0.5) -> ClickProbabilities:
    """Exact click probabilities of coherent or single-mode thermal light."""
    if mu < 0:
        raise ValueError(f"mean photon number must be non-negative, got {mu}")
    T = split_T
    if kind == "coherent":
        p00 = math.exp(-mu)
        p01 = math.exp(-mu * T)
        p02 = math.exp(-mu * (1 - T))
    elif kind == "thermal":
        # generating function of the geometric distribution: E[s^n] = 1/(1 + mu(1-s))
        p00 = 1 / (1 + mu)
        p01 = 1 / (1 + mu * T)
        p02 = 1 / (1 + mu * (1 - T))
    else:
        raise ValueError(f"unknown light kind {kind!r}")
    return ClickProbabilities(p00=p00, p01=p01, p02=p02, pc=max(0.0, 1 - p01 - p02 + p00))


def closed_form_witness(kind: str, mu: float, split_T: float = 0.5) -> float:
    """d for coherent or thermal light without rounding noise.

    For coherent light ln P01 + ln P02 = ln P00, so d vanishes identically.
    For thermal light (1 + mu T)(1 + mu (1-T)) = (1 + mu)(1 + x) with
    x = mu^2 T (1-T) / (1 + mu), giving d = P00^(1/2) * expm1(-log1p(x)/2).
    """
    if mu < 0:
        raise ValueError(f"mean photon number must be non-negative, got {mu}")
    T = split_T
    if kind == "coherent":
        return 0.0
    if kind == "thermal":
        x = mu * mu * T * (1 - T) / (1 + mu)
        return math.expm1(-0.5 * math.log1p(x)) / math.sqrt(1 + mu)
    raise ValueError(f"unknown light kind {kind!r}")
