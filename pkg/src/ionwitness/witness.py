"""The witness d = P0 - sqrt(P00) and the criteria equivalent to it.

P00 is the probability that neither detector clicks in a time bin and P0
the (geometric-mean) probability that a given detector stays silent.  Any
mixture of coherent states has d <= 0, so d > 0 certifies nonclassical
light.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .timetag import BinCounts

__all__ = [
    "ClickProbabilities",
    "WitnessReport",
    "probabilities_from_counts",
    "probabilities_from_parts",
    "witness_distance",
    "classical_bound",
    "functional_check",
    "optimal_functional_parameter",
    "functional_violation_exists",
    "asymmetric_product_check",
    "asymmetric_conditions",
    "analytic_probs",
    "analytic_witness",
    "ratio_criterion",
    "g2_estimate",
    "witness_report",
]

_SUM_TOL = 1e-12
_CONSISTENCY_TOL = 1e-9


@dataclass(frozen=True)
class ClickProbabilities:
    """Per-bin click pattern probabilities for two binary detectors.

    ``ps_excl`` is the probability that exactly one detector clicks and
    ``ps_marg1``/``ps_marg2`` the probability that a given detector clicks
    regardless of the other.
    """

    p00: float
    p01: float
    p02: float
    pc: float

    def __post_init__(self):
        for name in ("p00", "p01", "p02", "pc"):
            value = getattr(self, name)
            if not -_SUM_TOL <= value <= 1 + _SUM_TOL:
                raise ValueError(f"{name}={value} is not a probability")
        if self.p00 > min(self.p01, self.p02) + _SUM_TOL:
            raise ValueError("P00 cannot exceed either single-detector silence probability")
        if not -_SUM_TOL <= self.ps_excl <= 1 + _SUM_TOL:
            raise ValueError("click probabilities do not sum to one")
        if abs(1 - self.p01 - self.p02 + self.p00 - self.pc) > _CONSISTENCY_TOL:
            raise ValueError("Pc is inconsistent with P00, P01 and P02")

    @property
    def p0(self) -> float:
        return math.sqrt(self.p01 * self.p02)

    @property
    def ps_excl(self) -> float:
        return 1.0 - self.p00 - self.pc

    @property
    def ps1_excl(self) -> float:
        """Probability that only detector 1 clicks."""
        return self.p02 - self.p00

    @property
    def ps2_excl(self) -> float:
        return self.p01 - self.p00

    @property
    def ps_marg1(self) -> float:
        return 1.0 - self.p01

    @property
    def ps_marg2(self) -> float:
        return 1.0 - self.p02

    @property
    def d(self) -> float:
        return witness_distance(self.p0, self.p00)

    def to_dict(self) -> dict[str, float]:
        out = asdict(self)
        out.update(
            p0=self.p0,
            ps_excl=self.ps_excl,
            ps_marg1=self.ps_marg1,
            ps_marg2=self.ps_marg2,
            d=self.d,
        )
        return out


def probabilities_from_parts(p00: float, ps1: float, ps2: float, pc: float) -> ClickProbabilities:
    """Build from the four exclusive outcome probabilities."""
    return ClickProbabilities(p00=p00, p01=p00 + ps2, p02=p00 + ps1, pc=pc)


def probabilities_from_counts(counts: BinCounts) -> ClickProbabilities:
    """Relative frequencies of the click patterns in ``counts``."""
    if counts.n_tb <= 0:
        raise ValueError("empty measurement: no time bins")
    n = counts.n_tb
    return ClickProbabilities(
        p00=counts.n_silent / n,
        p01=(n - counts.n_s1 - counts.n_c) / n,
        p02=(n - counts.n_s2 - counts.n_c) / n,
        pc=counts.n_c / n,
    )


def witness_distance(p0, p00):
    """d = p0 - sqrt(p00); positive values witness nonclassical light."""
    return p0 - np.sqrt(p00) if isinstance(p0, np.ndarray) else p0 - math.sqrt(p00)


def classical_bound(a: float) -> float:
    """Maximum of P0 + a*P00 over classical light, for a < 0."""
    if a == 0:
        raise ValueError("functional parameter a must be non-zero")
    return -1.0 / (4.0 * a)


def functional_check(a: float, p0: float, p00: float) -> bool:
    """True when P0 + a*P00 exceeds the classical bound -1/(4a)."""
    if a == 0:
        raise ValueError("functional parameter a must be non-zero")
    if a > 0:
        raise ValueError("the classical bound is only meaningful for a < 0")
    return p0 + a * p00 > classical_bound(a)


def optimal_functional_parameter(p00: float) -> float:
    """The a < 0 that maximises P0 + a*P00 + 1/(4a); -inf when P00 = 0."""
    if p00 <= 0:
        return -math.inf
    return -0.5 / math.sqrt(p00)


def functional_violation_exists(p0: float, p00: float) -> bool:
    """Whether some a < 0 makes the linear functional beat its classical bound.

    The margin P0 + a*P00 + 1/(4a) is concave in a on a < 0 and peaks at
    ``optimal_functional_parameter``; for P00 = 0 it tends to P0 as a -> -inf.
    """
    a = optimal_functional_parameter(p00)
    if math.isinf(a):
        return p0 > 0
    return functional_check(a, p0, p00)


def asymmetric_conditions(p01: float, p02: float, p00: float, T: float) -> tuple[bool, bool]:
    """The pair of nonclassicality conditions for a detector imbalance ``T``."""
    return p01 > p00**T, p02 > p00 ** (1 - T)


def asymmetric_product_check(p01: float, p02: float, p00: float) -> bool:
    """P01 * P02 > P00, which implies one of the imbalance conditions for any T."""
    return p01 * p02 > p00


def _log_silence(etas: np.ndarray, share: float) -> float:
    with np.errstate(divide="ignore"):
        return math.fsum(np.log1p(-etas * share))


def _check_shares(etas: np.ndarray, s1: float, s2: float) -> None:
    if etas.size and (etas.min() < 0 or etas.max() * (s1 + s2) > 1):
        raise ValueError("per-detector efficiencies must lie in [0, 1] and sum to at most 1")


def analytic_probs(
    etas,
    split_T: float = 0.5,
    kappa1: float = 1.0,
    kappa2: float = 1.0,
    dark_prob: float = 0.0,
) -> ClickProbabilities:
    """Exact click probabilities for independent single-photon emitters.

    Emitter ``i`` yields at most one photon, detected by detector 1 with
    probability ``eta_i*T*kappa1`` and by detector 2 with
    ``eta_i*(1-T)*kappa2``.  Products are accumulated as sums of logs.
    """
    etas = np.asarray(etas, dtype=float).ravel()
    s1, s2 = split_T * kappa1, (1 - split_T) * kappa2
    _check_shares(etas, s1, s2)
    log01 = _log_silence(etas, s1)
    log02 = _log_silence(etas, s2)
    log00 = _log_silence(etas, s1 + s2)
    if dark_prob:
        quiet = math.log1p(-dark_prob)
        log01 += quiet
        log02 += quiet
        log00 += 2 * quiet
    p00, p01, p02 = math.exp(log00), math.exp(log01), math.exp(log02)
    pc = max(0.0, 1.0 - p01 - p02 + p00)
    return ClickProbabilities(p00=p00, p01=p01, p02=p02, pc=pc)


def analytic_witness(
    etas,
    split_T: float = 0.5,
    kappa1: float = 1.0,
    kappa2: float = 1.0,
    dark_prob: float = 0.0,
) -> float:
    """d for independent emitters, computed without catastrophic cancellation.

    d = exp(L0) - exp(L00/2) = exp(L00/2) * expm1(L0 - L00/2), where the
    exponent difference is summed term by term.
    """
    etas = np.asarray(etas, dtype=float).ravel()
    s1, s2 = split_T * kappa1, (1 - split_T) * kappa2
    _check_shares(etas, s1, s2)
    with np.errstate(divide="ignore"):
        l1 = np.log1p(-etas * s1)
        l2 = np.log1p(-etas * s2)
        l00 = np.log1p(-etas * (s1 + s2))
    dark = math.log1p(-dark_prob) if dark_prob else 0.0
    if np.isneginf(l00).any():
        # an emitter that is always detected: P00 = 0 and d = P0
        return math.exp(0.5 * math.fsum(l1 + l2) + dark)
    half00 = 0.5 * math.fsum(l00)
    gap = math.fsum(0.5 * (l1 + l2) - 0.5 * l00)
    # dark clicks scale P0 and sqrt(P00) by the same factor
    half00 += dark
    return math.exp(half00) * math.expm1(gap)


def ratio_criterion(ps_marg: float, pc: float) -> float:
    """Pc / Ps^2 with Ps the marginal click probability; < 1 is nonclassical."""
    if ps_marg <= 0:
        raise ValueError("ratio undefined: marginal click probability is zero")
    return pc / ps_marg**2


def g2_estimate(counts: BinCounts | ClickProbabilities) -> float:
    """Binwise normalised coincidence rate Pc / (Ps1 * Ps2)."""
    probs = counts if isinstance(counts, ClickProbabilities) else probabilities_from_counts(counts)
    denom = probs.ps_marg1 * probs.ps_marg2
    if denom <= 0:
        raise ValueError("g2 undefined: a detector never clicked")
    return probs.pc / denom


@dataclass(frozen=True)
class WitnessReport:
    d: float
    var_d: float | None
    sigma_d: float | None
    g2: float | None
    ratio: float | None
    p00: float
    p0: float
    n_bins: int
    chunk_mean: float | None = None
    chunk_sigma: float | None = None

    def nonclassical(self, k: float = 2.0) -> bool:
        """d exceeds ``k`` standard deviations."""
        sigma = self.sigma_d if self.sigma_d is not None else self.chunk_sigma
        if sigma is None:
            return False
        return self.d > k * sigma

    @property
    def nonclassical_2sigma(self) -> bool:
        return self.nonclassical(2.0)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["nonclassical_2sigma"] = self.nonclassical_2sigma
        return out


def witness_report(counts: BinCounts, chunk_d=None) -> WitnessReport:
    """Full analysis of one measurement.

    ``chunk_d`` are witness values of equal-length sub-measurements; their
    spread gives an independent error estimate.
    """
    from . import stats

    probs = probabilities_from_counts(counts)
    try:
        var_d = stats.variance_d(probs.pc, probs.ps_excl, probs.p00, counts.n_tb)
    except ValueError:
        var_d = None
    try:
        g2 = g2_estimate(probs)
    except ValueError:
        g2 = None
    ps_marg = 1.0 - probs.p0
    ratio = probs.pc / ps_marg**2 if ps_marg > 0 else None
    chunk_mean = chunk_sigma = None
    if chunk_d is not None and len(chunk_d) >= 2:
        chunk_mean, chunk_sigma = stats.chunked_error(chunk_d)
    return WitnessReport(
        d=probs.d,
        var_d=var_d,
        sigma_d=None if var_d is None else math.sqrt(var_d),
        g2=g2,
        ratio=ratio,
        p00=probs.p00,
        p0=probs.p0,
        n_bins=counts.n_tb,
        chunk_mean=chunk_mean,
        chunk_sigma=chunk_sigma,
    )
