"""Secret key rate versus distance, loading statistics and baselines."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from maqkd.devices import Scheme, SystemConfig, load_preset
from maqkd.protocols import Conditionals, qber_and_yield_conditionals

MULTIPLEXING_MODES = ("parallel", "linear")


class NoCrossingError(ValueError):
    pass


def binary_entropy(q: float) -> float:
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    if q in (0.0, 1.0):
        return 0.0
    return float(-q * math.log2(q) - (1.0 - q) * math.log2(1.0 - q))


@dataclass(frozen=True)
class LoadingStatistics:
    """Two sides retrying independently with per-round success ``p``.

    ``expected_rounds`` is E[max(N_A, N_B)]; the waiting time between the two
    loadings, Delta = |N_A - N_B|, has ``P(Delta=0) = p/(2-p)`` and
    ``P(Delta=k) = 2p(1-p)^k/(2-p)``.
    """

    p: float
    expected_rounds: float

    def waiting_pmf(self, k):
        k = np.asarray(k)
        p = self.p
        head = p / (2.0 - p)
        tail = 2.0 * p * (1.0 - p) ** k / (2.0 - p)
        return np.where(k == 0, head, tail)

    def waiting_mean(self) -> float:
        p = self.p
        return 2.0 * (1.0 - p) / (p * (2.0 - p))


def loading_statistics(p: float) -> LoadingStatistics:
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    return LoadingStatistics(p, 2.0 / p - 1.0 / (2.0 * p - p * p))


def decay_factor(coherence_time: float, period: float, p: float) -> float:
    """E[exp(-Delta * T / T_r)] over the waiting-time law."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if math.isinf(coherence_time):
        return 1.0
    x = math.exp(-period / coherence_time)
    q = (1.0 - p) * x
    return p / (2.0 - p) * (1.0 + 2.0 * q / (1.0 - q))


@dataclass(frozen=True)
class TimingModel:
    """Fixed overheads: ``tau_w`` to write, ``tau_r`` to read and re-arm."""

    tau_w: float
    tau_r: float
    period: float

    def __post_init__(self):
        if self.tau_w > self.tau_r:
            raise ValueError("tau_w cannot exceed tau_r")
        if self.period <= 0:
            raise ValueError("period must be positive")

    @classmethod
    def from_config(cls, cfg: SystemConfig) -> TimingModel:
        mem = cfg.memory
        tau_w = mem.interaction_time + cfg.side_detector.dead_time
        tau_r = mem.interaction_time + cfg.middle_detector.dead_time + mem.init_time
        return cls(tau_w, max(tau_r, tau_w), cfg.period)


@dataclass(frozen=True)
class RatePoint:
    L: float
    P_SBSM: float
    P_MBSM: float
    Y11: float
    e_X: float
    e_Z: float
    R_per_pulse: float
    R_per_second: float
    expected_rounds: float
    p_side: float
    raw_per_pulse: float
    raw_per_second: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def effective_side_probability(p: float, modes: int, multiplexing: str = "linear") -> float:
    """Per-round loading probability with ``modes`` spectral channels.

    ``parallel``: each round offers ``modes`` independent chances.  ``linear``
    leaves ``p`` unchanged; the mode count then multiplies the final rate.
    """
    if multiplexing not in MULTIPLEXING_MODES:
        raise ValueError(f"multiplexing must be one of {MULTIPLEXING_MODES}")
    if multiplexing == "linear" or modes == 1:
        return p
    return -math.expm1(modes * math.log1p(-p)) if p < 1.0 else 1.0


def read_efficiencies(cfg: SystemConfig, p: float) -> tuple[float, float]:
    """Reading efficiencies of the earlier- and later-loaded memories.

    Both decay during the writing overhead; the earlier one also waits for
    the other side, averaged over the waiting-time law.
    """
    mem = cfg.memory
    timing = TimingModel.from_config(cfg)
    base = mem.read_efficiency
    if not math.isinf(mem.coherence_time):
        base *= math.exp(-timing.tau_w / mem.coherence_time)
    return base * decay_factor(mem.coherence_time, cfg.period, p), base


def secret_fraction(cond: Conditionals, f: float) -> float:
    return 1.0 - binary_entropy(cond.e_x) - f * binary_entropy(cond.e_z)


def secret_key_rate(cfg: SystemConfig, length: float, multiplexing: str = "linear") -> RatePoint:
    if cfg.scheme is Scheme.NO_MEMORY:
        return no_memory_point(cfg, length)
    side = qber_and_yield_conditionals(cfg, length)
    modes = cfg.memory.spectral_modes
    p = effective_side_probability(side.p_side, modes, multiplexing)
    if p <= 0.0:
        return RatePoint(length, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, math.inf, 0.0, 0.0, 0.0)
    stats = loading_statistics(p)
    cond = qber_and_yield_conditionals(cfg, length, read_efficiencies(cfg, p))
    timing = TimingModel.from_config(cfg)
    p_sbsm = 1.0 / stats.expected_rounds
    y11 = p_sbsm * cond.p_mbsm
    frac = secret_fraction(cond, cfg.error_correction_inefficiency)
    raw_pulse = y11 * frac
    scale = modes if multiplexing == "linear" else 1
    raw_second = scale * cond.p_mbsm * frac / (stats.expected_rounds * timing.period + timing.tau_w + timing.tau_r)
    return RatePoint(
        L=length,
        P_SBSM=p_sbsm,
        P_MBSM=float(cond.p_mbsm),
        Y11=y11,
        e_X=float(cond.e_x),
        e_Z=float(cond.e_z),
        R_per_pulse=max(0.0, raw_pulse),
        R_per_second=max(0.0, raw_second),
        expected_rounds=stats.expected_rounds,
        p_side=p,
        raw_per_pulse=raw_pulse,
        raw_per_second=raw_second,
    )


def no_memory_point(cfg: SystemConfig, length: float) -> RatePoint:
    cond = qber_and_yield_conditionals(cfg, length)
    frac = secret_fraction(cond, cfg.error_correction_inefficiency)
    raw_pulse = cond.p_mbsm * frac
    return RatePoint(
        L=length,
        P_SBSM=1.0,
        P_MBSM=float(cond.p_mbsm),
        Y11=float(cond.p_mbsm),
        e_X=float(cond.e_x),
        e_Z=float(cond.e_z),
        R_per_pulse=max(0.0, raw_pulse),
        R_per_second=max(0.0, raw_pulse) * cfg.repetition_rate,
        expected_rounds=1.0,
        p_side=1.0,
        raw_per_pulse=raw_pulse,
        raw_per_second=raw_pulse * cfg.repetition_rate,
    )


def plob_bound(length: float, attenuation_length: float = 17.3) -> float:
    """Repeaterless capacity ``-log2(1 - eta)`` of a pure-loss channel, bits per pulse."""
    eta = math.exp(-length / attenuation_length)
    if eta >= 1.0:
        return math.inf
    return -math.log1p(-eta) / math.log(2.0)


def no_memory_rate(length: float, cfg: SystemConfig | None = None) -> float:
    """Bits per second of the memoryless baseline."""
    cfg = load_preset("no-memory-baseline") if cfg is None else cfg
    return no_memory_point(cfg, length).R_per_second


def asymptotic_yields(
    scheme: Scheme | str,
    eta: float,
    length,
    attenuation_length: float = 17.3,
    anchor: tuple[float, float] | None = None,
):
    """Large-distance shape of Y11, optionally scaled to pass through ``anchor = (L0, Y0)``.

    NLA: ``(1 - eta)^2 exp(-L/L_att)``.  Quasi-EPR: ``exp(-L/(2 L_att))``.
    """
    scheme = Scheme(scheme)

    def shape(L):
        L = np.asarray(L, dtype=float)
        if scheme is Scheme.NLA:
            return (1.0 - eta) ** 2 * np.exp(-L / attenuation_length)
        if scheme is Scheme.QUASI_EPR:
            return np.exp(-L / (2.0 * attenuation_length))
        raise ValueError("asymptotic yields are defined for NLA and QuasiEPR only")

    values = shape(length)
    if anchor is not None:
        ref = shape(anchor[0])
        if ref == 0:
            raise ValueError("anchor lies where the asymptotic form vanishes")
        values = values * anchor[1] / ref
    return values if np.ndim(values) else float(values)


def crossover_distance(
    rate_a: Callable[[float], float],
    rate_b: Callable[[float], float],
    L_range: tuple[float, float],
    steps: int = 60,
    tol: float = 0.5,
) -> float:
    """First distance where ``rate_a - rate_b`` changes sign, to within ``tol`` km."""
    lo, hi = L_range
    if not lo < hi:
        raise ValueError("empty distance range")
    grid = np.linspace(lo, hi, steps + 1)
    diff = [rate_a(L) - rate_b(L) for L in grid]
    for k in range(steps):
        if diff[k] == 0.0 and diff[k + 1] == 0.0:
            continue
        if np.sign(diff[k]) != np.sign(diff[k + 1]):
            a, b, fa = grid[k], grid[k + 1], diff[k]
            while b - a > 2 * tol:
                mid = 0.5 * (a + b)
                fm = rate_a(mid) - rate_b(mid)
                if np.sign(fm) == np.sign(fa):
                    a, fa = mid, fm
                else:
                    b = mid
            return 0.5 * (a + b)
    raise NoCrossingError(f"no crossing in [{lo}, {hi}] km")


def best_nla_reflectivity(cfg: SystemConfig, length: float, grid=None, per: str = "pulse") -> tuple[float, RatePoint]:
    """Grid search over the NLA splitting ratio; no optimality claim beyond the grid."""
    if cfg.scheme is not Scheme.NLA:
        raise ValueError("best_nla_reflectivity needs the NLA scheme")
    grid = np.linspace(0.05, 0.5, 10) if grid is None else grid
    best = None
    for eta in grid:
        point = secret_key_rate(dataclasses.replace(cfg, nla_reflectivity=float(eta)), length)
        value = point.R_per_pulse if per == "pulse" else point.R_per_second
        if best is None or value > best[2]:
            best = (float(eta), point, value)
    return best[0], best[1]
