"""Independent reference computations.

:func:`exact_enumerate` propagates pure states as sparse amplitude tables
(one row of occupation numbers per basis ket).  Every loss is a beam splitter
onto an explicit environment mode that is kept until the end, and the
probabilities of all detector patterns are read off the final amplitudes.
Nothing here reuses the density-matrix engine.

:func:`sample_timing` draws loading times by Monte Carlo.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from maqkd.devices import Scheme, SystemConfig, arm_transmissivity
from maqkd.protocols import BB84Input, Basis

MAX_PHOTONS = 6
RNG_NAME = "numpy.random.PCG64"


class BudgetError(ValueError):
    pass


@lru_cache(maxsize=None)
def _bs_coefficients(n_i: int, n_j: int, r: float) -> tuple:
    """Expand ``(a^+)^{n_i} (b^+)^{n_j} |0>`` after the splitter, normalized kets.

    Uses a^+ -> sqrt(1-r) a^+ + sqrt(r) b^+ and b^+ -> sqrt(r) a^+ - sqrt(1-r) b^+.
    Returns ``((k, amplitude), ...)`` with ``k`` photons left in mode i.
    """
    t, s = math.sqrt(1.0 - r), math.sqrt(r)
    n = n_i + n_j
    poly = [0.0] * (n + 1)  # coefficient of (a^+)^k (b^+)^(n-k)
    for p in range(n_i + 1):
        cp = math.comb(n_i, p) * t**p * s ** (n_i - p)
        for q in range(n_j + 1):
            cq = math.comb(n_j, q) * s**q * (-t) ** (n_j - q)
            poly[p + q] += cp * cq
    norm = math.sqrt(math.factorial(n_i) * math.factorial(n_j))
    out = []
    for k in range(n + 1):
        amp = poly[k] * math.sqrt(math.factorial(k) * math.factorial(n - k)) / norm
        if amp != 0.0:
            out.append((k, amp))
    return tuple(out)


@dataclass
class Amplitudes:
    """Pure state as rows of occupations with complex amplitudes."""

    occ: np.ndarray
    amp: np.ndarray

    @classmethod
    def single(cls, occupation, amplitude=1.0) -> Amplitudes:
        return cls(np.array([occupation], dtype=np.int64), np.array([amplitude], dtype=complex))

    @classmethod
    def superpose(cls, terms: dict) -> Amplitudes:
        occ = np.array(list(terms.keys()), dtype=np.int64)
        amp = np.array(list(terms.values()), dtype=complex)
        return cls(occ, amp).merged()

    def norm2(self) -> float:
        return float(np.sum(np.abs(self.amp) ** 2))

    def merged(self) -> Amplitudes:
        if len(self.occ) == 0:
            return self
        uniq, inverse = np.unique(self.occ, axis=0, return_inverse=True)
        amp = np.zeros(len(uniq), dtype=complex)
        np.add.at(amp, inverse.ravel(), self.amp)
        keep = amp != 0
        return Amplitudes(uniq[keep], amp[keep])

    def add_modes(self, count: int) -> Amplitudes:
        pad = np.zeros((len(self.occ), count), dtype=np.int64)
        return Amplitudes(np.hstack([self.occ, pad]), self.amp)

    def splitter(self, i: int, j: int, r: float) -> Amplitudes:
        rows, amps = [], []
        pairs = self.occ[:, [i, j]]
        for (n_i, n_j) in {tuple(p) for p in pairs}:
            sel = np.flatnonzero((pairs[:, 0] == n_i) & (pairs[:, 1] == n_j))
            base = self.occ[sel]
            for k, c in _bs_coefficients(int(n_i), int(n_j), float(r)):
                new = base.copy()
                new[:, i] = k
                new[:, j] = n_i + n_j - k
                rows.append(new)
                amps.append(self.amp[sel] * c)
        return Amplitudes(np.vstack(rows), np.concatenate(amps)).merged()

    def lose(self, mode: int, env: int, transmissivity: float) -> Amplitudes:
        """Loss as a splitter onto a vacuum environment mode that stays in the state."""
        if transmissivity == 1.0:
            return self
        return self.splitter(mode, env, 1.0 - transmissivity)


def _dual_rail(inp: BB84Input) -> dict:
    if inp.basis is Basis.Z:
        return {(1, 0): 1.0} if inp.bit == 0 else {(0, 1): 1.0}
    s = 1.0 / math.sqrt(2.0)
    return {(1, 0): s, (0, 1): s if inp.bit == 0 else -s}


def _emission(cfg: SystemConfig) -> dict:
    src = cfg.source
    return {n: w for n, w in {0: 1 - src.efficiency, 1: src.efficiency * src.p1, 2: src.efficiency * src.p2}.items() if w > 0}


# one side: U1 U2 P1 P2 A1 A2, then environment modes for each of them
_N_SIDE = 12


def _side_amplitudes(cfg: SystemConfig, inp: BB84Input, n1: int, n2: int, length: float, read: float) -> Amplitudes:
    terms = {}
    for (u1, u2), a in _dual_rail(inp).items():
        occ = [u1, u2, 0, 0, 0, 0]
        if cfg.scheme is Scheme.QUASI_EPR:
            occ[2], occ[3] = n1, n2
        else:
            occ[4], occ[5] = n1, n2
        terms[tuple(occ)] = a
    st = Amplitudes.superpose(terms).add_modes(6)
    if cfg.scheme is Scheme.QUASI_EPR:
        st = st.splitter(2, 3, 0.5).splitter(2, 4, 0.5).splitter(3, 5, 0.5)
    else:
        eta = cfg.nla_reflectivity
        st = st.splitter(4, 2, eta).splitter(5, 3, eta)
    # uniform detector loss commutes with the 50:50 splitters, so it is
    # moved in front of them and folded into the arm losses
    eta_d = cfg.side_detector.efficiency
    t = arm_transmissivity(cfg.channel, length)
    fc = cfg.converter.efficiency
    mem = cfg.memory.write_efficiency * cfg.memory.coupling_efficiency * read * cfg.middle_detector.efficiency
    losses = (t * eta_d, t * eta_d, fc * eta_d, fc * (1 - cfg.mode_mismatch) * eta_d, mem, mem)
    for mode, tr in enumerate(losses):
        st = st.lose(mode, 6 + mode, tr)
    return st.splitter(0, 2, 0.5).splitter(1, 3, 0.5)


def _click_table(counts: np.ndarray, dark: float) -> np.ndarray:
    """P(pattern | photon counts) for ideal-efficiency detectors with dark counts.

    ``counts`` has shape (rows, 4); returns (16, rows) with pattern bits
    ordered c1 d1 c2 d2, c1 most significant.
    """
    lit = counts > 0
    out = np.ones((16, len(counts)))
    for idx, bits in enumerate(itertools.product((0, 1), repeat=4)):
        for k, b in enumerate(bits):
            p_click = np.where(lit[:, k], 1.0, dark)
            out[idx] *= p_click if b else 1.0 - p_click
    return out


def _group(st: Amplitudes, memory_cols, spectator_cols):
    """Reshape amplitudes into a (spectator, memory) matrix."""
    mem_keys, mem_idx = np.unique(st.occ[:, memory_cols], axis=0, return_inverse=True)
    spec_keys, spec_idx = np.unique(st.occ[:, spectator_cols], axis=0, return_inverse=True)
    mat = np.zeros((len(spec_keys), len(mem_keys)), dtype=complex)
    mat[spec_idx.ravel(), mem_idx.ravel()] = st.amp
    return mat, spec_keys, mem_keys


def _middle_map(mem_a: np.ndarray, mem_b: np.ndarray):
    """Middle splitters applied to every product ket of the two memory bases."""
    outs, columns = [], []
    for ia, a in enumerate(mem_a):
        for ib, b in enumerate(mem_b):
            st = Amplitudes.single((a[0], a[1], b[0], b[1]))
            st = st.splitter(0, 2, 0.5).splitter(1, 3, 0.5)
            outs.append(st)
            columns.append((ia, ib))
    keys = np.unique(np.vstack([s.occ for s in outs]), axis=0)
    lookup = {tuple(k): n for n, k in enumerate(keys)}
    m = np.zeros((len(keys), len(mem_a), len(mem_b)), dtype=complex)
    for st, (ia, ib) in zip(outs, columns):
        for row, amp in zip(st.occ, st.amp):
            m[lookup[tuple(row)], ia, ib] += amp
    return m, keys


def exact_enumerate(
    cfg: SystemConfig,
    length: float,
    inputs: tuple[BB84Input, BB84Input],
    read_efficiency: float | None = None,
) -> np.ndarray:
    """Probabilities of all 4096 joint outcomes for one pair of BB84 inputs.

    Index bits, most significant first: side A (c1 d1 c2 d2), side B
    (c1 d1 c2 d2), middle (c1 d1 c2 d2).  In the middle, port c takes
    Alice's memory and port d Bob's.  Memories are read with
    ``read_efficiency`` (default: the undecayed value), and no Pauli
    correction is applied.
    """
    if cfg.scheme is Scheme.NO_MEMORY:
        raise ValueError("exact_enumerate covers the memory-assisted schemes")
    read = cfg.memory.read_efficiency if read_efficiency is None else read_efficiency
    emission = _emission(cfg)
    d_side = cfg.side_detector_model().dark_prob
    d_mid = cfg.middle_detector_model().dark_prob
    spectator = [0, 2, 1, 3] + list(range(6, _N_SIDE))
    total = np.zeros((16, 16, 16))
    sides = {}
    for who, inp in zip("AB", inputs):
        for (n1, w1), (n2, w2) in itertools.product(emission.items(), emission.items()):
            photons = n1 + n2 + 1
            if photons > MAX_PHOTONS:
                raise BudgetError(f"{photons} photons on one side exceed the budget of {MAX_PHOTONS}")
            st = _side_amplitudes(cfg, inp, n1, n2, length, read)
            mat, spec, mem = _group(st, [4, 5], spectator)
            clicks = _click_table(spec[:, :4], d_side)
            sides.setdefault(who, []).append((w1 * w2, photons, mat, clicks, mem))
    for (wa, na, mat_a, clk_a, mem_a), (wb, nb, mat_b, clk_b, mem_b) in itertools.product(sides["A"], sides["B"]):
        m, keys = _middle_map(mem_a, mem_b)
        clk_m = _click_table(keys[:, [0, 2, 1, 3]], d_mid)
        # amp[o, i, j] = sum_ab m[o, a, b] A[i, a] B[j, b]
        half = np.einsum("oab,jb->oaj", m, mat_b)
        joint = np.empty((len(keys), 16, 16))
        for o in range(len(keys)):
            prob = np.abs(mat_a @ half[o]) ** 2
            joint[o] = clk_a @ prob @ clk_b.T
        total += wa * wb * np.einsum("opq,ro->pqr", joint, clk_m)
    return total.reshape(-1)


def outcome_index(side_a, side_b, middle) -> int:
    bits = list(side_a) + list(side_b) + list(middle)
    return int("".join("1" if b else "0" for b in bits), 2)


@dataclass(frozen=True)
class TimingEstimate:
    expected_rounds: float
    expected_rounds_stderr: float
    decay_factor: float
    decay_factor_stderr: float
    n_trials: int
    seed: int
    rng: str = RNG_NAME


@dataclass(frozen=True)
class TrialOutcome:
    rounds_a: int
    rounds_b: int

    @property
    def waiting(self) -> int:
        return abs(self.rounds_a - self.rounds_b)


def sample_trials(p: float, n_trials: int, seed: int, workers: int = 1) -> np.ndarray:
    """Loading rounds of both sides, shape (n_trials, 2).

    The master seed is split into ``workers`` independent substreams, each
    filling a contiguous block, so the result does not depend on scheduling.
    """
    children = np.random.SeedSequence(seed).spawn(workers)
    blocks = np.array_split(np.arange(n_trials), workers)
    out = np.empty((n_trials, 2), dtype=np.int64)
    for child, block in zip(children, blocks):
        rng = np.random.Generator(np.random.PCG64(child))
        out[block] = rng.geometric(p, size=(len(block), 2))
    return out


def sample_timing(p: float, period: float, coherence_time: float, n_trials: int = 10**6, seed: int = 0, workers: int = 1) -> TimingEstimate:
    """Monte Carlo estimate of E[max(N_A, N_B)] and E[exp(-|N_A-N_B| T / T_r)]."""
    if n_trials < 10**4:
        raise ValueError("use at least 10^4 trials")
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    rounds = sample_trials(p, n_trials, seed, workers)
    longest = rounds.max(axis=1).astype(float)
    waiting = np.abs(rounds[:, 0] - rounds[:, 1])
    if math.isinf(coherence_time):
        decay = np.ones(n_trials)
    else:
        decay = np.exp(-waiting * period / coherence_time)
    root = math.sqrt(n_trials)
    return TimingEstimate(
        float(longest.mean()),
        float(longest.std(ddof=1) / root),
        float(decay.mean()),
        float(decay.std(ddof=1) / root),
        n_trials,
        seed,
    )
