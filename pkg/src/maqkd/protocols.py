"""Entangling circuits, BB84 encoders and the two Bell-measurement layers.

Mode bookkeeping for one side of the link, in this order:

    U1, U2   the user's dual-rail photon
    P1, P2   source photons sent to the side BSMs
    A1, A2   photons stored in the two memories

Rail ``k`` of the side BSM interferes ``U_k`` with ``P_k`` on a 50:50 beam
splitter.  The output on the ``U_k`` port is called ``c_k`` and the one on the
``P_k`` port ``d_k``.  Click patterns are tuples ``(c1, d1, c2, d2)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from maqkd.devices import (
    Scheme,
    SourceModel,
    SystemConfig,
    arm_transmissivity,
    memory_read_efficiency,
    source_photon_budget,
)
from maqkd.fock import (
    DensityMatrix,
    DetectorModel,
    apply_beam_splitter,
    apply_loss,
    apply_phase,
    diagonal_state,
    measure_threshold,
    pure_state,
    tensor,
)

U1, U2, P1, P2, A1, A2 = range(6)
SIDE_LABELS = ("U1", "U2", "P1", "P2", "A1", "A2")
ALL_PATTERNS = tuple(itertools.product((False, True), repeat=4))
SUCCESS_PATTERNS = tuple(p for p in ALL_PATTERNS if p[0] != p[1] and p[2] != p[3])


class Basis(str, Enum):
    Z = "Z"
    X = "X"


@dataclass(frozen=True)
class BB84Input:
    basis: Basis
    bit: int

    def __post_init__(self):
        object.__setattr__(self, "basis", Basis(self.basis))
        if self.bit not in (0, 1):
            raise ValueError(f"bit must be 0 or 1, got {self.bit}")

    @classmethod
    def all(cls) -> tuple[BB84Input, ...]:
        return tuple(cls(b, k) for b in Basis for k in (0, 1))

    def __str__(self):
        return f"{self.basis.value}{self.bit}"


class BellClass(str, Enum):
    PSI_PLUS = "psi+"
    PSI_MINUS = "psi-"


@dataclass(frozen=True)
class BSMOutcome:
    """Clicks of a two-rail Bell measurement, ordered ``(c1, d1, c2, d2)``."""

    pattern: tuple

    def __post_init__(self):
        object.__setattr__(self, "pattern", tuple(bool(x) for x in self.pattern))
        if len(self.pattern) != 4:
            raise ValueError("a pattern has four detectors")

    @property
    def success(self) -> bool:
        c1, d1, c2, d2 = self.pattern
        return c1 != d1 and c2 != d2

    @property
    def d_clicks(self) -> int:
        return int(self.pattern[1]) + int(self.pattern[3])

    @property
    def bell_class(self) -> BellClass | None:
        """psi+ when both clicks sit on the same kind of port, psi- otherwise."""
        if not self.success:
            return None
        return BellClass.PSI_PLUS if self.pattern[0] == self.pattern[2] else BellClass.PSI_MINUS


def pattern_index(pattern) -> int:
    """Bits ``c1 d1 c2 d2`` read as a binary number, ``c1`` most significant."""
    return int("".join("1" if x else "0" for x in pattern), 2)


def bb84_state(inp: BB84Input, cutoff: int = 1) -> DensityMatrix:
    """Single photon in two rails: Z gives |10> or |01>, X gives (|10> +- |01>)/sqrt2."""
    if inp.basis is Basis.Z:
        amps = {(1, 0): 1.0} if inp.bit == 0 else {(0, 1): 1.0}
    else:
        s = 1.0 / math.sqrt(2.0)
        amps = {(1, 0): s, (0, 1): s if inp.bit == 0 else -s}
    return pure_state(amps, 2, cutoff, ("U1", "U2"))


def _source_pair(src_a: SourceModel, src_b: SourceModel, modes: tuple[int, int], cutoff: int) -> DensityMatrix:
    """Two independent SPS emissions placed on ``modes`` of the (P1, P2, A1, A2) block."""
    weights = {}
    dist_a = {0: 1.0 - src_a.efficiency, 1: src_a.efficiency * src_a.p1, 2: src_a.efficiency * src_a.p2}
    dist_b = {0: 1.0 - src_b.efficiency, 1: src_b.efficiency * src_b.p1, 2: src_b.efficiency * src_b.p2}
    for (na, wa), (nb, wb) in itertools.product(dist_a.items(), dist_b.items()):
        if wa * wb == 0.0:
            continue
        occ = [0, 0, 0, 0]
        occ[modes[0]] += na
        occ[modes[1]] += nb
        weights[tuple(occ)] = weights.get(tuple(occ), 0.0) + wa * wb
    return diagonal_state(weights, 4, cutoff, ("P1", "P2", "A1", "A2"))


def quasi_epr_source(src_a: SourceModel, src_b: SourceModel | None = None, cutoff: int = 4) -> DensityMatrix:
    """Four-mode state over (P1, P2, A1, A2).

    The two photons meet on a 50:50 beam splitter; each output is then split
    50:50 into a P and an A mode.
    """
    src_b = src_a if src_b is None else src_b
    state = _source_pair(src_a, src_b, (0, 1), cutoff)
    state = apply_beam_splitter(state, 0, 1, 0.5)
    state = apply_beam_splitter(state, 0, 2, 0.5)
    return apply_beam_splitter(state, 1, 3, 0.5)


def nla_pair(src: SourceModel, reflectivity: float, cutoff: int = 4) -> DensityMatrix:
    """One SPS per memory; a reflectivity-``eta`` splitter sends part of it to the P arm."""
    state = _source_pair(src, src, (2, 3), cutoff)
    state = apply_beam_splitter(state, 2, 0, reflectivity)
    return apply_beam_splitter(state, 3, 1, reflectivity)


def nla_prepare_pair(cfg: SystemConfig, cutoff: int = 4) -> DensityMatrix:
    if cfg.scheme is not Scheme.NLA:
        raise ValueError(f"nla_prepare_pair needs the NLA scheme, got {cfg.scheme.value}")
    return nla_pair(cfg.source, cfg.nla_reflectivity, cutoff)


def entangler_state(cfg: SystemConfig, cutoff: int) -> DensityMatrix:
    if cfg.scheme is Scheme.NLA:
        return nla_prepare_pair(cfg, cutoff)
    if cfg.scheme is Scheme.QUASI_EPR:
        return quasi_epr_source(cfg.source, cfg.source, cutoff)
    raise ValueError(f"scheme {cfg.scheme.value} has no entangling source")


def detect(state: DensityMatrix, modes, det: DetectorModel, patterns=None) -> dict:
    """Threshold-detect ``modes`` and keep the rest.

    Returns ``pattern -> conditional state`` where a pattern lists click or
    no-click per entry of ``modes``.  Conditional states are subnormalized:
    their trace is the pattern probability.  At least one mode must remain.
    """
    modes = list(modes)
    if len(modes) >= state.n_modes:
        raise ValueError("detect() needs at least one undetected mode")
    # measure from the highest index down so the remaining indices stay valid
    order = sorted(range(len(modes)), key=lambda k: -modes[k])
    results = {}

    def walk(st, depth, clicks):
        if depth == len(order):
            results[tuple(clicks[k] for k in range(len(modes)))] = st
            return
        k = order[depth]
        for click in (False, True):
            _, post = measure_threshold(st, modes[k], det, "click" if click else "no_click")
            walk(post, depth + 1, {**clicks, k: click})

    walk(state, 0, {})
    if patterns is None:
        return results
    return {tuple(p): results[tuple(p)] for p in patterns}


@dataclass
class SideResult:
    """Outcome of one loading round on one side for a fixed BB84 input.

    ``conditional_states`` maps each side-BSM pattern to the two-mode memory
    state (A1, A2) after writing, subnormalized by the pattern probability.
    ``corrected_state`` sums the success patterns after the Pauli correction.
    """

    input: BB84Input
    p_success: float
    conditional_states: dict = field(repr=False)
    corrected_state: DensityMatrix | None = field(repr=False)
    ground_weight: float
    signal_weight: float
    multi_weight: float

    @property
    def pattern_probabilities(self) -> dict:
        return {p: s.trace() for p, s in self.conditional_states.items()}


def side_circuit(cfg: SystemConfig, inp: BB84Input, length: float | None = None) -> DensityMatrix:
    """Six-mode state just before the side detectors."""
    budget = source_photon_budget(cfg)
    t = arm_transmissivity(cfg.channel, length)
    user = bb84_state(inp, budget)
    user = apply_loss(apply_loss(user, 0, t), 1, t)
    src = entangler_state(cfg, budget)
    src = apply_loss(src, 0, cfg.converter.efficiency)
    src = apply_loss(src, 1, cfg.converter.efficiency * (1.0 - cfg.mode_mismatch))
    state = tensor(user, src)
    state = apply_beam_splitter(state, U1, P1, 0.5)
    return apply_beam_splitter(state, U2, P2, 0.5)


def _pauli_z(state: DensityMatrix, mode: int) -> DensityMatrix:
    return apply_phase(state, mode, math.pi)


def side_bsm_round(cfg: SystemConfig, inp: BB84Input, length: float | None = None, all_patterns: bool = False) -> SideResult:
    """Run one side: source, channel, side BSM, heralded writing.

    Writing loss acts on the memory arms only in kept branches (delayed
    writing).  The teleported qubit picks up a Z when an odd number of
    ``d`` detectors fired; ``corrected_state`` undoes it.
    """
    state = side_circuit(cfg, inp, length)
    det = cfg.side_detector_model()
    wanted = ALL_PATTERNS if all_patterns else SUCCESS_PATTERNS
    # detector tuple order matches (c1, d1, c2, d2)
    raw = detect(state, (U1, P1, U2, P2), det, wanted)
    eta_w = cfg.memory.write_efficiency * cfg.memory.coupling_efficiency
    conditional = {}
    for pattern in wanted:
        mem = raw[pattern]
        mem = apply_loss(apply_loss(mem, 0, eta_w), 1, eta_w)
        conditional[pattern] = mem
    corrected = None
    for pattern in SUCCESS_PATTERNS:
        mem = conditional[pattern]
        if BSMOutcome(pattern).d_clicks % 2:
            mem = _pauli_z(mem, 1)
        corrected = mem if corrected is None else mem._replace(corrected.matrix + mem.matrix)
    p_success = corrected.trace()
    alpha = beta = multi = 0.0
    if p_success > 0:
        dist = corrected.photon_distribution() / p_success
        totals = corrected.occupations.sum(axis=1)
        alpha = float(dist[totals == 0].sum())
        beta = float(dist[totals == 1].sum())
        multi = float(dist[totals >= 2].sum())
    return SideResult(inp, p_success, conditional, corrected, alpha, beta, multi)


def middle_pattern_probabilities(
    rho_a: DensityMatrix,
    rho_b: DensityMatrix,
    det: DetectorModel,
    read_a: float = 1.0,
    read_b: float = 1.0,
) -> np.ndarray:
    """Probabilities of the 16 middle-BSM patterns, indexed by :func:`pattern_index`.

    The patterns sum to ``trace(rho_a) * trace(rho_b)``.
    """
    rho_a = rho_a.recut(max(rho_a.max_photons(), 1))
    rho_b = rho_b.recut(max(rho_b.max_photons(), 1))
    cutoff = rho_a.cutoff + rho_b.cutoff
    rho_a, rho_b = rho_a.recut(cutoff), rho_b.recut(cutoff)
    rho_a = apply_loss(apply_loss(rho_a, 0, read_a), 1, read_a)
    rho_b = apply_loss(apply_loss(rho_b, 0, read_b), 1, read_b)
    # modes: A1, A2, B1, B2; rail k mixes A_k (port c_k) with B_k (port d_k)
    state = tensor(rho_a, rho_b)
    state = apply_beam_splitter(state, 0, 2, 0.5)
    state = apply_beam_splitter(state, 1, 3, 0.5)
    diag = state.photon_distribution()
    occ = state.occupations[:, [0, 2, 1, 3]]
    no_click = det.no_click_weight(occ)
    out = np.zeros(16)
    for pattern in ALL_PATTERNS:
        w = np.where(np.array(pattern)[None, :], 1.0 - no_click, no_click).prod(axis=1)
        out[pattern_index(pattern)] = float(w @ diag)
    return out


def middle_bsm(
    cfg: SystemConfig,
    rho_a: DensityMatrix,
    rho_b: DensityMatrix,
    storage_time_a: float = 0.0,
    storage_time_b: float = 0.0,
) -> dict:
    """Read both memories after the given storage times and run the middle BSM.

    Returns ``BSMOutcome -> probability`` for all 16 patterns.
    """
    read_a = memory_read_efficiency(cfg.memory, storage_time_a)
    read_b = memory_read_efficiency(cfg.memory, storage_time_b)
    probs = middle_pattern_probabilities(rho_a, rho_b, cfg.middle_detector_model(), read_a, read_b)
    return {BSMOutcome(p): float(probs[pattern_index(p)]) for p in ALL_PATTERNS}


def correct_bits(inp_a: BB84Input, inp_b: BB84Input, outcome: BSMOutcome) -> bool:
    """Whether a successful middle BSM reproduces the intended bit relation.

    Z: success heralds anticorrelated bits.  X: psi+ heralds equal bits,
    psi- opposite bits.
    """
    if inp_a.basis is Basis.Z:
        return inp_a.bit != inp_b.bit
    same = inp_a.bit == inp_b.bit
    return same if outcome.bell_class is BellClass.PSI_PLUS else not same


@dataclass(frozen=True)
class Conditionals:
    """Per-round quantities feeding the key rate.

    ``p_side`` is the one-side loading probability per round; ``p_mbsm`` the
    middle success probability given both sides loaded (Z basis); ``yield_x``
    the same in the X basis.
    """

    p_side: float
    p_mbsm: float
    yield_x: float
    e_x: float
    e_z: float


def _basis_statistics(states: dict, det: DetectorModel, basis: Basis, read_a: float, read_b: float):
    """Success probability given loading, and error rate, in one basis."""
    inputs = [BB84Input(basis, 0), BB84Input(basis, 1)]
    num_ok = num_err = norm = 0.0
    for ia, ib in itertools.product(inputs, inputs):
        rho_a, rho_b = states[ia], states[ib]
        norm += rho_a.trace() * rho_b.trace()
        if rho_a.trace() <= 0 or rho_b.trace() <= 0:
            continue
        probs = middle_pattern_probabilities(rho_a, rho_b, det, read_a, read_b)
        for p in SUCCESS_PATTERNS:
            if correct_bits(ia, ib, BSMOutcome(p)):
                num_ok += probs[pattern_index(p)]
            else:
                num_err += probs[pattern_index(p)]
    total = num_ok + num_err
    success = total / norm if norm > 0 else 0.0
    error = num_err / total if total > 0 else 0.5
    return float(success), float(error)


def qber_and_yield_conditionals(
    cfg: SystemConfig,
    length: float | None = None,
    read_efficiencies: tuple[float, float] | None = None,
) -> Conditionals:
    """Compose both sides and the middle BSM over uniformly drawn BB84 inputs.

    ``read_efficiencies`` are the reading efficiencies of the earlier- and
    later-loaded side; they default to the undecayed ``eta_r0``.
    """
    if read_efficiencies is None:
        read_efficiencies = (cfg.memory.read_efficiency,) * 2
    read_a, read_b = read_efficiencies
    if cfg.scheme is Scheme.NO_MEMORY:
        return no_memory_conditionals(cfg, length)
    det = cfg.middle_detector_model()
    sides = {inp: side_bsm_round(cfg, inp, length) for inp in BB84Input.all()}
    states = {inp: res.corrected_state for inp, res in sides.items()}
    p_side = 0.5 * sum(sides[BB84Input(Basis.Z, k)].p_success for k in (0, 1))
    p_z, e_z = _basis_statistics(states, det, Basis.Z, read_a, read_b)
    p_x, e_x = _basis_statistics(states, det, Basis.X, read_a, read_b)
    return Conditionals(p_side, p_z, p_x, e_x, e_z)


def user_photon(cfg: SystemConfig, inp: BB84Input, length: float | None = None) -> DensityMatrix:
    """The user's encoded photon after its half of the channel."""
    t = arm_transmissivity(cfg.channel, length)
    state = bb84_state(inp, 1)
    return apply_loss(apply_loss(state, 0, t), 1, t)


def no_memory_conditionals(cfg: SystemConfig, length: float | None = None) -> Conditionals:
    """Plain MDI-QKD: the users' photons meet directly at the middle BSM."""
    det = cfg.middle_detector_model()
    states = {inp: user_photon(cfg, inp, length) for inp in BB84Input.all()}
    y_z, e_z = _basis_statistics(states, det, Basis.Z, 1.0, 1.0)
    y_x, e_x = _basis_statistics(states, det, Basis.X, 1.0, 1.0)
    return Conditionals(1.0, y_z, y_x, e_x, e_z)


def outcome_distribution(
    cfg: SystemConfig,
    length: float,
    inputs: tuple[BB84Input, BB84Input],
    read_efficiency: float | None = None,
) -> np.ndarray:
    """Probabilities of all 4096 joint side-A, side-B and middle patterns.

    Same indexing as :func:`maqkd.oracle.exact_enumerate`; no Pauli
    correction is applied.
    """
    read = cfg.memory.read_efficiency if read_efficiency is None else read_efficiency
    det = cfg.middle_detector_model()
    side_a = side_bsm_round(cfg, inputs[0], length, all_patterns=True).conditional_states
    side_b = side_bsm_round(cfg, inputs[1], length, all_patterns=True).conditional_states
    out = np.zeros((16, 16, 16))
    for pa, rho_a in side_a.items():
        for pb, rho_b in side_b.items():
            out[pattern_index(pa), pattern_index(pb)] = middle_pattern_probabilities(rho_a, rho_b, det, read, read)
    return out.reshape(-1)
