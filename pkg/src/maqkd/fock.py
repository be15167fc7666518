"""Exact multi-mode Fock-space density matrices for small linear-optical circuits.

States live in the subspace of the tensor-product occupation basis whose total
photon number does not exceed ``cutoff``.  Every operation implemented here
(beam splitters, phase shifts, loss, threshold detection, partial trace) either
conserves or lowers the total photon number, so no amplitude is ever clipped;
operations that would *add* photons beyond the cutoff raise instead.

Beam-splitter convention, applied to creation operators of modes ``i`` and
``j`` with reflectivity ``r``::

    a_i^dag -> sqrt(1-r) a_i^dag + sqrt(r) a_j^dag
    a_j^dag -> sqrt(r)   a_i^dag - sqrt(1-r) a_j^dag

The matrix is real, symmetric and its own inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from math import comb, factorial, sqrt

import numpy as np
from scipy import sparse

MAX_DIMENSION = 20_000

HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-10
TRACE_TOL = 1e-12


class TruncationError(ValueError):
    """Raised when an operation would need photons beyond the cutoff."""


class DimensionError(ValueError):
    """Raised when a requested Hilbert space exceeds ``MAX_DIMENSION``."""


@lru_cache(maxsize=None)
def fock_basis(n_modes: int, cutoff: int) -> tuple[np.ndarray, dict]:
    """Occupation tuples with total photon number <= cutoff, in lexicographic order."""
    dim = comb(n_modes + cutoff, n_modes)
    if dim > MAX_DIMENSION:
        raise DimensionError(
            f"{n_modes} modes with cutoff {cutoff} need dimension {dim} > {MAX_DIMENSION}"
        )
    states = [
        occ for occ in product(range(cutoff + 1), repeat=n_modes) if sum(occ) <= cutoff
    ]
    occupations = np.array(states, dtype=np.int64).reshape(len(states), n_modes)
    occupations.setflags(write=False)
    index = {occ: k for k, occ in enumerate(states)}
    return occupations, index


@dataclass(frozen=True)
class DetectorModel:
    """Non-photon-number-resolving (threshold) detector.

    Args:
        efficiency: probability that an incident photon is registered.
        dark_prob: dark-count probability per gated pulse.
        dead_time: time to detect and re-arm, in seconds.
    """

    efficiency: float
    dark_prob: float = 0.0
    dead_time: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if not 0.0 <= self.dark_prob < 1.0:
            raise ValueError(f"dark_prob must lie in [0, 1), got {self.dark_prob}")
        if self.dead_time < 0:
            raise ValueError(f"dead_time must be non-negative, got {self.dead_time}")

    def no_click_weight(self, n):
        """Diagonal of the no-click POVM element, ``(1-d)(1-eta)^n``."""
        return (1.0 - self.dark_prob) * (1.0 - self.efficiency) ** np.asarray(n)

    def click_weight(self, n):
        return 1.0 - self.no_click_weight(n)


@dataclass(frozen=True)
class DensityMatrix:
    """Density operator over ``n_modes`` bosonic modes.

    ``matrix`` is indexed by :func:`fock_basis` ``(n_modes, cutoff)``.  States
    obtained by conditioning on a measurement outcome are left subnormalized;
    their trace is the outcome probability.
    """

    n_modes: int
    cutoff: int
    matrix: np.ndarray = field(repr=False)
    mode_labels: tuple = ()

    def __post_init__(self):
        dim = self.dim
        if self.matrix.shape != (dim, dim):
            raise ValueError(f"matrix shape {self.matrix.shape} does not match dimension {dim}")
        if not self.mode_labels:
            object.__setattr__(self, "mode_labels", tuple(range(self.n_modes)))
        elif len(self.mode_labels) != self.n_modes:
            raise ValueError("one label per mode is required")

    @property
    def dim(self) -> int:
        return comb(self.n_modes + self.cutoff, self.n_modes)

    @property
    def occupations(self) -> np.ndarray:
        return fock_basis(self.n_modes, self.cutoff)[0]

    def index(self, occupation) -> int:
        return fock_basis(self.n_modes, self.cutoff)[1][tuple(occupation)]

    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def normalized(self) -> DensityMatrix:
        tr = self.trace()
        if tr <= 0:
            raise ValueError("cannot normalize a state with zero trace")
        return self._replace(self.matrix / tr)

    def probability(self, occupation) -> float:
        k = self.index(occupation)
        return float(np.real(self.matrix[k, k]))

    def photon_distribution(self) -> np.ndarray:
        return np.real(np.diag(self.matrix)).copy()

    def max_photons(self, tol: float = 0.0) -> int:
        """Largest total photon number carrying diagonal weight above ``tol``."""
        weights = np.abs(np.diag(self.matrix))
        totals = self.occupations.sum(axis=1)
        support = totals[weights > tol]
        return int(support.max()) if support.size else 0

    def recut(self, cutoff: int) -> DensityMatrix:
        """Re-embed the state with a different cutoff, refusing to drop support."""
        if cutoff == self.cutoff:
            return self
        if cutoff < self.max_photons():
            raise TruncationError(
                f"state holds {self.max_photons()} photons; cannot recut to {cutoff}"
            )
        old = self.occupations
        new_occ, new_index = fock_basis(self.n_modes, cutoff)
        keep = np.flatnonzero(old.sum(axis=1) <= cutoff)
        target = np.array([new_index[tuple(o)] for o in old[keep]], dtype=np.int64)
        out = np.zeros((len(new_occ), len(new_occ)), dtype=complex)
        out[np.ix_(target, target)] = self.matrix[np.ix_(keep, keep)]
        return DensityMatrix(self.n_modes, cutoff, out, self.mode_labels)

    def to_product_basis(self, limit: int = MAX_DIMENSION) -> np.ndarray:
        """Dense matrix over the full ``(cutoff+1)**n_modes`` tensor-product basis."""
        d = self.cutoff + 1
        full_dim = d**self.n_modes
        if full_dim > limit:
            raise DimensionError(f"product basis dimension {full_dim} exceeds {limit}")
        flat = np.ravel_multi_index(self.occupations.T, (d,) * self.n_modes)
        out = np.zeros((full_dim, full_dim), dtype=complex)
        out[np.ix_(flat, flat)] = self.matrix
        return out

    def check(self, trace_max: float = 1.0 + TRACE_TOL) -> None:
        """Raise ``ValueError`` unless Hermitian, PSD and 0 < trace <= ``trace_max``."""
        m = self.matrix
        if np.max(np.abs(m - m.conj().T), initial=0.0) > HERMITIAN_TOL:
            raise ValueError("density matrix is not Hermitian")
        tr = self.trace()
        if not 0.0 < tr <= trace_max:
            raise ValueError(f"trace {tr} outside (0, {trace_max}]")
        if min_eigenvalue(self) < -PSD_TOL:
            raise ValueError("density matrix is not positive semidefinite")

    def _replace(self, matrix: np.ndarray, **changes) -> DensityMatrix:
        params = dict(
            n_modes=self.n_modes, cutoff=self.cutoff, mode_labels=self.mode_labels
        )
        params.update(changes)
        return DensityMatrix(matrix=matrix, **params)


def min_eigenvalue(state: DensityMatrix) -> float:
    herm = 0.5 * (state.matrix + state.matrix.conj().T)
    return float(np.linalg.eigvalsh(herm)[0])


def _check_mode(state: DensityMatrix, mode: int) -> None:
    if not 0 <= mode < state.n_modes:
        raise IndexError(f"mode {mode} out of range for {state.n_modes} modes")


def vacuum_state(n_modes: int, cutoff: int, mode_labels: tuple = ()) -> DensityMatrix:
    if n_modes < 1 or cutoff < 1:
        raise ValueError("need n_modes >= 1 and cutoff >= 1")
    occ, _ = fock_basis(n_modes, cutoff)
    m = np.zeros((len(occ), len(occ)), dtype=complex)
    m[0, 0] = 1.0
    return DensityMatrix(n_modes, cutoff, m, tuple(mode_labels))


def pure_state(amplitudes: dict, n_modes: int, cutoff: int, mode_labels: tuple = ()) -> DensityMatrix:
    """|psi><psi| from a mapping ``occupation tuple -> amplitude`` (not renormalized)."""
    occ, index = fock_basis(n_modes, cutoff)
    psi = np.zeros(len(occ), dtype=complex)
    for key, amp in amplitudes.items():
        key = tuple(key)
        if len(key) != n_modes:
            raise ValueError(f"occupation {key} does not have {n_modes} entries")
        if sum(key) > cutoff:
            raise TruncationError(f"occupation {key} exceeds cutoff {cutoff}")
        psi[index[key]] += amp
    return DensityMatrix(n_modes, cutoff, np.outer(psi, psi.conj()), tuple(mode_labels))


def diagonal_state(weights: dict, n_modes: int, cutoff: int, mode_labels: tuple = ()) -> DensityMatrix:
    """Incoherent mixture of number states from ``occupation tuple -> probability``."""
    occ, index = fock_basis(n_modes, cutoff)
    diag = np.zeros(len(occ))
    for key, w in weights.items():
        key = tuple(key)
        if sum(key) > cutoff:
            raise TruncationError(f"occupation {key} exceeds cutoff {cutoff}")
        diag[index[key]] += w
    return DensityMatrix(n_modes, cutoff, np.diag(diag).astype(complex), tuple(mode_labels))


def inject_fock(state: DensityMatrix, mode: int, n: int) -> DensityMatrix:
    """Replace an empty ``mode`` by the ``n``-photon number state."""
    _check_mode(state, mode)
    if n > state.cutoff:
        raise TruncationError(f"{n} photons exceed cutoff {state.cutoff}")
    occ = state.occupations
    weights = np.abs(state.matrix).sum(axis=1)
    if np.any(weights[occ[:, mode] > 0] > 0):
        raise ValueError(f"mode {mode} is not in the vacuum state")
    if n == 0:
        return state
    support = np.flatnonzero(weights > 0)
    if support.size and occ[support].sum(axis=1).max() + n > state.cutoff:
        raise TruncationError(f"injecting {n} photons would exceed cutoff {state.cutoff}")
    _, index = fock_basis(state.n_modes, state.cutoff)
    src = np.flatnonzero(occ.sum(axis=1) + n <= state.cutoff)
    shifted = occ[src].copy()
    shifted[:, mode] += n
    dst = np.array([index[tuple(o)] for o in shifted], dtype=np.int64)
    out = np.zeros_like(state.matrix)
    out[np.ix_(dst, dst)] = state.matrix[np.ix_(src, src)]
    return state._replace(out)


@lru_cache(maxsize=4096)
def _two_mode_block(n_i: int, n_j: int, r: float) -> tuple[tuple[int, float], ...]:
    """Output amplitudes ``(m, amp)`` of |n_i, n_j> -> sum_m amp |m, N-m>."""
    t_amp, r_amp = sqrt(1.0 - r), sqrt(r)
    # (t a_i + r a_j)^n_i (r a_i - t a_j)^n_j, expanded in powers of a_i
    poly = np.zeros(n_i + n_j + 1)
    for k in range(n_i + 1):
        ck = comb(n_i, k) * t_amp**k * r_amp ** (n_i - k)
        for l in range(n_j + 1):
            cl = comb(n_j, l) * r_amp**l * (-t_amp) ** (n_j - l)
            poly[k + l] += ck * cl
    norm = sqrt(factorial(n_i) * factorial(n_j))
    total = n_i + n_j
    return tuple(
        (m, poly[m] * sqrt(factorial(m) * factorial(total - m)) / norm)
        for m in range(total + 1)
        if poly[m] != 0.0
    )


@lru_cache(maxsize=256)
def beam_splitter_matrix(n_modes: int, cutoff: int, mode_i: int, mode_j: int, reflectivity: float):
    occ, index = fock_basis(n_modes, cutoff)
    rows, cols, vals = [], [], []
    for col, o in enumerate(occ):
        n_i, n_j = int(o[mode_i]), int(o[mode_j])
        if n_i == 0 and n_j == 0:
            rows.append(col), cols.append(col), vals.append(1.0)
            continue
        out = list(o)
        for m, amp in _two_mode_block(n_i, n_j, float(reflectivity)):
            out[mode_i], out[mode_j] = m, n_i + n_j - m
            rows.append(index[tuple(out)])
            cols.append(col)
            vals.append(amp)
    dim = len(occ)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(dim, dim))


def apply_beam_splitter(state: DensityMatrix, mode_i: int, mode_j: int, reflectivity: float) -> DensityMatrix:
    _check_mode(state, mode_i)
    _check_mode(state, mode_j)
    if mode_i == mode_j:
        raise ValueError("beam splitter needs two distinct modes")
    if not 0.0 <= reflectivity <= 1.0:
        raise ValueError(f"reflectivity must lie in [0, 1], got {reflectivity}")
    u = beam_splitter_matrix(state.n_modes, state.cutoff, mode_i, mode_j, reflectivity)
    out = u @ (u @ state.matrix.conj().T).conj().T
    return state._replace(np.asarray(out))


def apply_phase(state: DensityMatrix, mode: int, phase: float) -> DensityMatrix:
    """Phase shifter ``exp(i * phase * n)`` on one mode."""
    _check_mode(state, mode)
    d = np.exp(1j * phase * state.occupations[:, mode])
    return state._replace(d[:, None] * state.matrix * d.conj()[None, :])


@lru_cache(maxsize=256)
def _loss_kraus(n_modes: int, cutoff: int, mode: int, transmissivity: float):
    occ, index = fock_basis(n_modes, cutoff)
    dim = len(occ)
    ops = []
    for lost in range(cutoff + 1):
        src = np.flatnonzero(occ[:, mode] >= lost)
        if src.size == 0:
            break
        n = occ[src, mode]
        amp = np.sqrt(
            np.array([comb(int(k), lost) for k in n])
            * transmissivity ** (n - lost)
            * (1.0 - transmissivity) ** lost
        )
        shifted = occ[src].copy()
        shifted[:, mode] -= lost
        dst = [index[tuple(o)] for o in shifted]
        ops.append(sparse.csr_matrix((amp, (dst, src)), shape=(dim, dim)))
    return ops


def apply_loss(state: DensityMatrix, mode: int, transmissivity: float) -> DensityMatrix:
    """Pure-loss channel: coupling to a vacuum ancilla that is then discarded."""
    _check_mode(state, mode)
    if not 0.0 <= transmissivity <= 1.0:
        raise ValueError(f"transmissivity must lie in [0, 1], got {transmissivity}")
    if transmissivity == 1.0:
        return state
    out = np.zeros_like(state.matrix)
    for k in _loss_kraus(state.n_modes, state.cutoff, mode, transmissivity):
        out += k @ (k @ state.matrix.conj().T).conj().T
    return state._replace(out)


def _trace_out_weighted(state: DensityMatrix, mode: int, weights: np.ndarray) -> DensityMatrix:
    """Tr_mode[W rho] for W diagonal in the photon number of ``mode``."""
    occ = state.occupations
    rest = np.delete(occ, mode, axis=1)
    labels = tuple(l for k, l in enumerate(state.mode_labels) if k != mode)
    new_modes = state.n_modes - 1
    if new_modes == 0:
        value = np.sum(weights[occ[:, 0]] * np.real(np.diag(state.matrix)))
        return value, None
    _, new_index = fock_basis(new_modes, state.cutoff)
    target = np.array([new_index[tuple(o)] for o in rest], dtype=np.int64)
    dim = comb(new_modes + state.cutoff, new_modes)
    out = np.zeros((dim, dim), dtype=complex)
    for n in range(state.cutoff + 1):
        if weights[n] == 0.0:
            continue
        sel = np.flatnonzero(occ[:, mode] == n)
        if sel.size == 0:
            continue
        t = target[sel]
        out[np.ix_(t, t)] += weights[n] * state.matrix[np.ix_(sel, sel)]
    return None, DensityMatrix(new_modes, state.cutoff, out, labels)


def measure_threshold(state: DensityMatrix, mode: int, det: DetectorModel, outcome: str):
    """Threshold detection of ``mode``; returns ``(probability, post-state)``.

    The measured mode is traced out.  ``outcome`` is ``"click"`` or
    ``"no_click"``.  If ``mode`` is the last one left, the post-state is None.
    """
    _check_mode(state, mode)
    ns = np.arange(state.cutoff + 1)
    if outcome == "click":
        weights = det.click_weight(ns)
    elif outcome == "no_click":
        weights = det.no_click_weight(ns)
    else:
        raise ValueError(f"unknown outcome {outcome!r}")
    value, post = _trace_out_weighted(state, mode, np.asarray(weights, dtype=float))
    if post is None:
        return float(value), None
    return post.trace(), post


def partial_trace(state: DensityMatrix, modes) -> DensityMatrix:
    """Trace out every mode in ``modes``."""
    ones = np.ones(state.cutoff + 1)
    for mode in sorted(set(modes), reverse=True):
        _check_mode(state, mode)
        if state.n_modes == 1:
            raise ValueError("cannot trace out every mode")
        _, state = _trace_out_weighted(state, mode, ones)
    return state


def tensor(a: DensityMatrix, b: DensityMatrix) -> DensityMatrix:
    """a (x) b with modes of ``a`` first; both must share one cutoff."""
    if a.cutoff != b.cutoff:
        raise ValueError(f"cutoff mismatch: {a.cutoff} vs {b.cutoff}")
    c = a.cutoff
    occ_a, occ_b = a.occupations, b.occupations
    tot_a, tot_b = occ_a.sum(axis=1), occ_b.sum(axis=1)
    ia, ib = np.nonzero(tot_a[:, None] + tot_b[None, :] <= c)
    # weight that would fall outside the truncated space
    pa, pb = np.abs(np.diag(a.matrix)), np.abs(np.diag(b.matrix))
    overflow = np.outer(pa, pb)
    overflow[ia, ib] = 0.0
    if overflow.max(initial=0.0) > 0.0:
        raise TruncationError(f"tensor product needs more than {c} photons")
    n_modes = a.n_modes + b.n_modes
    _, index = fock_basis(n_modes, c)
    combined = np.hstack([occ_a[ia], occ_b[ib]])
    target = np.array([index[tuple(o)] for o in combined], dtype=np.int64)
    dim = comb(n_modes + c, n_modes)
    out = np.zeros((dim, dim), dtype=complex)
    out[np.ix_(target, target)] = a.matrix[np.ix_(ia, ia)] * b.matrix[np.ix_(ib, ib)]
    return DensityMatrix(n_modes, c, out, a.mode_labels + b.mode_labels)


def permute_modes(state: DensityMatrix, permutation) -> DensityMatrix:
    """New mode ``k`` is old mode ``permutation[k]``."""
    perm = list(permutation)
    if sorted(perm) != list(range(state.n_modes)):
        raise ValueError(f"{perm} is not a permutation of {state.n_modes} modes")
    occ = state.occupations
    _, index = fock_basis(state.n_modes, state.cutoff)
    target = np.array([index[tuple(o[perm])] for o in occ], dtype=np.int64)
    out = np.zeros_like(state.matrix)
    out[np.ix_(target, target)] = state.matrix
    labels = tuple(state.mode_labels[k] for k in perm)
    return state._replace(out, mode_labels=labels)
