"""Self-checks behind ``maqkd verify``."""

from __future__ import annotations

import dataclasses
import itertools
import sys
import time

import numpy as np

from maqkd import devices, fock
from maqkd.devices import Scheme, SourceModel
from maqkd.oracle import exact_enumerate, sample_timing
from maqkd.protocols import BB84Input, outcome_distribution, qber_and_yield_conditionals
from maqkd.rates import decay_factor, loading_statistics

ORACLE_TOL = 1e-9


def random_state(rng: np.random.Generator, n_modes: int, cutoff: int, rank: int = 2) -> fock.DensityMatrix:
    """Random mixed state of the given rank, with trace 1."""
    dim = fock.fock_basis(n_modes, cutoff)[0].shape[0]
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    m = g @ g.conj().T
    return fock.DensityMatrix(n_modes, cutoff, m / np.trace(m).real)


def oracle_matrix(full: bool):
    """Scheme x dark count x p2 x distance grid used for the cross-path check."""
    p2s = (0.0, 0.01) if full else (0.0,)
    for scheme, dc, p2, L in itertools.product(("QuasiEPR", "NLA"), (0.0, 1e-6), p2s, (50.0, 300.0)):
        yield scheme, dc, p2, L


def oracle_config(scheme: str, dark: float, p2: float) -> devices.SystemConfig:
    base = devices.load_preset("ideal")
    cfg = dataclasses.replace(base, scheme=Scheme(scheme), source=SourceModel.with_p2(base.source.efficiency, p2))
    return cfg.with_side_dark_prob(dark)


class Report:
    def __init__(self, out):
        self.out = out
        self.ok = True

    def line(self, name: str, passed: bool, detail: str = "") -> None:
        self.ok &= bool(passed)
        self.out.write(f"{'PASS' if passed else 'FAIL'}  {name}{'  ' + detail if detail else ''}\n")
        self.out.flush()


def run_verification(level: str = "quick", seed: int = 2024, preset_dir=None, out=sys.stdout) -> bool:
    full = level == "full"
    report = Report(out)
    t0 = time.perf_counter()

    errors = devices.validate_presets(preset_dir)
    report.line("presets load and validate", not errors, "; ".join(str(e) for e in errors))

    rng = np.random.default_rng(seed)
    n_states = 1000 if full else 100
    worst_trace = worst_eig = worst_povm = 0.0
    for _ in range(n_states):
        n_modes = int(rng.integers(1, 4))
        cutoff = int(rng.integers(1, 4))
        st = random_state(rng, n_modes, cutoff, rank=int(rng.integers(1, 4)))
        i, j = (0, 1) if n_modes > 1 else (0, 0)
        if n_modes > 1:
            st = fock.apply_beam_splitter(st, i, j, float(rng.uniform()))
        st = fock.apply_loss(st, 0, float(rng.uniform()))
        worst_trace = max(worst_trace, abs(st.trace() - 1.0))
        worst_eig = min(worst_eig, fock.min_eigenvalue(st))
        det = fock.DetectorModel(float(rng.uniform()), float(rng.uniform(0, 0.5)))
        if n_modes > 1:
            pc, _ = fock.measure_threshold(st, 0, det, "click")
            pn, _ = fock.measure_threshold(st, 0, det, "no_click")
            worst_povm = max(worst_povm, abs(pc + pn - st.trace()))
    report.line(f"trace preserved on {n_states} random states", worst_trace <= 1e-10, f"max drift {worst_trace:.1e}")
    report.line(f"positivity on {n_states} random states", worst_eig >= -1e-10, f"min eigenvalue {worst_eig:.1e}")
    report.line("POVM completeness", worst_povm <= 1e-10, f"max defect {worst_povm:.1e}")

    ideal = devices.SystemConfig(side_detector=devices.DetectorSpec(1.0, 0.0), middle_detector=devices.DetectorSpec(1.0, 0.0))
    for scheme in (Scheme.QUASI_EPR, Scheme.NLA):
        c = qber_and_yield_conditionals(dataclasses.replace(ideal, scheme=scheme), 100.0)
        report.line(f"{scheme.value}: noiseless QBER is zero", c.e_x < 1e-12 and c.e_z < 1e-12, f"eX={c.e_x:.1e} eZ={c.e_z:.1e}")

    pair = (BB84Input("X", 0), BB84Input("Z", 1))
    for scheme, dc, p2, L in oracle_matrix(full):
        cfg = oracle_config(scheme, dc, p2)
        diff = float(np.max(np.abs(exact_enumerate(cfg, L, pair) - outcome_distribution(cfg, L, pair))))
        report.line(f"oracle {scheme} d_c={dc:g} p2={p2:g} L={L:g}", diff <= ORACLE_TOL, f"max |diff| {diff:.1e}")

    n_trials = 10**6 if full else 10**5
    for p, period, t_r in ((0.01, 1e-9, 1.5e-6), (0.5, 1e-6, 1e-5)):
        est = sample_timing(p, period, t_r, n_trials, seed)
        rounds = loading_statistics(p).expected_rounds
        decay = decay_factor(t_r, period, p)
        ok = abs(est.expected_rounds - rounds) <= 3 * est.expected_rounds_stderr
        ok &= abs(est.decay_factor - decay) <= 3 * est.decay_factor_stderr
        report.line(
            f"timing p={p:g} ({n_trials} trials, {est.rng})", ok,
            f"E[max] {est.expected_rounds:.3f} vs {rounds:.3f}; decay {est.decay_factor:.4f} vs {decay:.4f}",
        )
    out.write(f"{'all checks passed' if report.ok else 'verification FAILED'} in {time.perf_counter() - t0:.1f} s\n")
    return report.ok
