import dataclasses
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maqkd import rates
from maqkd.devices import DetectorSpec, MemoryModel, Scheme, SystemConfig, list_presets, load_preset
from maqkd.protocols import Conditionals

MEMORY_PRESETS = [n for n in list_presets() if n != "no-memory-baseline"]


class TestBinaryEntropy:
    def test_endpoints(self):
        assert rates.binary_entropy(0.0) == 0.0
        assert rates.binary_entropy(1.0) == 0.0

    def test_half(self):
        assert rates.binary_entropy(0.5) == 1.0

    def test_frozen_value(self):
        # evaluated with 30-digit mpmath: 0.499915958164528...
        assert rates.binary_entropy(0.11) == pytest.approx(0.499916, abs=5e-7)

    def test_domain(self):
        with pytest.raises(ValueError):
            rates.binary_entropy(1.2)

    @settings(max_examples=200)
    @given(st.floats(0, 1))
    def test_symmetric_and_bounded(self, q):
        h = rates.binary_entropy(q)
        assert 0.0 <= h <= 1.0
        assert h == pytest.approx(rates.binary_entropy(1 - q), abs=1e-12)


def exact_expected_max(p, terms=4000):
    """Brute-force E[max] over pairs of geometric variables."""
    k = np.arange(1, terms + 1)
    cdf = 1 - (1 - p) ** k
    pmf_max = np.diff(np.concatenate([[0.0], cdf**2]))
    return float(k @ pmf_max)


class TestLoading:
    def test_certain_success(self):
        stats = rates.loading_statistics(1.0)
        assert stats.expected_rounds == 1.0
        assert stats.waiting_mean() == 0.0

    def test_small_p(self):
        stats = rates.loading_statistics(0.01)
        assert stats.expected_rounds == pytest.approx(149.7487437, rel=1e-9)
        # close to the 2/3 loading factor
        assert 1 / stats.expected_rounds / 0.01 == pytest.approx(0.667785235, abs=1e-9)
        assert 1 / stats.expected_rounds / 0.01 == pytest.approx(2 / 3, abs=2e-3)

    def test_half(self):
        assert rates.loading_statistics(0.5).expected_rounds == pytest.approx(float(Fraction(8, 3)), abs=1e-15)

    @pytest.mark.parametrize("p", [0.01, 0.2, 0.5, 0.9])
    def test_matches_enumeration(self, p):
        assert rates.loading_statistics(p).expected_rounds == pytest.approx(exact_expected_max(p), rel=1e-12)

    def test_waiting_pmf_sums_to_one(self):
        stats = rates.loading_statistics(0.05)
        k = np.arange(0, 2000)
        assert stats.waiting_pmf(k).sum() == pytest.approx(1.0, abs=1e-12)
        assert stats.waiting_pmf(k) @ k == pytest.approx(stats.waiting_mean(), rel=1e-10)

    def test_invalid_p(self):
        with pytest.raises(ValueError):
            rates.loading_statistics(0.0)


class TestDecayFactor:
    def test_infinite_coherence(self):
        assert rates.decay_factor(math.inf, 1e-9, 0.3) == 1.0

    def test_fast_decay_keeps_simultaneous_loading(self):
        assert rates.decay_factor(1e-30, 1e-9, 0.3) == pytest.approx(0.3 / 1.7, rel=1e-12)

    def test_series(self):
        p, x = 0.01, math.exp(-1e-9 / 1.5e-6)
        stats = rates.loading_statistics(p)
        k = np.arange(0, 200000)
        assert rates.decay_factor(1.5e-6, 1e-9, p) == pytest.approx(float(stats.waiting_pmf(k) @ x**k), rel=1e-10)

    @settings(max_examples=100)
    @given(st.floats(1e-3, 1), st.floats(1e-9, 1e-3), st.floats(1e-8, 10))
    def test_bounded(self, p, period, t_r):
        f = rates.decay_factor(t_r, period, p)
        assert p / (2 - p) - 1e-12 <= f <= 1 + 1e-12


class TestTiming:
    def test_overheads(self):
        cfg = load_preset("CA1")
        t = rates.TimingModel.from_config(cfg)
        assert t.tau_w == pytest.approx(cfg.memory.interaction_time + cfg.side_detector.dead_time)
        assert t.tau_r == pytest.approx(cfg.memory.interaction_time + cfg.middle_detector.dead_time + cfg.memory.init_time)

    def test_tau_w_cannot_exceed_tau_r(self):
        with pytest.raises(ValueError):
            rates.TimingModel(2.0, 1.0, 1e-9)


class TestSecretKeyRate:
    def test_frozen_point(self):
        point = rates.secret_key_rate(load_preset("ExC"), 300.0)
        assert point.R_per_second > 0
        assert point.P_SBSM == pytest.approx(1 / point.expected_rounds)
        assert point.Y11 == pytest.approx(point.P_SBSM * point.P_MBSM)

    def test_rate_is_yield_when_error_free(self):
        cfg = SystemConfig(side_detector=DetectorSpec(1.0, 0.0), middle_detector=DetectorSpec(1.0, 0.0))
        point = rates.secret_key_rate(cfg, 0.0)
        assert point.e_X == pytest.approx(0.0, abs=1e-12) and point.e_Z == pytest.approx(0.0, abs=1e-12)
        assert point.R_per_pulse == pytest.approx(point.Y11, rel=1e-9)

    def test_clamped_at_zero(self):
        point = rates.secret_key_rate(load_preset("ideal"), 700.0)
        assert point.raw_per_pulse < 0
        assert point.R_per_pulse == 0.0

    def test_linear_multiplexing_scales_rate(self):
        cfg = load_preset("Pr+MM")
        one = dataclasses.replace(cfg, memory=dataclasses.replace(cfg.memory, spectral_modes=1))
        a = rates.secret_key_rate(cfg, 200.0, "linear")
        b = rates.secret_key_rate(one, 200.0, "linear")
        assert a.raw_per_second == pytest.approx(90 * b.raw_per_second, rel=1e-12)

    def test_parallel_multiplexing_boosts_loading(self):
        p = 1e-3
        assert rates.effective_side_probability(p, 90, "parallel") == pytest.approx(1 - (1 - p) ** 90, rel=1e-12)
        assert rates.effective_side_probability(p, 90, "linear") == p
        with pytest.raises(ValueError):
            rates.effective_side_probability(p, 2, "serial")

    def test_rate_capped_by_overheads(self):
        for name in MEMORY_PRESETS:
            cfg = load_preset(name)
            t = rates.TimingModel.from_config(cfg)
            point = rates.secret_key_rate(cfg, 10.0)
            cap = cfg.memory.spectral_modes / (t.tau_w + t.tau_r)
            assert point.R_per_second <= cap, name

    def test_no_memory_scheme(self):
        point = rates.secret_key_rate(load_preset("no-memory-baseline"), 100.0)
        assert point.P_SBSM == 1.0
        assert point.R_per_second == pytest.approx(point.R_per_pulse * 1e9)

    def test_secret_fraction(self):
        cond = Conditionals(0.1, 0.1, 0.1, 0.11, 0.0)
        assert rates.secret_fraction(cond, 1.16) == pytest.approx(1 - 0.499916, abs=1e-6)


class TestBaselines:
    def test_plob_half_transmissivity(self):
        assert rates.plob_bound(17.3 * math.log(2)) == pytest.approx(1.0, rel=1e-12)

    def test_plob_long_distance(self):
        assert rates.plob_bound(700.0) == pytest.approx(math.exp(-700 / 17.3) / math.log(2), rel=1e-12)
        assert rates.plob_bound(700.0) == pytest.approx(5.8e-18, rel=0.02)

    def test_no_memory_ideal_yield(self):
        cfg = SystemConfig(scheme=Scheme.NO_MEMORY, middle_detector=DetectorSpec(1.0, 0.0))
        point = rates.no_memory_point(cfg, 100.0)
        assert point.Y11 == pytest.approx(0.5 * math.exp(-100 / 17.3), rel=1e-12)

    def test_default_no_memory_rate(self):
        assert rates.no_memory_rate(100.0) > rates.no_memory_rate(200.0) > 0


class TestAsymptotics:
    def test_nla_shape(self):
        assert rates.asymptotic_yields("NLA", 0.2, 17.3) == pytest.approx(0.64 * math.exp(-1))

    def test_nla_full_reflectivity_vanishes(self):
        assert rates.asymptotic_yields("NLA", 1.0, 100.0) == 0.0

    def test_anchor(self):
        vals = rates.asymptotic_yields("QuasiEPR", 0.2, np.array([100.0, 134.6]), anchor=(100.0, 1e-3))
        np.testing.assert_allclose(vals, [1e-3, 1e-3 * math.exp(-1)], rtol=1e-12)

    def test_no_memory_has_no_asymptote(self):
        with pytest.raises(ValueError):
            rates.asymptotic_yields("NoMemory", 0.2, 100.0)


class TestCrossover:
    def test_linear_functions(self):
        L = rates.crossover_distance(lambda x: 300 - x, lambda x: 0.0 * x + 100, (0, 500), tol=1e-3)
        assert L == pytest.approx(200.0, abs=1e-3)

    def test_identical_inputs(self):
        f = lambda x: math.exp(-x)
        with pytest.raises(rates.NoCrossingError):
            rates.crossover_distance(f, f, (0, 100))

    def test_empty_range(self):
        with pytest.raises(ValueError):
            rates.crossover_distance(abs, abs, (10, 10))

    def test_exc_against_no_memory(self):
        cfg = load_preset("ExC")
        base = load_preset("no-memory-baseline")
        L = rates.crossover_distance(
            lambda x: rates.secret_key_rate(cfg, x).R_per_second,
            lambda x: rates.no_memory_rate(x, base),
            (10, 400),
            steps=39,
        )
        assert 200 <= L <= 260


class TestNLAGrid:
    def test_picks_grid_point(self):
        cfg = load_preset("ideal").with_overrides(scheme="NLA")
        eta, point = rates.best_nla_reflectivity(cfg, 200.0, grid=[0.1, 0.2, 0.3])
        assert eta in (0.1, 0.2, 0.3)
        assert point.R_per_pulse >= rates.secret_key_rate(dataclasses.replace(cfg, nla_reflectivity=0.1), 200.0).R_per_pulse

    def test_needs_nla(self):
        with pytest.raises(ValueError):
            rates.best_nla_reflectivity(load_preset("ideal"), 100.0)


# --- grids over every shipped preset --------------------------------------------

GRID = [20.0, 100.0, 200.0, 300.0, 400.0]


@pytest.mark.parametrize("name", MEMORY_PRESETS)
def test_preset_monotonicity_grid(name):
    cfg = load_preset(name)
    points = [rates.secret_key_rate(cfg, L) for L in GRID]
    for a, b in zip(points, points[1:]):
        assert b.P_SBSM <= a.P_SBSM * (1 + 1e-9)
        assert b.Y11 <= a.Y11 * (1 + 1e-9)
        assert b.R_per_second <= a.R_per_second * (1 + 1e-9) + 1e-300
        assert b.e_X >= a.e_X - 1e-12
    for p in points:
        assert 0.0 <= p.e_X <= 0.5 + 1e-12 and 0.0 <= p.e_Z <= 0.5 + 1e-12
        assert 0.0 < p.P_MBSM <= 1.0
        assert 0.0 <= rates.binary_entropy(p.e_X) <= 1.0


@pytest.mark.parametrize("name", MEMORY_PRESETS)
def test_longer_coherence_never_hurts(name):
    cfg = load_preset(name)
    if math.isinf(cfg.memory.coherence_time):
        return
    better = dataclasses.replace(cfg, memory=dataclasses.replace(cfg.memory, coherence_time=10 * cfg.memory.coherence_time))
    assert rates.secret_key_rate(better, 150.0).R_per_second >= rates.secret_key_rate(cfg, 150.0).R_per_second


def test_side_dark_counts_never_help():
    cfg = load_preset("ExC")
    values = [rates.secret_key_rate(cfg.with_side_dark_prob(d), 300.0).R_per_second for d in (1e-9, 1e-7, 1e-5, 1e-4)]
    assert values == sorted(values, reverse=True)


def test_memory_model_efficiency_split():
    mem = MemoryModel.from_product(0.49)
    assert mem.write_efficiency == mem.read_efficiency == pytest.approx(0.7)
