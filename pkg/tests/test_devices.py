import math
import shutil

import numpy as np
import pytest

from maqkd import devices
from maqkd.devices import ChannelModel, ConfigError, ConverterModel, DetectorSpec, MemoryModel, SourceModel

ALL_PRESETS = devices.list_presets()


class TestSource:
    def test_ideal_emits_one_photon(self):
        rho = devices.sps_emit(SourceModel())
        np.testing.assert_allclose(rho.photon_distribution(), [0, 1, 0])

    def test_lossy_source(self):
        rho = devices.sps_emit(SourceModel.with_p2(0.72, 0.0))
        np.testing.assert_allclose(rho.photon_distribution(), [0.28, 0.72, 0.0], atol=1e-15)

    def test_two_photon_component(self):
        # 0.72 * (1/1.003) and 0.72 * (0.003/1.003)
        rho = devices.sps_emit(SourceModel.with_p2(0.72, 0.003 / 1.003))
        np.testing.assert_allclose(rho.photon_distribution(), [0.28, 0.71785, 0.00215], atol=5e-6)

    def test_p1_p2_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            SourceModel(efficiency=1.0, p1=0.5, p2=0.1)


class TestChannel:
    def test_zero_length(self):
        assert devices.transmissivity(0.0, 17.3) == 1.0

    def test_arm_at_two_attenuation_lengths(self):
        assert devices.arm_transmissivity(ChannelModel(17.3), 34.6) == pytest.approx(0.367879, abs=1e-6)

    def test_two_photon_tolerance_scale(self):
        assert devices.arm_transmissivity(ChannelModel(17.3), 200.0) == pytest.approx(3.08e-3, rel=5e-3)

    def test_full_link(self):
        assert devices.transmissivity(34.6, 17.3) == pytest.approx(math.exp(-2.0))


class TestMemory:
    def test_no_storage_gives_eta_r0(self):
        mem = MemoryModel.from_product(0.3, coherence_time=1.5e-6)
        assert devices.memory_read_efficiency(mem, 0.0) == pytest.approx(math.sqrt(0.3))

    def test_decay_after_one_coherence_time(self):
        mem = devices.load_preset("WV2").memory
        ratio = devices.memory_read_efficiency(mem, 1.5e-6) / mem.read_efficiency
        assert ratio == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_infinite_coherence(self):
        mem = MemoryModel(read_efficiency=0.7)
        for t in (0.0, 1.0, 1e6):
            assert devices.memory_read_efficiency(mem, t) == 0.7

    def test_negative_time(self):
        with pytest.raises(ValueError):
            devices.memory_read_efficiency(MemoryModel(), -1.0)


class TestDarkCounts:
    def test_side(self):
        assert devices.dark_count_prob(DetectorSpec(0.93, 1.0), 1e-9) == pytest.approx(1e-9)

    def test_middle(self):
        assert devices.dark_count_prob(DetectorSpec(0.6, 1000.0), 1e-9) == pytest.approx(1e-6)

    def test_converter_noise_adds_at_side_only(self):
        det, conv = DetectorSpec(0.93, 1.0), ConverterModel(0.68, 1e-5)
        assert devices.dark_count_prob(det, 1e-9, conv, at_side=True) == pytest.approx(1e-9 + 1e-5)
        assert devices.dark_count_prob(det, 1e-9, conv, at_side=False) == pytest.approx(1e-9)

    def test_with_side_dark_prob(self):
        cfg = devices.load_preset("ExC").with_side_dark_prob(1e-6)
        assert cfg.side_detector_model().dark_prob == pytest.approx(1e-6)


class TestPresets:
    def test_wv2(self):
        cfg = devices.load_preset("WV2")
        assert cfg.memory.efficiency == pytest.approx(0.3)
        assert cfg.memory.coherence_time == 1.5e-6
        assert cfg.memory.interaction_time == 300e-12
        assert cfg.repetition_rate == 1.25e9

    def test_ca1(self):
        cfg = devices.load_preset("CA1")
        assert cfg.memory.efficiency == pytest.approx(0.14)
        assert cfg.memory.coherence_time == 16.0
        assert cfg.memory.interaction_time == pytest.approx(82e-9)
        assert cfg.repetition_rate == 12e6

    def test_pr_mm(self):
        cfg = devices.load_preset("Pr+MM")
        assert cfg.memory.efficiency == pytest.approx(0.56)
        assert cfg.memory.coherence_time == 500e-6
        assert cfg.repetition_rate == 1e6
        assert cfg.memory.spectral_modes == 90

    def test_common_parameters_inherited(self):
        cfg = devices.load_preset("EnE")
        assert cfg.side_detector.efficiency == 0.93
        assert cfg.middle_detector.dark_count_rate == 1000.0
        assert cfg.converter.efficiency == 0.68
        assert cfg.source.efficiency == 0.72
        assert cfg.error_correction_inefficiency == 1.16

    def test_abstract_base_not_listed(self):
        assert "common" not in ALL_PRESETS
        assert {"ideal", "no-memory-baseline", "WV2", "CA1", "Pr+MM"} <= set(ALL_PRESETS)

    def test_all_shipped_presets_validate(self):
        assert devices.validate_presets() == []

    @pytest.mark.parametrize("name", ALL_PRESETS)
    def test_rep_rate_within_memory_limit(self, name):
        cfg = devices.load_preset(name)
        assert cfg.repetition_rate <= cfg.memory.max_rep_rate * (1 + 1e-12)
        assert cfg.pulse_duration == pytest.approx(cfg.period)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            devices.load_preset("nope")


class TestConfigDocuments:
    def test_unknown_key_names_field(self):
        with pytest.raises(ConfigError) as err:
            devices.config_from_dict({"memory": {"coherance_time": 1.0}})
        assert err.value.field == "memory.coherance_time"

    def test_out_of_range_names_field(self):
        with pytest.raises(ConfigError) as err:
            devices.config_from_dict({"side_detector": {"efficiency": 1.3}})
        assert "efficiency" in err.value.field

    def test_efficiency_alias_conflict(self):
        with pytest.raises(ConfigError):
            devices.config_from_dict({"memory": {"efficiency": 0.5, "read_efficiency": 0.5}})

    def test_round_trip(self):
        cfg = devices.load_preset("CA2+BW")
        again = devices.config_from_dict(devices.config_to_dict(cfg))
        assert again == cfg

    def test_overrides_rederive_pulse_duration(self):
        cfg = devices.load_preset("WV2").with_overrides(repetition_rate=1e8)
        assert cfg.pulse_duration == pytest.approx(1e-8)

    def test_rep_rate_above_memory_limit(self):
        with pytest.raises(ConfigError) as err:
            devices.load_preset("CA1").with_overrides(repetition_rate=1e9)
        assert err.value.field == "repetition_rate"

    def test_load_config_extends_preset(self, tmp_path):
        path = tmp_path / "mine.yaml"
        path.write_text("extends: ExC\nmemory:\n  spectral_modes: 4\n")
        cfg = devices.load_config(path)
        assert cfg.memory.spectral_modes == 4
        assert cfg.memory.coherence_time == devices.load_preset("ExC").memory.coherence_time

    def test_corrupted_preset_reports_file_and_field(self, tmp_path):
        for path in devices.preset_dir().glob("*.yaml"):
            shutil.copy(path, tmp_path / path.name)
        bad = tmp_path / "wv2.yaml"
        bad.write_text(bad.read_text().replace("coherence_time: 1.5e-6", "coherence_time: -1"))
        errors = devices.validate_presets(tmp_path)
        assert len(errors) == 1
        assert errors[0].field == "memory.coherence_time"
        assert "wv2.yaml" in str(errors[0])

    def test_photon_budget(self):
        cfg = devices.load_preset("ideal")
        assert devices.source_photon_budget(cfg) == 3
        two = devices.config_from_dict({"source": {"p2": 0.01}})
        assert devices.source_photon_budget(two) == 5
