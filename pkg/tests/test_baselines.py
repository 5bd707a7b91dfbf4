import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evspike import baselines, synthgen
from evspike.baselines import FilterSpec, ThresholdSpec, bandpass, detect_at, detect_neo, filter_array
from evspike.core import Recording
from evspike.errors import ConfigError, DataError

FS = 24000.0


def _rms(x):
    return float(np.sqrt(np.mean(x ** 2)))


def _impulse_gain_db(freq, n=1 << 15):
    """Zero-phase magnitude response at ``freq`` from the FFT of the impulse response."""
    imp = np.zeros(n)
    imp[n // 2] = 1.0
    h = filter_array(imp, FS)
    spec = np.abs(np.fft.rfft(h))
    f = np.fft.rfftfreq(n, 1 / FS)
    return 20 * np.log10(np.interp(freq, f, spec))


def _tone(freq, seconds=1.0):
    t = np.arange(int(FS * seconds)) / FS
    return np.sin(2 * np.pi * freq * t)


def test_dc_rejection():
    out = bandpass(Recording(np.full(24000, 3.0), FS)).samples
    assert np.max(np.abs(out)) < 1e-6 * 3.0


def test_passband_gain():
    x = _tone(1000.0)
    y = filter_array(x, FS)
    core = slice(2400, -2400)  # skip edge transients
    gain_db = 20 * np.log10(_rms(y[core]) / _rms(x[core]))
    assert abs(gain_db) <= 1.0
    assert gain_db == pytest.approx(_impulse_gain_db(1000.0), abs=0.1)


def test_mains_attenuated():
    x = _tone(50.0, seconds=2.0)
    y = filter_array(x, FS)
    core = slice(4800, -4800)
    gain_db = 20 * np.log10(_rms(y[core]) / _rms(x[core]))
    assert gain_db <= -20
    assert _impulse_gain_db(50.0) <= -20


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 1000))
def test_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 2000))
    lhs = filter_array(a * x + b * y, FS)
    rhs = a * filter_array(x, FS) + b * filter_array(y, FS)
    scale = max(np.max(np.abs(lhs)), np.max(np.abs(rhs)), 1e-12)
    assert np.max(np.abs(lhs - rhs)) <= 1e-6 * scale


def test_invalid_corners():
    with pytest.raises(ConfigError):
        baselines.design_bandpass(FS, FilterSpec(low_hz=4000, high_hz=3000))
    with pytest.raises(ConfigError):
        baselines.design_bandpass(FS, FilterSpec(high_hz=13000))


def _template_in_noise(at_sample, sigma=0.05, n=2400, seed=0):
    """Unit negative Gaussian pulse (0.1 ms wide) over white noise."""
    k = np.arange(24)
    pulse = -np.exp(-0.5 * ((k - 12) / 2.4) ** 2)
    x = np.random.default_rng(seed).normal(0, sigma, n)
    x[at_sample:at_sample + k.size] += pulse
    trough_us = (at_sample + 12) * 1e6 / FS
    return x, trough_us


def test_at_all_zero():
    assert len(detect_at(Recording(np.zeros(1000), FS))) == 0


def test_at_single_template():
    x, trough = _template_in_noise(1200)
    det = detect_at(Recording(x, FS))
    assert len(det) == 1
    assert abs(det.times_us[0] - trough) <= 500
    assert det.detector_tag == "at"


def test_at_ignores_positive_spikes():
    x, _ = _template_in_noise(1200, sigma=0.0)
    assert len(detect_at(Recording(-x, FS))) == 0


def test_at_scale_invariant():
    rec, _ = synthgen.generate(synthgen.GeneratorConfig(duration_s=3.0, noise_sigma=0.1, seed=3))
    x = bandpass(rec).samples
    a = detect_at(Recording(x, FS))
    b = detect_at(Recording(10 * x, FS))
    np.testing.assert_array_equal(a.times_us, b.times_us)


def test_neo_operator():
    assert baselines.neo(np.array([0, 1, 2, 1, 0.0]))[2] == 3.0
    assert np.all(baselines.neo(np.full(20, 2.5)) == 0)
    with pytest.raises(DataError):
        baselines.neo(np.array([1.0, 2.0]))


def test_neo_sinusoid_is_constant():
    amp, w = 0.7, 0.3
    x = amp * np.sin(w * np.arange(500))
    psi = baselines.neo(x)[1:-1]
    np.testing.assert_allclose(psi, amp ** 2 * np.sin(w) ** 2, atol=1e-12)


def test_neo_no_detection_on_constant_or_sinusoid():
    assert len(detect_neo(Recording(np.full(500, 1.3), FS))) == 0
    assert len(detect_neo(Recording(0.7 * np.sin(0.3 * np.arange(5000)), FS))) == 0


def test_neo_single_template():
    x, trough = _template_in_noise(1200)
    det = detect_neo(Recording(x, FS))
    assert len(det) == 1 and abs(det.times_us[0] - trough) <= 500


@pytest.mark.parametrize("method", ["absolute", "neo"])
def test_refractory_spacing(method):
    rec, _ = synthgen.generate(synthgen.GeneratorConfig(duration_s=5.0, noise_sigma=0.2, seed=8))
    det = baselines.detect(bandpass(rec), ThresholdSpec(method=method))
    assert len(det) > 0
    assert np.all(np.diff(det.times_us) >= 1000)


def test_threshold_spec_defaults():
    assert ThresholdSpec().multiplier == 4.0
    assert ThresholdSpec(method="neo").multiplier == 8.0
    with pytest.raises(ConfigError):
        ThresholdSpec(method="bogus")
