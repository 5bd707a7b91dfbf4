import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evspike import encoder, synthgen
from evspike.core import Recording
from evspike.encoder import EncoderConfig, PulseTrain, bin_pcm, encode, recover, sparsity
from evspike.errors import ConfigError, DataError, FormatError, RangeError, TruncationError

FS = 24000.0
BIN_US = 1e6 / FS


def _trace(x, th):
    """Reference per-sample oracle for the multi-event modulator."""
    r = x[0]
    out = []
    for n in range(1, len(x)):
        d = x[n] - r
        while d >= th:
            out.append((n, +1))
            r += th
            d = x[n] - r
        while d <= -th:
            out.append((n, -1))
            r -= th
            d = x[n] - r
    return out


def test_constant_signal_is_silent(each_backend):
    pt = encode(Recording(np.full(50, 0.7), FS))
    assert len(pt) == 0


def test_hand_trace(each_backend):
    rec = Recording(np.array([0, 0.05, 0.25, 0.15, -0.1]), FS)
    cnt = encoder.encode_counts(rec)
    assert cnt[0].tolist() == [2, 4] and cnt[1].tolist() == [1, -1]
    pt = encode(rec)
    assert pt.polarity.tolist() == [1, -1]
    # pulses carry the sample instant rounded up to whole microseconds
    assert pt.times_us.tolist() == [84, 167]


def test_ramp_gives_ten_on_pulses(each_backend):
    # rise of 10 * 0.25 over the record, binary-exact steps
    x = np.linspace(0.0, 2.5, 101)
    pt = encode(Recording(x, FS), EncoderConfig(k=0.25))
    assert np.count_nonzero(pt.polarity > 0) == 10
    assert np.count_nonzero(pt.polarity < 0) == 0


# dyadic samples and threshold keep the sequential oracle free of rounding drift
dyadic = st.lists(st.integers(-256, 256).map(lambda v: v / 64), min_size=1, max_size=200)


@settings(max_examples=60, deadline=None)
@given(dyadic)
def test_matches_reference_oracle(x):
    cfg = EncoderConfig(k=0.25)
    pt = encode(Recording(np.array(x), FS), cfg)
    oracle = _trace(np.array(x), cfg.th_on)
    assert pt.polarity.tolist() == [p for _, p in oracle]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=200), st.sampled_from([0.5, 2.0, 4.0]))
def test_scale_covariance(x, c):
    # scaling signal and thresholds by a power of two leaves the pulse train unchanged
    x = np.array(x)
    a = encode(Recording(x, FS), EncoderConfig(k=0.2))
    b = encode(Recording(c * x, FS), EncoderConfig(k=0.2, v_spike_max=c))
    np.testing.assert_array_equal(a.times_us, b.times_us)
    np.testing.assert_array_equal(a.polarity, b.polarity)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=200))
def test_tracking_invariant(x):
    x = np.array(x)
    ref = np.empty(x.size)
    encode(Recording(x, FS), EncoderConfig(), reference_out=ref)
    assert np.all(np.abs(x - ref) < 0.2)


def test_single_event_mode_resets_reference(each_backend):
    rec = Recording(np.array([0.0, 0.9, 0.9, 0.5]), FS)
    pt = encode(rec, EncoderConfig(allow_multi_event_per_sample=False))
    assert pt.polarity.tolist() == [1, -1]


def test_nonfinite_sample_reports_index():
    with pytest.raises(DataError) as exc:
        encoder.encode_counts(_raw([0.0, 1.0, np.nan]))
    assert exc.value.index == 2


def _raw(x):
    # bypass Recording validation to exercise the encoder's own check
    rec = object.__new__(Recording)
    rec.samples = np.asarray(x, dtype=np.float64)
    rec.sample_rate_hz = FS
    rec.meta = {}
    return rec


def test_bin_example():
    pt = PulseTrain([10, 20, 90], [1, 1, -1])
    pcm = bin_pcm(pt, EncoderConfig(bin_us=41.667), duration_us=200)
    assert pcm.bins.tolist() == [0, 2]
    assert pcm.n_on.tolist() == [2, 0] and pcm.n_off.tolist() == [0, 1]


def test_empty_train_bins():
    pcm = bin_pcm(PulseTrain([], []), EncoderConfig(bin_us=41.667), duration_us=1000)
    assert pcm.bins.size == 0 and pcm.num_bins == 24


def test_pulse_beyond_duration():
    with pytest.raises(RangeError):
        bin_pcm(PulseTrain([10, 5000], [1, 1]), EncoderConfig(bin_us=41.667), duration_us=1000)


def test_bin_smaller_than_sample_period():
    with pytest.raises(ConfigError):
        bin_pcm(PulseTrain([10], [1], FS), EncoderConfig(bin_us=10.0), duration_us=1000)


def test_saturation_is_counted():
    n = encoder.COUNT_MAX + 5
    pcm = bin_pcm(PulseTrain(np.zeros(n, np.int64), np.ones(n)), EncoderConfig(bin_us=100.0), 100.0)
    assert pcm.n_on[0] == encoder.COUNT_MAX and pcm.saturated_bins == 1


def test_event_conservation(small_recording):
    rec, _ = small_recording
    pt = encode(rec)
    pcm = encoder.to_pcm(rec)
    assert pcm.total_events() == len(pt)
    assert int(pcm.n_on.sum()) == int(np.count_nonzero(pt.polarity > 0))


def test_recover_step():
    pcm = encoder.PcmSeries(BIN_US, 4, [1], [3], [0])
    out = recover(pcm, EncoderConfig())
    np.testing.assert_allclose(out.samples, [0, 0.6, 0.6, 0.6])


def test_recover_empty():
    out = recover(encoder.PcmSeries(BIN_US, 10, [], [], []))
    assert np.all(out.samples == 0)


def test_recover_tracking_bound(small_recording):
    rec, _ = small_recording
    cfg = EncoderConfig()
    pcm = encoder.to_pcm(rec, cfg)
    x = rec.samples.astype(np.float64)
    y = recover(pcm, cfg, initial=float(x[0])).samples
    n = min(x.size, y.size)
    slew = np.max(np.abs(np.diff(x)))
    assert np.all(np.abs(y[:n] - x[:n]) < cfg.th_on + slew)


def test_sparsity_definition():
    pcm = encoder.PcmSeries(BIN_US, 100, np.arange(0, 100, 5), np.ones(20), np.zeros(20))
    assert sparsity(pcm).s_pcm == pytest.approx(0.2)
    assert sparsity(encoder.PcmSeries(BIN_US, 100, [], [], [])).s_pcm == 0


def test_npcm_round_trip(tmp_path, small_pcm):
    path = tmp_path / "x.npcm"
    encoder.write_pcm(path, small_pcm)
    back = encoder.read_pcm(path)
    np.testing.assert_array_equal(back.bins, small_pcm.bins)
    np.testing.assert_array_equal(back.n_on, small_pcm.n_on)
    np.testing.assert_array_equal(back.n_off, small_pcm.n_off)
    assert back.bin_us == small_pcm.bin_us and back.num_bins == small_pcm.num_bins
    assert back.source_sha256 == small_pcm.source_sha256
    assert len(back.source_sha256) == 64


def test_npcm_errors(small_pcm):
    data = encoder.pcm_to_bytes(small_pcm)
    with pytest.raises(TruncationError):
        encoder.pcm_from_bytes(data[:-1])
    with pytest.raises(FormatError):
        encoder.pcm_from_bytes(b"NREC1" + data[5:])
    with pytest.raises(FormatError):
        encoder.pcm_from_bytes(synthgen.recording_to_bytes(Recording(np.zeros(3), FS)))
