import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evspike import nnspd
from evspike.core import GroundTruth
from evspike.encoder import PcmSeries
from evspike.errors import ConfigError, DatasetError, FormatError
from evspike.nnspd import FrameConfig, FrameSet, MlpModel, TrainConfig

from conftest import make_pcm

BIN_US = 1e6 / 24000
FCFG = FrameConfig()
D = FCFG.frame_length


def frame_oracle(pcm, center, fcfg):
    on, off = pcm.dense()
    vals = []
    for arr in (on, off):
        for j in range(-fcfg.tau_f_bins, fcfg.tau_f_bins + 1):
            b = center + j
            c = arr[b] if 0 <= b < pcm.num_bins else 0
            vals.append(min(c, fcfg.count_clip) / fcfg.count_clip)
    return np.array(vals)


def test_frame_length():
    assert D == 98


def test_frames_match_oracle(small_pcm):
    centers = small_pcm.bins[[0, 5, -1]]
    got = nnspd.build_frames(small_pcm, centers)
    for row, c in zip(got, centers):
        np.testing.assert_allclose(row, frame_oracle(small_pcm, int(c), FCFG))


def test_single_bin_at_truth():
    pcm = make_pcm([100, 400], 600, n_on=[20, 1], n_off=[0, 0])
    gt = GroundTruth(pcm.bin_times_us([100]))
    fs = nnspd.extract_frames(pcm, gt)
    assert fs.labels.tolist() == [1, 0]
    spike = fs[0]
    assert spike.center_bin == 100
    assert spike.values[FCFG.tau_f_bins] == 1.0  # min(20, 15) / 15
    assert np.count_nonzero(spike.values) == 1
    # a bin at 3 of 15 counts
    pcm3 = make_pcm([100, 400], 600, n_on=[3, 1])
    assert nnspd.extract_frames(pcm3, gt)[0].values[FCFG.tau_f_bins] == pytest.approx(0.2)


def test_no_candidates_is_dataset_error():
    with pytest.raises(DatasetError):
        nnspd.extract_frames(make_pcm([], 100), GroundTruth([1000]))


def test_missing_class_is_dataset_error():
    pcm = make_pcm([10], 100)
    with pytest.raises(DatasetError):
        nnspd.extract_frames(pcm, GroundTruth(pcm.bin_times_us([10])))


def test_labels_drop_ambiguous_ring():
    pcm = make_pcm([0, 12, 30, 60], 200)
    gt = GroundTruth(pcm.bin_times_us([0]))
    bins, labels = nnspd.label_candidates(pcm, gt)
    # bin 12 is 500 us away (spike), bin 30 ~1250 us (background), bin 60 background
    assert dict(zip(bins.tolist(), labels.tolist())) == {0: 1, 12: 1, 30: 0, 60: 0}
    pcm2 = make_pcm([0, 18, 60], 200)  # bin 18 sits 750 us from the truth spike
    bins2, _ = nnspd.label_candidates(pcm2, gt)
    assert 18 not in bins2.tolist()


def test_extracted_frames_balanced_and_seeded(small_pcm, small_recording):
    _, gt = small_recording
    a = nnspd.extract_frames(small_pcm, gt, seed=1)
    b = nnspd.extract_frames(small_pcm, gt, seed=1)
    assert np.count_nonzero(a.labels == 1) == np.count_nonzero(a.labels == 0)
    np.testing.assert_array_equal(a.center_bins, b.center_bins)
    assert np.all(np.diff(a.center_bins) > 0)
    assert a.values.shape == (len(a), D)


def _rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


@pytest.mark.parametrize("dims", [[6, 4, 1], [5, 3, 4, 1], [7, 1]])
def test_gradient_check(dims):
    rng = np.random.default_rng(sum(dims))
    model = MlpModel.initialize(dims, seed=3)
    for b in model.biases:
        b[:] = rng.normal(0, 0.1, b.shape)
    x = rng.normal(size=(8, dims[0]))
    y = rng.integers(0, 2, 8)
    _, gws, gbs = nnspd.loss_and_grads(model, x, y)
    h = 1e-4
    for params, grads in ((model.weights, gws), (model.biases, gbs)):
        for p, g in zip(params, grads):
            for idx in np.ndindex(p.shape):
                orig = p[idx]
                p[idx] = orig + h
                up = nnspd.loss_and_grads(model, x, y)[0]
                p[idx] = orig - h
                down = nnspd.loss_and_grads(model, x, y)[0]
                p[idx] = orig
                num = (up - down) / (2 * h)
                assert abs(num - g[idx]) < 1e-7 or _rel_err(num, g[idx]) < 1e-3


def _toy(n=200):
    x = np.zeros((n, D))
    y = np.arange(n) % 2
    x[y == 1, : D // 2] = 1.0
    return FrameSet(x, y.astype(np.int8), np.arange(n))


def test_separable_toy_reaches_full_validation_accuracy():
    model, log = nnspd.train(_toy(), [D, 1], TrainConfig(epochs=50, seed=2))
    assert model.train_meta["best_val_acc"] == 1.0
    assert max(r["val_acc"] for r in log) == 1.0


def test_zero_epochs_returns_initialization():
    rng = np.random.default_rng(0)
    n = 400
    fs = FrameSet(rng.random((n, D)), (np.arange(n) % 2).astype(np.int8), np.arange(n))
    model, log = nnspd.train(fs, [D, 8, 1], TrainConfig(epochs=0, seed=5))
    again, _ = nnspd.train(fs, [D, 8, 1], TrainConfig(epochs=0, seed=5))
    assert len(log) == 1 and log[0]["epoch"] == 0
    for p, q in zip(model.parameters(), again.parameters()):
        np.testing.assert_array_equal(p, q)
    assert model.train_meta["epochs_run"] == 0
    assert abs(log[0]["val_acc"] - 0.5) <= 0.1


def test_training_is_deterministic():
    a, la = nnspd.train(_toy(), [D, 4, 1], TrainConfig(epochs=3, seed=9))
    b, lb = nnspd.train(_toy(), [D, 4, 1], TrainConfig(epochs=3, seed=9))
    assert la == lb
    assert nnspd.model_to_json(a) == nnspd.model_to_json(b)


def test_input_dim_mismatch():
    with pytest.raises(ConfigError):
        nnspd.train(_toy(), [D + 1, 1])


def online_oracle(pcm, model, fcfg, t_ref_us):
    out, last = [], None
    for b in pcm.bins:
        t = int(np.floor((b + 0.5) * pcm.bin_us + 0.5))
        if last is not None and t - last < t_ref_us:
            continue
        if model.predict_proba(frame_oracle(pcm, int(b), fcfg))[0] > model.decision_threshold:
            out.append(t)
            last = t
    return out


@settings(max_examples=25, deadline=None)
@given(nz=st.lists(st.integers(0, 399), min_size=1, max_size=120, unique=True), seed=st.integers(0, 50))
def test_online_inference_matches_sequential_oracle(nz, seed):
    rng = np.random.default_rng(seed)
    pcm = make_pcm(nz, 400, n_on=rng.integers(1, 20, len(nz)), n_off=rng.integers(0, 3, len(nz)))
    model = MlpModel.initialize([D, 6, 1], seed=seed)
    model.biases[-1][:] = rng.normal(0, 0.5)
    det = nnspd.infer_online(pcm, model, FCFG, t_ref_us=1000)
    assert det.times_us.tolist() == online_oracle(pcm, model, FCFG, 1000)


def test_constant_negative_model_never_fires(small_pcm, each_backend):
    model = MlpModel([D, 1], [np.zeros((D, 1))], [np.array([-10.0])])
    assert len(nnspd.infer_online(small_pcm, model)) == 0
    assert len(nnspd.infer_online(make_pcm([], 50), model)) == 0


def test_always_firing_model_respects_refractory(small_pcm, each_backend):
    model = MlpModel([D, 1], [np.zeros((D, 1))], [np.array([10.0])])
    det = nnspd.infer_online(small_pcm, model, t_ref_us=1000)
    assert len(det) > 0 and np.all(np.diff(det.times_us) >= 1000)
    assert det.detector_tag == "mlp"


def mac_counter(dims, x):
    """Forward pass with an explicit multiply counter."""
    model = MlpModel.initialize(dims, seed=0)
    macs = 0
    h = list(x)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        nxt = []
        for o in range(w.shape[1]):
            acc = b[o]
            for k in range(w.shape[0]):
                acc += h[k] * w[k, o]
                macs += 1
            nxt.append(acc if i == len(model.weights) - 1 else max(acc, 0.0))
        h = nxt
    return macs


def test_complexity_hand_values():
    r = nnspd.complexity([10, 4, 1], 1.0)
    assert (r.mac_per_frame_dense, r.num_params, r.memory_bits) == (44, 49, 1568)
    assert r.mac_per_frame_effective == r.mac_per_frame_dense
    assert nnspd.complexity([98, 32, 1], 0.2).mac_per_frame_effective == pytest.approx(659.2)


def test_complexity_matches_instrumented_counter():
    rng = np.random.default_rng(11)
    for _ in range(20):
        dims = [int(rng.integers(1, 12))] + [int(v) for v in rng.integers(1, 10, rng.integers(0, 3))] + [1]
        r = nnspd.complexity(MlpModel.initialize(dims), 1.0)
        assert r.mac_per_frame_dense == mac_counter(dims, rng.random(dims[0]))


def test_model_round_trip(tmp_path, small_pcm):
    model = MlpModel.initialize([D, 5, 1], seed=4)
    model.train_meta = {"seed": 4}
    path = tmp_path / "m.json"
    nnspd.save_model(path, model)
    back = nnspd.load_model(path)
    assert back.layer_dims == model.layer_dims and back.train_meta == {"seed": 4}
    for p, q in zip(model.parameters(), back.parameters()):
        np.testing.assert_array_equal(p, q)
    np.testing.assert_array_equal(nnspd.score_candidates(small_pcm, model),
                                  nnspd.score_candidates(small_pcm, back))


def test_model_wrong_dims(tmp_path):
    text = nnspd.model_to_json(MlpModel.initialize([4, 3, 1])).replace('"layer_dims": [4, 3, 1]',
                                                                       '"layer_dims": [4, 2, 1]')
    with pytest.raises(FormatError):
        nnspd.model_from_json(text)
    with pytest.raises(FormatError):
        nnspd.model_from_json("{not json")
