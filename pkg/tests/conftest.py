import numpy as np
import pytest

from evspike import encoder, kernels, synthgen

BACKENDS = kernels.available_backends()


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    """Each available kernel implementation in turn."""
    return BACKENDS[request.param]


@pytest.fixture(scope="session")
def small_recording():
    cfg = synthgen.GeneratorConfig(duration_s=5.0, noise_sigma=0.1, seed=123)
    return synthgen.generate(cfg)


@pytest.fixture(scope="session")
def small_pcm(small_recording):
    rec, _ = small_recording
    return encoder.to_pcm(rec)


def make_pcm(nonzero_bins, num_bins, bin_us=1e6 / 24000, n_on=None, n_off=None):
    bins = np.asarray(sorted(nonzero_bins), dtype=np.int64)
    on = np.ones(bins.size, np.uint16) if n_on is None else np.asarray(n_on, np.uint16)
    off = np.zeros(bins.size, np.uint16) if n_off is None else np.asarray(n_off, np.uint16)
    return encoder.PcmSeries(bin_us, num_bins, bins, on, off)


_KERNEL_FUNCS = ("delta_modulate", "evspd_scan", "evspd_triggers", "refractory_gate", "greedy_match", "bin_time_us")


@pytest.fixture(params=sorted(BACKENDS))
def each_backend(request, monkeypatch):
    """Route the high-level modules through one kernel backend."""
    impl = BACKENDS[request.param]
    for name in _KERNEL_FUNCS:
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        def order(line):
            word = line.split()[2].rstrip(":")
            return int(word) if word.isdigit() else 99

        for line in sorted(ACCEPTANCE_LINES, key=order):
            terminalreporter.write_line(line)
