import random

from streamjoin.core import TUPLE_BYTES, encode_tuple
from streamjoin.workload import (
    StreamSource,
    WorkloadConfig,
    arrival_to_tuple,
    dump_trace,
    next_interarrival,
    next_key,
    replay_trace,
)


class TestInterarrival:
    def test_sample_mean_within_2_percent(self):
        rng = random.Random(101)
        n = 10**5
        total = sum(next_interarrival(1500.0, rng) for _ in range(n))
        assert abs(total / n - 1 / 1500) / (1 / 1500) < 0.02

    def test_doubling_rate_halves_mean(self):
        means = []
        for rate in (400.0, 800.0):
            rng = random.Random(55)
            n = 10**5
            means.append(sum(next_interarrival(rate, rng) for _ in range(n)) / n)
        assert abs(means[0] / means[1] - 2.0) < 0.04

    def test_reproducible_under_fixed_seed(self):
        a = [next_interarrival(100.0, random.Random(9)) for _ in range(5)]
        b = [next_interarrival(100.0, random.Random(9)) for _ in range(5)]
        assert a == b

    def test_zero_rate_means_silence(self):
        assert next_interarrival(0.0, random.Random(1)) is None


class TestBModelKeys:
    def _freq_low_half(self, b, n=10**5, domain=10**6, depth=1):
        rng = random.Random(77)
        hits = sum(1 for _ in range(n)
                   if next_key(b, depth, domain, rng) < domain // 2)
        return hits / n

    def test_unbiased_is_uniform(self):
        # chi-square against 16 equal bins at b=0.5
        rng = random.Random(13)
        n = 10**5
        domain = 2**20
        bins = [0] * 16
        for _ in range(n):
            bins[next_key(0.5, 10, domain, rng) * 16 // domain] += 1
        expected = n / 16
        chi2 = sum((c - expected) ** 2 / expected for c in bins)
        assert chi2 < 37.7  # chi2_{0.999, df=15}

    def test_eighty_twenty_shape(self):
        assert abs(self._freq_low_half(0.8) - 0.8) < 0.01

    def test_default_bias_shape(self):
        assert abs(self._freq_low_half(0.7) - 0.7) < 0.01

    def test_keys_stay_in_domain(self):
        rng = random.Random(3)
        for _ in range(2000):
            assert 0 <= next_key(0.9, 10, 1000, rng) < 1000


class TestStreamSource:
    def test_tuples_serialize_to_64_bytes_in_domain(self):
        cfg = WorkloadConfig(200.0, 0.7, 10, 10_000_000, seed=5)
        src = StreamSource(0, cfg)
        for _ in range(200):
            arrival_ns, stream, key, serial = next(src)
            t = arrival_to_tuple(arrival_ns, stream, key, serial)
            assert len(encode_tuple(t)) == TUPLE_BYTES
            assert 0 <= key <= 10_000_000

    def test_serials_are_per_stream_arrival_indexes(self):
        cfg = WorkloadConfig(100.0, 0.5, 4, 1000, seed=6)
        src = StreamSource(1, cfg)
        serials = [next(src)[3] for _ in range(50)]
        assert serials == list(range(50))

    def test_uniform_process_is_evenly_spaced(self):
        cfg = WorkloadConfig(100.0, 0.5, 4, 1000, seed=6, process="uniform")
        src = StreamSource(0, cfg)
        times = [next(src)[0] for _ in range(10)]
        gaps = {times[i + 1] - times[i] for i in range(9)}
        assert max(gaps) - min(gaps) <= 1  # ns rounding only

    def test_deterministic_streams(self):
        cfg = WorkloadConfig(300.0, 0.7, 10, 5000, seed=8)
        a = [next(StreamSource(0, cfg)) for _ in range(1)]
        b = [next(StreamSource(0, cfg)) for _ in range(1)]
        assert a == b


def test_trace_roundtrip(tmp_path):
    cfg = WorkloadConfig(150.0, 0.7, 10, 99_999, seed=21)
    src = StreamSource(0, cfg)
    arrivals = [next(src) for _ in range(64)]
    path = tmp_path / "trace.bin"
    assert dump_trace(path, arrivals) == 64
    assert path.stat().st_size == 64 * (8 + TUPLE_BYTES)
    replayed = list(replay_trace(path))
    assert replayed == arrivals
