import numpy as np
import pytest

from conftest import atis_shaped_model_and_split

from convnlu.bench import InferenceSession, LatencyReport, allocation_growth, benchmark, paired_benchmark
from convnlu.errors import ConfigError, DataError
from convnlu.model import forward
from convnlu.pruning import prune_step


def _check_session(model, split):
    session = InferenceSession(model, split.max_seq_len)
    for i in range(len(split)):
        ex = split.example(i)
        ref = forward(model, ex)
        intent, slots = session.run(split.token_ids[i], int(split.valid_len[i]))
        if ref.intent_logits is None:
            assert intent is None
        else:
            np.testing.assert_allclose(intent, ref.intent_logits.data, rtol=1e-5, atol=1e-5)
        if ref.slot_logits is None:
            assert slots is None
        else:
            np.testing.assert_allclose(slots, ref.slot_logits.data, rtol=1e-5, atol=1e-5)


class TestInferenceSession:
    @pytest.mark.parametrize("task", ["joint", "intent", "slot"])
    def test_matches_forward(self, encoded, small_model, task):
        _check_session(small_model(task=task, seed=3), encoded[3]["test"].subset(range(25)))

    def test_nonzero_pad_row_ignored(self, encoded, small_model):
        m = small_model(task="intent")
        m.embeddings = m.embeddings.copy()
        m.embeddings[0] = 7.0
        _check_session(m, encoded[3]["test"].subset(range(25)))

    def test_pruned_model(self, encoded, small_model):
        _check_session(prune_step(small_model(), 5), encoded[3]["dev"].subset(range(10)))

    def test_sequence_shorter_than_kernel(self, small_model):
        with pytest.raises(ConfigError):
            InferenceSession(small_model(), max_seq_len=2)


class TestBenchmark:
    def test_report_fields(self, encoded, small_model):
        split = encoded[3]["test"]
        r = benchmark(small_model(), split, warmup=5)
        assert isinstance(r, LatencyReport)
        assert r.samples == len(split) and r.batch_size == 1 and r.warmup == 5
        assert r.mean_ms > 0 and r.std_ms >= 0
        assert r.per_sample_ms == pytest.approx(r.mean_ms)
        assert r.hardware

    def test_empty_split(self, encoded, small_model):
        with pytest.raises(DataError):
            benchmark(small_model(), encoded[3]["test"].subset([]))

    def test_steady_memory(self, encoded, small_model):
        first, last = allocation_growth(small_model(), encoded[3]["test"], passes=3)
        # no per-sample allocation: growth over 240 forwards stays far below one buffer per sample
        assert last < 4096
        assert last - first < 1024

    def test_pruned_not_slower(self, encoded, small_model):
        wide = small_model(num_filters=300, seed=0)
        narrow = prune_step(wide, 150)
        r = paired_benchmark({"wide": wide, "narrow": narrow}, encoded[3]["test"], warmup=20, rounds=3)
        assert r["narrow"].mean_ms <= r["wide"].mean_ms

    def test_back_to_back_stable(self):
        m, split = atis_shaped_model_and_split()
        a = benchmark(m, split, warmup=50)
        b = benchmark(m, split, warmup=50)
        assert abs(a.mean_ms - b.mean_ms) <= 0.2 * max(a.mean_ms, b.mean_ms)

    def test_collector_state_restored(self, encoded, small_model):
        import gc

        benchmark(small_model(), encoded[3]["test"].subset(range(3)), warmup=0)
        assert gc.isenabled()
