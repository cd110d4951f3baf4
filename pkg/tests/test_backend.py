import json
import time

import numpy as np
import pytest

from elana.backends import resolve_backend
from elana.backends.base import BackendCaps, TokenBatch, generate_random_prompts
from elana.backends.simulated import SimulatedBackend, SimulatedBackendConfig
from elana.errors import BackendError, CapabilityError, SchemaError, ValidationError
from elana.latency import Workload

from conftest import SCHED_TOL_MS, make_backend


def virtual(**overrides):
    overrides.setdefault("time_mode", "virtual")
    return make_backend(**overrides)


def test_prompt_generation_is_deterministic():
    a = generate_random_prompts(32000, 4, 128, seed=42)
    b = generate_random_prompts(32000, 4, 128, seed=42)
    c = generate_random_prompts(32000, 4, 128, seed=43)
    assert np.array_equal(a.token_ids, b.token_ids)
    assert not np.array_equal(a.token_ids, c.token_ids)
    assert a.batch == 4 and a.length == 128


def test_prompt_ids_cover_vocab_uniformly():
    prompts = generate_random_prompts(2, 100, 100, seed=0)
    ids = prompts.token_ids
    assert ids.min() >= 0 and ids.max() <= 1
    # 10000 fair coin flips: mean is 0.5 +- 0.02 at four sigma
    assert abs(float(ids.mean()) - 0.5) < 0.02


def test_prompt_generation_rejects_bad_shapes():
    with pytest.raises(ValidationError):
        generate_random_prompts(1, 4, 128, seed=0)
    with pytest.raises(ValidationError):
        generate_random_prompts(100, 0, 128, seed=0)
    with pytest.raises(ValidationError):
        generate_random_prompts(100, 4, 0, seed=0)


def test_token_batch_validation():
    with pytest.raises(ValidationError):
        TokenBatch(token_ids=np.zeros(5, dtype=np.int64))
    with pytest.raises(ValidationError):
        TokenBatch(token_ids=np.zeros((2, 3), dtype=np.float32))
    with pytest.raises(ValidationError):
        TokenBatch(token_ids=np.array([[-1, 2]], dtype=np.int64))


def test_backend_caps_validation():
    with pytest.raises(ValidationError):
        BackendCaps(vocab_size=1, supports_decode_graph=True, device_ids=("d0",))
    with pytest.raises(ValidationError):
        BackendCaps(vocab_size=100, supports_decode_graph=True, device_ids=())


def test_prefill_duration_is_analytic():
    be = virtual(prefill_base_ms=5.0, prefill_per_token_ms=0.01)
    prompts = generate_random_prompts(be.caps.vocab_size, 2, 100, seed=1)
    t0 = be.clock()
    state, first = be.prefill(prompts)
    elapsed_ms = (be.clock() - t0) / 1e6
    assert elapsed_ms == pytest.approx(5.0 + 0.01 * 2 * 100)  # 7 ms exactly
    assert first.shape == (2,)
    assert state is not None


def test_decode_duration_is_analytic():
    be = virtual(decode_step_ms=4.0)
    prompts = generate_random_prompts(be.caps.vocab_size, 1, 16, seed=1)
    state, _ = be.prefill(prompts)
    t0 = be.clock()
    be.decode_step(state)
    assert (be.clock() - t0) / 1e6 == pytest.approx(4.0)


def test_real_mode_prefill_close_to_configured():
    be = make_backend(prefill_base_ms=5.0, prefill_per_token_ms=0.01,
                      jitter_ms=0.0, warmup_penalty_ms=0.0)
    prompts = generate_random_prompts(be.caps.vocab_size, 2, 100, seed=1)
    t0 = time.perf_counter_ns()
    be.prefill(prompts)
    elapsed_ms = (time.perf_counter_ns() - t0) / 1e6
    assert abs(elapsed_ms - 7.0) < SCHED_TOL_MS


def test_warmup_penalty_applies_once():
    be = virtual(prefill_base_ms=5.0, prefill_per_token_ms=0.0, warmup_penalty_ms=30.0)
    prompts = generate_random_prompts(be.caps.vocab_size, 1, 8, seed=0)
    t0 = be.clock()
    be.prefill(prompts)
    cold = (be.clock() - t0) / 1e6
    t0 = be.clock()
    be.prefill(prompts)
    warm = (be.clock() - t0) / 1e6
    assert cold == pytest.approx(35.0)
    assert warm == pytest.approx(5.0)


def test_warmup_penalty_shared_across_ops():
    be = virtual(prefill_base_ms=5.0, prefill_per_token_ms=0.0,
                 decode_step_ms=4.0, warmup_penalty_ms=30.0)
    prompts = generate_random_prompts(be.caps.vocab_size, 1, 8, seed=0)
    state, _ = be.prefill(prompts)  # consumes the penalty
    t0 = be.clock()
    be.decode_step(state)
    assert (be.clock() - t0) / 1e6 == pytest.approx(4.0)


def test_prepared_decode_runs_faster():
    be = virtual(decode_step_ms=10.0, decode_graph_speedup=0.8)
    prompts = generate_random_prompts(be.caps.vocab_size, 2, 8, seed=0)
    state, _ = be.prefill(prompts)
    t0 = be.clock()
    be.decode_step(state)
    plain = (be.clock() - t0) / 1e6
    be.prepare_decode(Workload(batch=2, prompt_len=8, gen_len=4))
    t0 = be.clock()
    be.decode_step(state)
    fast = (be.clock() - t0) / 1e6
    assert plain == pytest.approx(10.0)
    assert fast == pytest.approx(8.0)


def test_prepare_only_covers_matching_batch_size():
    be = virtual(decode_step_ms=10.0, decode_graph_speedup=0.5)
    be.prepare_decode(Workload(batch=4, prompt_len=8, gen_len=4))
    prompts = generate_random_prompts(be.caps.vocab_size, 2, 8, seed=0)
    state, _ = be.prefill(prompts)
    t0 = be.clock()
    be.decode_step(state)
    assert (be.clock() - t0) / 1e6 == pytest.approx(10.0)


def test_tokens_unchanged_by_decode_preparation():
    def run(prepare):
        be = virtual(seed=123)
        prompts = generate_random_prompts(be.caps.vocab_size, 3, 12, seed=5)
        if prepare:
            be.prepare_decode(Workload(batch=3, prompt_len=12, gen_len=6))
        state, first = be.prefill(prompts)
        out = [first]
        for _ in range(5):
            out.append(be.decode_step(state))
        return np.stack(out)

    assert np.array_equal(run(prepare=False), run(prepare=True))


def test_token_stream_reproducible_across_instances():
    def run():
        be = virtual(seed=99)
        prompts = generate_random_prompts(be.caps.vocab_size, 2, 10, seed=1)
        state, first = be.prefill(prompts)
        toks = [first] + [be.decode_step(state) for _ in range(4)]
        return np.stack(toks)

    a, b = run(), run()
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() < 32000


def test_different_seeds_give_different_tokens():
    def first_tokens(seed):
        be = virtual(seed=seed)
        prompts = generate_random_prompts(be.caps.vocab_size, 4, 10, seed=1)
        _, first = be.prefill(prompts)
        return first

    assert not np.array_equal(first_tokens(1), first_tokens(2))


def test_foreign_decode_state_rejected():
    be_a = virtual()
    be_b = virtual()
    prompts = generate_random_prompts(be_a.caps.vocab_size, 1, 8, seed=0)
    state, _ = be_a.prefill(prompts)
    with pytest.raises(ValidationError):
        be_b.decode_step(state)
    with pytest.raises(ValidationError):
        be_a.decode_step("not a state")


def test_prepare_without_fast_path_support():
    be = virtual(supports_decode_graph=False)
    with pytest.raises(CapabilityError):
        be.prepare_decode(Workload(batch=1, prompt_len=8, gen_len=4))


def test_prefill_rejects_bad_prompts():
    be = virtual(vocab_size=100)
    with pytest.raises(ValidationError):
        be.prefill(TokenBatch(token_ids=np.array([[5, 100]], dtype=np.int64)))


def test_jitter_is_bounded_and_seeded():
    def durations(seed):
        be = virtual(prefill_base_ms=5.0, prefill_per_token_ms=0.0, jitter_ms=1.5, seed=seed)
        prompts = generate_random_prompts(be.caps.vocab_size, 1, 4, seed=0)
        out = []
        for _ in range(20):
            t0 = be.clock()
            be.prefill(prompts)
            out.append((be.clock() - t0) / 1e6)
        return out

    a = durations(7)
    assert all(5.0 - 1.5 <= d <= 5.0 + 1.5 for d in a)
    assert len(set(round(d, 6) for d in a)) > 1  # jitter actually varies
    assert a == durations(7)
    assert a != durations(8)


def test_virtual_clock_never_sleeps():
    be = virtual(prefill_base_ms=500.0)
    prompts = generate_random_prompts(be.caps.vocab_size, 1, 4, seed=0)
    wall0 = time.perf_counter()
    be.prefill(prompts)
    assert time.perf_counter() - wall0 < 0.1  # half a second simulated, no wait
    assert be.clock() >= 500_000_000


def test_config_validation():
    with pytest.raises(ValidationError):
        SimulatedBackendConfig(prefill_base_ms=-1.0)
    with pytest.raises(ValidationError):
        SimulatedBackendConfig(decode_graph_speedup=0.0)
    with pytest.raises(ValidationError):
        SimulatedBackendConfig(decode_graph_speedup=1.5)
    with pytest.raises(ValidationError):
        SimulatedBackendConfig(vocab_size=1)
    with pytest.raises(ValidationError):
        SimulatedBackendConfig(time_mode="imaginary")
    with pytest.raises(ValidationError):
        SimulatedBackendConfig(n_devices=0)


def test_config_from_document_rejects_unknown_keys():
    with pytest.raises(SchemaError, match="decode_ms"):
        SimulatedBackendConfig.from_document({"decode_ms": 4.0})
    cfg = SimulatedBackendConfig.from_document({"decode_step_ms": 4.0, "seed": 3})
    assert cfg.decode_step_ms == 4.0
    assert cfg.seed == 3


def test_device_ids_follow_config():
    be = virtual(n_devices=3)
    assert be.caps.device_ids == ("sim0", "sim1", "sim2")


def test_resolve_backend_simulated_default():
    be = resolve_backend("simulated")
    assert isinstance(be, SimulatedBackend)
    assert be.caps.vocab_size == 32000


def test_resolve_backend_from_file(tmp_path):
    path = tmp_path / "sim.json"
    path.write_text(json.dumps({"decode_step_ms": 3.5, "time_mode": "virtual"}))
    be = resolve_backend(f"simulated:{path}")
    assert be.config.decode_step_ms == 3.5


def test_resolve_backend_errors(tmp_path):
    with pytest.raises(BackendError):
        resolve_backend("simulated:/no/such/file.json")
    with pytest.raises(BackendError):
        resolve_backend("warp-drive")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(BackendError):
        resolve_backend(f"simulated:{bad}")
