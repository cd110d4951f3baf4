import os

import pytest

from elana.backends.simulated import SimulatedBackend, SimulatedBackendConfig

# Scheduler jitter allowance for wall-clock assertions, in ms.  The default
# matches the harness tolerance; noisy CI hosts can widen it via env.
SCHED_TOL_MS = float(os.environ.get("ELANA_SCHED_TOL_MS", "0.5"))


def make_backend(**overrides):
    cfg = SimulatedBackendConfig(**overrides)
    return SimulatedBackend(cfg)


@pytest.fixture
def quiet_backend():
    # no jitter, no warmup penalty: durations are exactly the configured ones
    return make_backend(
        prefill_base_ms=5.0,
        prefill_per_token_ms=0.01,
        decode_step_ms=4.0,
        jitter_ms=0.0,
        warmup_penalty_ms=0.0,
        seed=7,
    )


@pytest.fixture
def virtual_backend():
    return make_backend(
        prefill_base_ms=5.0,
        prefill_per_token_ms=0.01,
        decode_step_ms=4.0,
        seed=7,
        time_mode="virtual",
    )


def llama_like_arch_doc():
    return {
        "model_id": "llama-3.1-8b-like",
        "n_layers": 32,
        "n_kv_heads": 8,
        "head_dim": 128,
        "dtype_bytes": 2,
        "vocab_size": 128256,
    }


def qwen_like_arch_doc():
    return {
        "model_id": "qwen-2.5-7b-like",
        "n_layers": 28,
        "n_kv_heads": 4,
        "head_dim": 128,
        "dtype_bytes": 2,
        "vocab_size": 152064,
    }


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    status = "PASS" if report.passed else "FAIL"
    print(f"\n[acceptance] {name}: {status}")
