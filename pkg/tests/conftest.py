"""Shared fixtures. The pretrained checkpoint is expensive enough to
build once per session; tests must not mutate it in place."""

import pytest

from skdiscourse.encoder import build_base_checkpoint
from skdiscourse.pretraining import PretrainConfig, run_domain_pretraining
from skdiscourse.synthetic import general_domain_corpus, toy_gold_set


@pytest.fixture(scope="session")
def toy_data():
    return toy_gold_set()


@pytest.fixture(scope="session")
def base_texts():
    return general_domain_corpus(400, seed=3)


@pytest.fixture(scope="session")
def base_checkpoint(base_texts, toy_data):
    texts, _ = toy_data
    return build_base_checkpoint(base_texts + texts, vocab_size=800, seed=0)


@pytest.fixture(scope="session")
def pretrain_run(base_checkpoint, base_texts, toy_data):
    texts, _ = toy_data
    config = PretrainConfig(
        epochs=2, batch_size=16, learning_rate=1e-3, max_seq_len=48, seed=0
    )
    return run_domain_pretraining(base_checkpoint, base_texts + texts, config)


@pytest.fixture(scope="session")
def pretrained_checkpoint(pretrain_run):
    return pretrain_run[0]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance test at the end of the run."""
    lines = []
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            # count each test once: setup/teardown only when they broke
            if status == "passed" and getattr(report, "when", "call") != "call":
                continue
            name = nodeid.rsplit("::", 1)[-1]
            verdict = "PASS" if status == "passed" else "FAIL"
            lines.append((name, verdict))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in sorted(set(lines)):
        terminalreporter.write_line(f"{verdict}  {name}")
