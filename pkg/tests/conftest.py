import pytest

from questmf.data import SynthConfig, synth_generate
from questmf.models import ArchConfig
from questmf.training import TrainConfig

TINY_WIDTHS = {"text": 6, "audio": 3, "video": 5}


def tiny_arch() -> ArchConfig:
    return ArchConfig(d_lstm=2, heads=2, mlp_hidden=4, max_turns=4)


def tiny_config(**kw) -> TrainConfig:
    base = dict(arch=tiny_arch(), epochs={"text": 2, "audio": 2, "video": 2, "fusion": 2})
    return TrainConfig(**{**base, **kw})


def tiny_synth(**kw) -> SynthConfig:
    base = dict(n_train=12, n_validation=6, n_test=6, widths=TINY_WIDTHS, turn_range=(2, 4),
                class_prior=(0.25,) * 4, min_expected_count=1, seed=1)
    return SynthConfig(**{**base, **kw})


@pytest.fixture(scope="session")
def tiny_dataset():
    return synth_generate(tiny_synth())


CRITERIA = {
    1: "loss values and ImbOLL weighting",
    2: "gradient suite",
    3: "metric oracle",
    4: "mask invariance",
    5: "overfit fixture",
    6: "end-to-end synthetic run, three seeds",
    7: "determinism of the seed-42 rerun",
    8: "non-reproducible reference numbers and report format",
    9: "scoring properties",
}
_outcomes: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(mark.args[0], []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, desc in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            status = "NOT RUN"
        elif all(r == "passed" for r in results):
            status = "PASS"
        elif any(r == "failed" for r in results):
            status = "FAIL"
        else:
            status = "SKIPPED"
        terminalreporter.write_line(f"criterion {n}: {status:<7} {desc}")
