import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance report

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


class CriterionLog:
    """Collects one verdict per acceptance criterion for the end-of-run summary."""

    def record(self, number: int, title: str, passed: bool, detail: str = "") -> None:
        _CRITERIA[number] = (title, bool(passed), detail)
        print(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")


@pytest.fixture(scope="session")
def criteria():
    return CriterionLog()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")


@pytest.fixture(scope="session")
def toy_teacher_cache(tmp_path_factory):
    """Path of the pre-trained toy teacher, trained once per session."""
    from turbovaed.distill import ToyExperiment

    path = tmp_path_factory.mktemp("teacher") / "toy_teacher.tvwd"
    ToyExperiment().teacher(cache=path)
    return path
