import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from minkalpha import _kernels, _pykernels  # noqa: E402

try:
    from minkalpha import _ckernels
except ImportError:  # extension not built
    _ckernels = None

# (label, passed, detail) per acceptance criterion, filled by test_acceptance
ACCEPTANCE: dict = {}


def record(label: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[label] = (bool(passed), detail)


def format_line(label: str, passed: bool, detail: str) -> str:
    return f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0].split("-")[1])):
        passed, detail = ACCEPTANCE[label]
        terminalreporter.write_line(format_line(label, passed, detail))


BACKENDS = ["python"] + (["cython"] if _ckernels is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Route the kernel dispatch through one implementation."""
    impl = _pykernels if request.param == "python" else _ckernels
    for name in ("llt_conjugate_1d", "network_simplex", "BACKEND"):
        monkeypatch.setattr(_kernels, name, getattr(impl, name))
    return request.param
