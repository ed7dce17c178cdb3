import contextlib
import time

import pytest

_LINES = {}


@pytest.fixture
def criterion(request):
    """Context manager recording one PASS/FAIL line per acceptance criterion."""

    @contextlib.contextmanager
    def record(number, title, budget_s=None):
        detail = {}
        start = time.perf_counter()
        status = "FAIL"
        try:
            yield detail
            elapsed = time.perf_counter() - start + detail.get("setup_s", 0.0)
            detail["runtime"] = f"{elapsed:.2f}s"
            if budget_s is not None and elapsed > budget_s:
                detail["budget"] = f"exceeded {budget_s}s"
                raise AssertionError(f"criterion {number} took {elapsed:.1f}s > {budget_s}s")
            status = "PASS"
        except BaseException as exc:
            detail.setdefault("error", f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
            raise
        finally:
            info = "  ".join(f"{k}={v}" for k, v in detail.items() if k != "setup_s")
            line = f"criterion {number:>2} {status}  {title}  {info}"
            _LINES[number] = line
            print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_LINES):
        terminalreporter.write_line(_LINES[k])
