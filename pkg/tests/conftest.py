import numpy as np
import pytest

from learnedpf.numerics import autodiff as ad


def directional_check(fn, params, rng, h=1e-6):
    """Compare the tape gradient of ``fn`` with a central difference along a random direction.

    ``fn(values)`` maps a name -> array/Var dict to a scalar.  Returns the
    relative error ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    tape = ad.Tape()
    loss = fn(tape.params_from(params))
    grads = tape.backward(loss)
    direction = {k: rng.standard_normal(np.shape(v)) for k, v in params.items()}
    analytic = sum(float(np.sum(grads[k] * direction[k])) for k in params)

    def at(step):
        return float(ad.value_of(fn({k: params[k] + step * direction[k] for k in params})))

    numeric = (at(h) - at(-h)) / (2 * h)
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report one line each; the lines are repeated at the end of the run
ACCEPTANCE_LINES = {}


def record_criterion(number, title, ok, detail, seconds, budget):
    """Store and print the pass/fail line of one acceptance criterion."""
    within = seconds <= budget
    status = "PASS" if ok and within else "FAIL"
    line = (f"criterion {number} [{status}] {title}: {detail} "
            f"({seconds:.1f}s, budget {budget:.0f}s{'' if within else ', over budget'})")
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok and within


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
