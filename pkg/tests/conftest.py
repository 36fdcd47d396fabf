import itertools

import numpy as np
import pytest


def naive_conv(x, kernel, bias, stride, padding):
    """Nested-loop cross-correlation oracle, written independently of the kernels.

    x: (C_in, *sp), kernel: (C_out, C_in, *k). Returns pre-activation output.
    """
    x = np.asarray(x, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    c_out, c_in = kernel.shape[:2]
    ks = kernel.shape[2:]
    sp = x.shape[1:]
    d = len(ks)
    if np.isscalar(stride):
        stride = (stride,) * d
    before, outs = [], []
    for n, k, s in zip(sp, ks, stride):
        if padding == "valid":
            outs.append((n - k) // s + 1)
            before.append(0)
        else:
            o = (n + s - 1) // s
            tot = max((o - 1) * s + k - n, 0)
            outs.append(o)
            before.append(tot // 2)
    out = np.zeros((c_out,) + tuple(outs))
    for r in range(c_out):
        for pos in itertools.product(*(range(o) for o in outs)):
            acc = bias[r]
            for ci in range(c_in):
                for off in itertools.product(*(range(k) for k in ks)):
                    idx = [p * s + o - b for p, s, o, b in zip(pos, stride, off, before)]
                    if all(0 <= ii < n for ii, n in zip(idx, sp)):
                        acc += kernel[(r, ci) + off] * x[(ci,) + tuple(idx)]
            out[(r,) + pos] = acc
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -------------------------------------------------------
# Tests marked ``criterion(n, summary)`` roll up into one PASS/FAIL line per
# criterion at the end of the run.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, summary): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, summary = mark.args
    ok = rep.passed and rep.when == "call"
    previous = _CRITERIA.get(number, (summary, True))[1]
    _CRITERIA[number] = (summary, previous and ok)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        summary, ok = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {summary}")
