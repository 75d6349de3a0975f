import numpy as np
import pytest

from mwprae.tensor import ConvLayerParams


def naive_conv_same(x, w, b, stride):
    """Direct sliding-window evaluation: x (Cin, L), w (Cout, Cin, K)."""
    cin, length = x.shape
    cout, _, k = w.shape
    out_len = -(-length // stride)
    total = max((out_len - 1) * stride + k - length, 0)
    left = total // 2
    y = np.zeros((cout, out_len))
    for co in range(cout):
        for t in range(out_len):
            acc = b[co]
            for ci in range(cin):
                for j in range(k):
                    src = t * stride + j - left
                    if 0 <= src < length:
                        acc += w[co, ci, j] * x[ci, src]
            y[co, t] = acc
    return y


def random_layer(rng, cin, cout, k, stride, transposed=False, scale=0.5):
    shape = (cin, cout, k) if transposed else (cout, cin, k)
    return ConvLayerParams(rng.normal(0, scale, shape), rng.normal(0, 0.1, cout), stride, transposed)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
