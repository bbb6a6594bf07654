import math

import numpy as np

from amloda.nn import LstmModel


def sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def hand_unrolled_prob(p, window):
    """Scalar H=1 recurrence written out gate by gate, independent of the batched code."""
    def cell(W, b, u, h, c):
        zi = W[0][0] * u + W[0][1] * h + b[0]
        zf = W[1][0] * u + W[1][1] * h + b[1]
        zo = W[2][0] * u + W[2][1] * h + b[2]
        zg = W[3][0] * u + W[3][1] * h + b[3]
        c = sig(zf) * c + sig(zi) * math.tanh(zg)
        return sig(zo) * math.tanh(c), c

    h1 = c1 = h2 = c2 = 0.0
    for x in window:
        h1, c1 = cell(p["W1"], p["b1"], x, h1, c1)
        h2, c2 = cell(p["W2"], p["b2"], max(h1, 0.0), h2, c2)
    return sig(p["w_out"][0] * h2 + p["b_out"][0])


HAND = {
    "W1": [[0.5, -0.3], [0.2, 0.1], [0.7, 0.4], [1.2, -0.6]],
    "b1": [0.1, 0.3, -0.2, 0.05],
    "W2": [[-0.4, 0.6], [0.3, -0.2], [0.8, 0.1], [0.9, 0.5]],
    "b2": [0.0, -0.1, 0.2, 0.3],
    "w_out": [1.7],
    "b_out": [-0.25],
}


def hand_model():
    return LstmModel(1, {k: np.array(v, dtype=float) for k, v in HAND.items()})


# acceptance lines, filled by test_acceptance.py and printed after the run
ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
