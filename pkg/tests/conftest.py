"""Shared builders for small random models."""

import numpy as np
import pytest

from sskan.kan import init_network
from sskan.ssmodel import LinearSS, SsKanModel, init_stable_linear


def random_model(seed: int = 0, n_x: int = 2, n_u: int = 1, n_y: int = 1, hidden: int = 2, kan_g: bool = True, w_b: float = 1.0):
    linear = init_stable_linear(n_x, n_u, n_y, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    linear = LinearSS(linear.A, rng.uniform(-0.5, 0.5, linear.B.shape), rng.uniform(-0.5, 0.5, linear.C.shape), rng.uniform(-0.3, 0.3, linear.D.shape))
    f = init_network([n_x + n_u, hidden, n_x], seed=seed + 1, w_b=w_b, output_scale=0.1)
    g = init_network([n_x + n_u, hidden, n_y], seed=seed + 2, w_b=w_b, output_scale=0.1) if kan_g else None
    model = SsKanModel(linear, f, g)
    theta = model.params()
    theta[model.n_linear :] = rng.normal(0.0, 0.3, theta.size - model.n_linear)
    return model.with_params(theta)


def random_linear(rng, n_x=2, n_u=1, n_y=1, radius=0.9):
    A = rng.normal(size=(n_x, n_x))
    A *= radius / np.max(np.abs(np.linalg.eigvals(A)))
    return LinearSS(A, rng.normal(size=(n_x, n_u)), rng.normal(size=(n_y, n_x)), rng.normal(size=(n_y, n_u)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (status, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def record(criterion: int, ok: bool | None, detail: str) -> None:
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    ACCEPTANCE[criterion] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {status}  {detail}")
