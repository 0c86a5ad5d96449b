from __future__ import annotations

from functools import lru_cache

import numpy as np
import pytest

from qdetector import liouville as lv
from qdetector import metrics as mt
from qdetector import model
from qdetector import sweep as sw

_ACCEPTANCE: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    _ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[k])


@pytest.fixture
def acceptance():
    return record_acceptance


@pytest.fixture(scope="session")
def app_e():
    """Liouvillian, spectrum and report at the gain-scaling reference point."""
    params = model.appendix_e_params()
    liouv = lv.assemble_liouvillian(params)
    spectral = lv.spectral_decompose(liouv)
    report = mt.analyse(liouv, spectral)
    return params, liouv, spectral, report


@lru_cache(maxsize=None)
def fig3_ok_params(n: int, seed: int) -> tuple[model.DetectorParams, ...]:
    """First ``n`` accepted parameter points drawn from the fig3 preset ranges."""
    out = []
    batch = 0
    while len(out) < n:
        cfg = sw.preset("fig3", N=2 * n, seed=seed + 1000 * batch)
        for s in sw.draw_samples(cfg):
            if s.status != "ok":
                continue
            if sw.evaluate_point(s.params, s.index).ok:
                out.append(s.params)
            if len(out) == n:
                break
        batch += 1
    return tuple(out)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


def random_density(rng, n: int = model.DIM) -> np.ndarray:
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = A @ A.conj().T
    return rho / np.trace(rho)
