"""Shared, cached solves used by several test modules."""

from __future__ import annotations

import functools

import pytest

from degma.grid import Domain2D
from degma.monge_ampere import eigen_solve, newton_solve


@functools.lru_cache(maxsize=None)
def disc_solution(q: int, n_r: int, n_theta: int = 16, lam: float = 1.0):
    return newton_solve(Domain2D.disc(), q, lam, n_r=n_r, n_theta=n_theta)


@functools.lru_cache(maxsize=None)
def disc_eigen(n_r: int, n_theta: int = 16, radius: float = 1.0):
    return eigen_solve(Domain2D.disc(radius), n_r=n_r, n_theta=n_theta)


@pytest.fixture(scope="session")
def solutions():
    return disc_solution


@pytest.fixture(scope="session")
def eigens():
    return disc_eigen


# acceptance criteria report: one line per criterion, printed in the terminal summary
_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
