from __future__ import annotations

import logging
from pathlib import Path

import anyio
import numpy as np
import pytest

from orbitlab.aioutil import aiter_items, pool_amap
from orbitlab.logging import log
from orbitlab.util import (
    format_point,
    quantify,
    smoothstep,
    smoothstep_prime,
    sym,
    yaml_dump,
    yaml_load,
)


@pytest.mark.parametrize(
    "qty,singular,plural,expected",
    [
        (0, "level", None, "0 levels"),
        (1, "level", None, "1 level"),
        (2, "level", None, "2 levels"),
        (1, "front point", "front points", "1 front point"),
        (3, "(u1) violation", None, "3 (u1) violations"),
        (5, "radius", "radii", "5 radii"),
    ],
)
def test_quantify(qty: int, singular: str, plural: str | None, expected: str) -> None:
    assert quantify(qty, singular, plural) == expected


def test_yaml(tmp_path: Path) -> None:
    data = {"system": {"kind": "point-quadratic", "frequencies": [1.0, 2.5]}}
    text = yaml_dump(data)
    assert "{" not in text
    path = tmp_path / "config.yaml"
    path.write_text(text)
    assert yaml_load(path) == data


def test_smoothstep() -> None:
    u = np.linspace(-0.5, 1.5, 401)
    s = smoothstep(u)
    assert np.array_equal(s[u <= 0], np.zeros(np.sum(u <= 0)))
    assert np.array_equal(s[u >= 1], np.ones(np.sum(u >= 1)))
    assert smoothstep(0.5) == pytest.approx(0.5)
    assert np.all(np.diff(s) >= 0)
    h = 1e-6
    inner = np.linspace(0.01, 0.99, 50)
    fd = (smoothstep(inner + h) - smoothstep(inner - h)) / (2 * h)
    assert np.allclose(smoothstep_prime(inner), fd, atol=1e-8)
    assert smoothstep_prime(0.0) == 0.0
    assert smoothstep_prime(1.0) == 0.0


def test_format_point() -> None:
    assert format_point([]) == "()"
    assert format_point([0.5, 1.0 / 3]) == "(0.5, 0.333333)"
    assert format_point(2.0) == "(2)"


def test_sym() -> None:
    a = np.arange(8.0).reshape(2, 2, 2)
    s = sym(a)
    assert np.array_equal(s, np.swapaxes(s, -1, -2))
    assert np.array_equal(s[0], [[0.0, 1.5], [1.5, 3.0]])


def test_prefixed_logger(caplog: pytest.LogCaptureFixture) -> None:
    plog = log.sublogger("epsilon=0.1").sublogger("m=(0.5, 0)")
    assert plog.prefix == "epsilon=0.1: m=(0.5, 0)"
    assert log.prefix is None
    plog.info("F = %.3f", 1.25)
    assert caplog.records[-1].getMessage() == "epsilon=0.1: m=(0.5, 0): F = 1.250"
    assert caplog.records[-1].name == "orbitlab"
    assert caplog.records[-1].levelno == logging.INFO
    with plog.timed("Search"):
        pass
    assert caplog.records[-1].getMessage().startswith(
        "epsilon=0.1: m=(0.5, 0): Search: finished in"
    )


@pytest.mark.anyio
async def test_pool_amap_collects_failures() -> None:
    async def job(x: int) -> int:
        await anyio.sleep(0.001 * (5 - x))
        if x % 3 == 0:
            raise ValueError(f"bad input {x}")
        return x * x

    report = await pool_amap(job, aiter_items(range(7)), workers=3)
    assert sorted(report.results) == [(1, 1), (2, 4), (4, 16), (5, 25)]
    assert sorted(x for x, _ in report.failed) == [0, 3, 6]
    assert all(isinstance(e, ValueError) for _, e in report.failed)
    assert not report


@pytest.mark.anyio
async def test_pool_amap_empty() -> None:
    async def job(x: int) -> int:
        return x

    report = await pool_amap(job, aiter_items([]), workers=0)
    assert report
    assert report.results == []
