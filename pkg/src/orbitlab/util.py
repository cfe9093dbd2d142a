from __future__ import annotations

from io import StringIO
from pathlib import Path
import sys
from types import TracebackType
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from ruamel.yaml import YAML

FloatArray = NDArray[np.float64]


def is_interactive() -> bool:
    """Return True if all in/outs are tty"""
    return sys.stdin.isatty() and sys.stdout.isatty() and sys.stderr.isatty()


def pdb_excepthook(
    exc_type: type[BaseException], exc_value: BaseException, tb: TracebackType | None
) -> None:
    import traceback

    traceback.print_exception(exc_type, exc_value, tb)
    print()
    if is_interactive():
        import pdb

        pdb.post_mortem(tb)


def quantify(qty: int, singular: str, plural: str | None = None) -> str:
    if qty == 1:
        return f"{qty} {singular}"
    elif plural is None:
        return f"{qty} {singular}s"
    else:
        return f"{qty} {plural}"


def yaml_load(path: Path) -> Any:
    yaml = YAML(typ="safe")
    with path.open() as fp:
        return yaml.load(fp)


def yaml_dump(data: Any) -> str:
    yaml = YAML(typ="safe")
    yaml.default_flow_style = False
    out = StringIO()
    yaml.dump(data, out)
    return out.getvalue()


def smoothstep(u: ArrayLike) -> FloatArray:
    """
    Quintic smoothstep ``10u³ − 15u⁴ + 6u⁵`` clamped to [0, 1]; C² at both
    ends
    """
    v = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    out: FloatArray = v**3 * (10.0 + v * (-15.0 + 6.0 * v))
    return out


def smoothstep_prime(u: ArrayLike) -> FloatArray:
    v = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    out: FloatArray = 30.0 * v**2 * (1.0 - v) ** 2
    return out


def smoothstep_second(u: ArrayLike) -> FloatArray:
    v = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    out: FloatArray = 60.0 * v * (1.0 - v) * (1.0 - 2.0 * v)
    return out


def format_point(x: ArrayLike) -> str:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.size == 0:
        return "()"
    return "(" + ", ".join(f"{v:.6g}" for v in arr) + ")"


def sym(a: FloatArray) -> FloatArray:
    out: FloatArray = 0.5 * (a + np.swapaxes(a, -1, -2))
    return out
