"""Extended-precision eigensolver backed by mpmath."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Literal

import numpy as np

from skinlab import settings
from skinlab.errors import BackendUnavailableError, ModelError

logger = logging.getLogger(__name__)

_PRECISION_RE = re.compile(r"^(double|extended)(?::(\d+))?$")


@dataclass(frozen=True)
class Precision:
    kind: Literal["double", "extended"] = "double"
    digits: int = 16

    @property
    def label(self) -> str:
        return "double" if self.kind == "double" else f"extended:{self.digits}"


DOUBLE = Precision()


def parse_precision(text: str | Precision | None) -> Precision:
    if text is None:
        return DOUBLE
    if isinstance(text, Precision):
        return text
    m = _PRECISION_RE.match(text.strip().lower())
    if not m:
        raise ModelError(f"unknown precision {text!r}; use double or extended[:digits]", op="parse_precision")
    if m.group(1) == "double":
        return DOUBLE
    digits = int(m.group(2)) if m.group(2) else settings.EXTENDED_DIGITS
    if digits < 16:
        raise ModelError("extended precision needs at least 16 digits", op="parse_precision")
    return Precision(kind="extended", digits=digits)


def extended_eig(a: np.ndarray, digits: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eigenvalues with left and right eigenvectors at ``digits`` decimal digits.

    Returns ``(w, vl, vr)`` in the layout of ``scipy.linalg.eig(left=True)``:
    ``vl[:, i].conj() @ a == w[i] * vl[:, i].conj()``. The result is rounded
    back to double for downstream use.
    """
    try:
        import mpmath as mp
    except ImportError as exc:
        raise BackendUnavailableError("mpmath is not installed", op="extended_eig") from exc

    n = a.shape[0]
    logger.debug("extended eig n=%d digits=%d", n, digits)
    with mp.workdps(digits):
        m = mp.matrix(n, n)
        for i in range(n):
            for j in range(n):
                z = a[i, j]
                if z != 0:
                    m[i, j] = mp.mpc(float(z.real), float(z.imag))
        e, el, er = mp.eig(m, left=True, right=True)
        w = np.array([complex(x) for x in e], dtype=complex)
        vr = np.array([[complex(er[i, j]) for j in range(n)] for i in range(n)], dtype=complex)
        # rows of el satisfy el[i, :] * A = e[i] * el[i, :]
        vl = np.array([[complex(el[j, i]) for j in range(n)] for i in range(n)], dtype=complex).conj()
    return w, vl, vr
