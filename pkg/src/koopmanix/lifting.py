"""Observable lifting maps from composite states to lifted vectors.

Three kinds:

* ``identity``          g(x) = [x_r | x_o]
* ``kodex-polynomial``  g(x) = [x_r | psi_r(x_r) | x_o | psi_o(x_o)] where
  psi_r holds the quadratics x_r[i]*x_r[j] for i <= j followed by the cubes
  x_r[i]**3, and psi_o holds the quadratics x_o[i]*x_o[j] for i <= j followed
  by x_o[i]**2 * x_o[j] over all ordered (i, j) pairs, i = j included.
* ``monomial-list``     g(x) = [x_r | x_o | explicit monomials], each monomial
  an exponent vector over the n+m raw dimensions.  Exists so tests can express
  arbitrary observables; the default pipeline never uses it.

Every kind passes the raw state through untransformed, so the original state
is recovered from a lifted vector by slicing alone.  Slot order is part of the
on-disk model contract and must never change (see persist ordering tags).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .statespace import CompositeState, StateLayout

KINDS = ("identity", "kodex-polynomial", "monomial-list")


@dataclass(frozen=True)
class LiftingSpec:
    kind: str
    layout: StateLayout
    # monomial-list only: exponent vectors over the n+m raw dims, e.g. (2, 1)
    # for x0**2 * x1 when n+m == 2.
    monomials: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown lifting kind {self.kind!r}, expected one of {KINDS}")
        if self.kind == "monomial-list":
            if self.monomials is None:
                raise ValueError("monomial-list lifting needs explicit monomials")
            d = self.layout.n + self.layout.m
            mono = tuple(tuple(int(e) for e in m) for m in self.monomials)
            for m in mono:
                if len(m) != d:
                    raise ValueError(f"monomial {m} has {len(m)} exponents, expected {d}")
                if any(e < 0 for e in m):
                    raise ValueError(f"monomial {m} has a negative exponent")
            object.__setattr__(self, "monomials", mono)
        elif self.monomials is not None:
            raise ValueError(f"kind {self.kind!r} does not take explicit monomials")


@dataclass(frozen=True)
class ObservableVector:
    """A lifted state together with the spec that produced it."""

    values: np.ndarray
    spec: LiftingSpec

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 1:
            raise ValueError(f"lifted values must be 1-D, got shape {arr.shape}")
        p = dimension(self.spec)
        if arr.shape[0] != p:
            raise ValueError(f"lifted vector has length {arr.shape[0]}, spec dimension is {p}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)


def _poly_counts(n: int, m: int) -> tuple[int, int]:
    """Slot counts (n', m') of the polynomial blocks psi_r and psi_o."""
    n_extra = n * (n + 1) // 2 + n
    m_extra = m * (m + 1) // 2 + m * m
    return n_extra, m_extra


def dimension(spec: LiftingSpec) -> int:
    """Number p of lifted slots."""
    n, m = spec.layout.n, spec.layout.m
    if spec.kind == "identity":
        return n + m
    if spec.kind == "kodex-polynomial":
        n_extra, m_extra = _poly_counts(n, m)
        return n + n_extra + m + m_extra
    return n + m + len(spec.monomials)


def robot_slice(spec: LiftingSpec) -> slice:
    """Slots holding x_r verbatim: always the leading n."""
    return slice(0, spec.layout.n)


def object_slice(spec: LiftingSpec) -> slice:
    """Slots holding x_o verbatim (empty when m == 0)."""
    n, m = spec.layout.n, spec.layout.m
    if spec.kind == "kodex-polynomial":
        n_extra, _ = _poly_counts(n, m)
        return slice(n + n_extra, n + n_extra + m)
    return slice(n, n + m)


@lru_cache(maxsize=32)
def _poly_indices(n: int, m: int):
    """Index arrays that turn the polynomial blocks into vectorized products."""
    qr_i, qr_j = np.triu_indices(n)
    qo_i, qo_j = np.triu_indices(m)
    # ordered pairs (i, j), i = j included, row-major
    so_i = np.repeat(np.arange(m), m)
    so_j = np.tile(np.arange(m), m)
    return qr_i, qr_j, qo_i, qo_j, so_i, so_j


def lift_matrix(spec: LiftingSpec, raw: np.ndarray) -> np.ndarray:
    """Lift a (T, n+m) block of raw composite rows to a (T, p) block."""
    n, m = spec.layout.n, spec.layout.m
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != n + m:
        raise ValueError(f"raw block must have shape (T, {n + m}), got {raw.shape}")
    xr = raw[:, :n]
    xo = raw[:, n:]
    if spec.kind == "identity":
        return raw.copy()
    if spec.kind == "kodex-polynomial":
        qr_i, qr_j, qo_i, qo_j, so_i, so_j = _poly_indices(n, m)
        blocks = [
            xr,
            xr[:, qr_i] * xr[:, qr_j],
            xr**3,
            xo,
            xo[:, qo_i] * xo[:, qo_j],
            xo[:, so_i] ** 2 * xo[:, so_j],
        ]
        return np.concatenate(blocks, axis=1)
    cols = [raw]
    for mono in spec.monomials:
        exps = np.asarray(mono, dtype=np.float64)
        cols.append(np.prod(raw ** exps[None, :], axis=1, keepdims=True))
    return np.concatenate(cols, axis=1)


def lift(spec: LiftingSpec, state: CompositeState) -> ObservableVector:
    """Lift one composite state.  Raw slots are copied through bit-exactly."""
    n, m = spec.layout.n, spec.layout.m
    if state.x_r.shape[0] != n or state.x_o.shape[0] != m:
        raise ValueError(
            f"state dims ({state.x_r.shape[0]}, {state.x_o.shape[0]}) do not match "
            f"layout ({n}, {m})"
        )
    row = lift_matrix(spec, state.full[None, :])[0]
    return ObservableVector(row, spec)


def monomial_exponents(spec: LiftingSpec) -> np.ndarray:
    """Exponent vector of every lifted slot, shape (p, n+m).

    Row k describes slot k as a monomial over the raw dims.  This is the
    reference description of the slot ordering for serialization and tests.
    """
    n, m = spec.layout.n, spec.layout.m
    d = n + m
    rows: list[np.ndarray] = [np.eye(d, dtype=np.int64)[:n]]
    if spec.kind == "kodex-polynomial":
        qr_i, qr_j, qo_i, qo_j, so_i, so_j = _poly_indices(n, m)
        quad_r = np.zeros((len(qr_i), d), dtype=np.int64)
        for k, (i, j) in enumerate(zip(qr_i, qr_j)):
            quad_r[k, i] += 1
            quad_r[k, j] += 1
        cube_r = 3 * np.eye(d, dtype=np.int64)[:n]
        quad_o = np.zeros((len(qo_i), d), dtype=np.int64)
        for k, (i, j) in enumerate(zip(qo_i, qo_j)):
            quad_o[k, n + i] += 1
            quad_o[k, n + j] += 1
        sq_o = np.zeros((len(so_i), d), dtype=np.int64)
        for k, (i, j) in enumerate(zip(so_i, so_j)):
            sq_o[k, n + i] += 2
            sq_o[k, n + j] += 1
        rows += [quad_r, cube_r, np.eye(d, dtype=np.int64)[n:], quad_o, sq_o]
    else:
        rows.append(np.eye(d, dtype=np.int64)[n:])
        if spec.kind == "monomial-list":
            rows.append(np.asarray(spec.monomials, dtype=np.int64).reshape(len(spec.monomials), d))
    return np.concatenate(rows, axis=0)
