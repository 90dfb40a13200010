"""Analytical least-squares fit of lifted linear reference dynamics.

The one-step map in observable space, g(x(t+1)) ~= K g(x(t)), is fit in
closed form: K = A G+ where A and G accumulate the lifted outer products
g(x(t+1)) g(x(t))^T and g(x(t)) g(x(t))^T over all consecutive pairs, each
trajectory weighted by 1 / (N (T_i - 1)) so trajectory count and length do
not bias the solution.  G+ is a truncated-SVD pseudoinverse.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .lifting import LiftingSpec, ObservableVector, dimension, lift, lift_matrix, object_slice, robot_slice
from .statespace import CompositeState, DemonstrationSet, StateLayout, Trajectory, validate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitAccumulators:
    """Weighted sums A and G (both p x p) and the number of pairs they saw."""

    A: np.ndarray
    G: np.ndarray
    pair_count: int


@dataclass(frozen=True)
class FitMeta:
    n_demos: int
    n_pairs: int
    wall_time_s: float
    rank: int
    cond: float


@dataclass(frozen=True)
class KoopmanModel:
    """Lifted linear one-step model: g(t+1) = K g(t)."""

    K: np.ndarray
    spec: LiftingSpec
    layout: StateLayout
    fit_meta: FitMeta | None = None

    def __post_init__(self):
        K = np.array(self.K, dtype=np.float64, copy=True)
        p = dimension(self.spec)
        if K.shape != (p, p):
            raise ValueError(f"K must be ({p}, {p}) for this lifting, got {K.shape}")
        K.setflags(write=False)
        object.__setattr__(self, "K", K)
        if self.layout != self.spec.layout:
            raise ValueError("model layout does not match the lifting spec layout")


def max_threads() -> int:
    """Parallelism cap: KOOPMANIX_THREADS if set, else the CPU count."""
    raw = os.environ.get("KOOPMANIX_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    cap = int(raw)
    if cap < 1:
        raise ValueError(f"KOOPMANIX_THREADS must be a positive integer, got {raw!r}")
    return cap


def default_pinv_tolerance(p: int) -> float:
    """Relative singular-value cutoff: machine epsilon times the lifted dimension."""
    return float(np.finfo(np.float64).eps) * p


def _check_demos(demos: DemonstrationSet, spec: LiftingSpec) -> None:
    if demos.layout != spec.layout:
        raise ValueError("demonstration layout does not match the lifting spec layout")
    report = validate(demos)
    if not report.ok:
        v = report.violations[0]
        raise ValueError(
            f"invalid demonstrations ({len(report.violations)} violations; "
            f"first: traj {v.traj}, t {v.t}: {v.message})"
        )


def _traj_accumulators(spec: LiftingSpec, traj: Trajectory, weight: float, index: int):
    raw = np.stack([s.full for s in traj.states])
    phi = lift_matrix(spec, raw)
    if not np.isfinite(phi).all():
        raise ValueError(f"lifted values overflow in trajectory {index}")
    A_i = (phi[1:].T @ phi[:-1]) * weight
    G_i = (phi[:-1].T @ phi[:-1]) * weight
    return A_i, G_i


def accumulate(demos: DemonstrationSet, spec: LiftingSpec, parallel: bool = False) -> FitAccumulators:
    """Build the weighted accumulators A and G over all consecutive pairs.

    Sequential accumulation runs in trajectory order then time order and is
    bit-reproducible.  With parallel=True the per-trajectory contributions are
    computed on a thread pool (capped by KOOPMANIX_THREADS) and reduced in the
    same trajectory order, so the result matches the sequential one.
    """
    _check_demos(demos, spec)
    p = dimension(spec)
    N = demos.n_demos
    weights = [1.0 / (N * (traj.horizon - 1)) for traj in demos.trajectories]
    A = np.zeros((p, p))
    G = np.zeros((p, p))
    if parallel:
        with ThreadPoolExecutor(max_workers=max_threads()) as pool:
            parts = list(
                pool.map(
                    _traj_accumulators,
                    [spec] * N,
                    demos.trajectories,
                    weights,
                    range(N),
                )
            )
    else:
        parts = [
            _traj_accumulators(spec, traj, w, i)
            for i, (traj, w) in enumerate(zip(demos.trajectories, weights))
        ]
    for A_i, G_i in parts:
        A += A_i
        G += G_i
    pair_count = sum(traj.horizon - 1 for traj in demos.trajectories)
    return FitAccumulators(A, G, pair_count)


def _svd_pinv(mat: np.ndarray, rel_tolerance: float):
    U, s, Vt = np.linalg.svd(mat)  # LinAlgError on non-convergence propagates
    cutoff = rel_tolerance * (s[0] if s.size else 0.0)
    keep = s > cutoff
    rank = int(np.count_nonzero(keep))
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    pinv = (Vt.T * inv_s) @ U.T
    return pinv, rank, s


def pseudo_inverse(mat: np.ndarray, rel_tolerance: float) -> tuple[np.ndarray, int]:
    """Moore-Penrose pseudoinverse with relative singular-value truncation.

    Singular values s_i <= rel_tolerance * s_max are treated as zero.  Returns
    the pseudoinverse and the retained rank.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    if not np.isfinite(mat).all():
        raise ValueError("matrix has non-finite entries")
    if rel_tolerance < 0:
        raise ValueError(f"rel_tolerance must be >= 0, got {rel_tolerance}")
    pinv, rank, _ = _svd_pinv(mat, rel_tolerance)
    return pinv, rank


def solve_koopman(A: np.ndarray, G: np.ndarray, rel_tolerance: float | None = None) -> tuple[np.ndarray, int]:
    """K = A G+ from accumulators.  rel_tolerance=None uses the default cutoff."""
    if rel_tolerance is None:
        rel_tolerance = default_pinv_tolerance(G.shape[0])
    pinv, rank = pseudo_inverse(G, rel_tolerance)
    return A @ pinv, rank


def fit(
    demos: DemonstrationSet,
    spec: LiftingSpec,
    rel_tolerance: float | None = None,
    parallel: bool = False,
) -> KoopmanModel:
    """Fit the lifted linear model analytically (no iterative optimization)."""
    t0 = time.perf_counter()
    acc = accumulate(demos, spec, parallel=parallel)
    p = dimension(spec)
    if rel_tolerance is None:
        rel_tolerance = default_pinv_tolerance(p)
    if rel_tolerance < 0:
        raise ValueError(f"rel_tolerance must be >= 0, got {rel_tolerance}")
    pinv, rank, s = _svd_pinv(acc.G, rel_tolerance)
    K = acc.A @ pinv
    wall = time.perf_counter() - t0
    cond = float(s[0] / s[rank - 1]) if rank > 0 else float("inf")
    meta = FitMeta(
        n_demos=demos.n_demos,
        n_pairs=acc.pair_count,
        wall_time_s=wall,
        rank=rank,
        cond=cond,
    )
    logger.info(
        "fit: pairs=%d p=%d rank=%d cond=%.3e wall=%.4fs",
        acc.pair_count, p, rank, cond, wall,
    )
    return KoopmanModel(K=K, spec=spec, layout=spec.layout, fit_meta=meta)


def cost(model: KoopmanModel, demos: DemonstrationSet) -> float:
    """Unweighted imitation cost J(K) = 1/2 sum over pairs of |g(t+1) - K g(t)|^2."""
    _check_demos(demos, model.spec)
    J = 0.0
    for traj in demos.trajectories:
        raw = np.stack([s.full for s in traj.states])
        phi = lift_matrix(model.spec, raw)
        resid = phi[1:] - phi[:-1] @ model.K.T
        J += 0.5 * float(np.sum(resid * resid))
    return J


def predict_step(model: KoopmanModel, lifted: ObservableVector) -> ObservableVector:
    """One step in observable space: K @ g."""
    p = dimension(model.spec)
    if lifted.values.shape[0] != p:
        raise ValueError(f"lifted vector has length {lifted.values.shape[0]}, model expects {p}")
    return ObservableVector(model.K @ lifted.values, model.spec)


def rollout(
    model: KoopmanModel,
    init: CompositeState,
    horizon: int,
    mode: str = "linear",
) -> np.ndarray:
    """Roll the model forward; return the robot reference, shape (horizon, n).

    mode="linear" propagates purely in observable space (the default: the
    lifted state is never rebuilt from its slices).  mode="relift" extracts
    the raw state after each step and lifts it again, re-imposing the
    polynomial relations between slots.
    """
    if mode not in ("linear", "relift"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    rs = robot_slice(model.spec)
    os_ = object_slice(model.spec)
    g = lift(model.spec, init).values.copy()
    out = np.empty((horizon, model.layout.n))
    out[0] = g[rs]
    for t in range(1, horizon):
        g = model.K @ g
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite reference state at step {t + 1} of {horizon}")
        if mode == "relift":
            raw = np.concatenate([g[rs], g[os_]])
            g = lift_matrix(model.spec, raw[None, :])[0]
        out[t] = g[rs]
    return out


def prediction_errors(model: KoopmanModel, demos: DemonstrationSet) -> np.ndarray:
    """Per-pair one-step state prediction errors |x_hat(t+1) - x(t+1)|_2.

    Predictions are made in observable space and compared on the raw state
    slots, so errors are comparable across lifting kinds.
    """
    _check_demos(demos, model.spec)
    rs = robot_slice(model.spec)
    os_ = object_slice(model.spec)
    errs = []
    for traj in demos.trajectories:
        raw = np.stack([s.full for s in traj.states])
        phi = lift_matrix(model.spec, raw)
        pred = phi[:-1] @ model.K.T
        diff = np.concatenate([pred[:, rs] - raw[1:, : model.layout.n],
                               pred[:, os_] - raw[1:, model.layout.n :]], axis=1)
        errs.append(np.sqrt(np.sum(diff * diff, axis=1)))
    return np.concatenate(errs)
