"""Affine-parametric problem descriptions.

An :class:`AffineProblem` bundles the parameter box, the coefficient
functions ``theta_q``, references to the parameter-independent operator
components ``A_q``, the load/output vectors, and the inner-product matrix
of the truth space.  Everything here is immutable after construction and
safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import InvalidParameterError, ResourceError

# Hard cap on training-set size: number of float64 entries (points * dims).
TRAINING_CAP_ENTRIES = 50_000_000


@dataclass(frozen=True)
class ParameterBox:
    """Axis-aligned box of admissible parameter vectors."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InvalidParameterError("box bounds must be 1-d arrays of equal length")
        if not np.all(lo < hi):
            raise InvalidParameterError("box bounds must satisfy lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, mu) -> bool:
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (self.dim,):
            return False
        return bool(np.all(mu >= self.lower) and np.all(mu <= self.upper))

    def validate(self, mu) -> np.ndarray:
        """Return ``mu`` as a float vector, raising if it is not admissible."""
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (self.dim,):
            raise InvalidParameterError(
                f"parameter has shape {mu.shape}, expected ({self.dim},)"
            )
        if not (np.all(mu >= self.lower) and np.all(mu <= self.upper)):
            raise InvalidParameterError(f"parameter {mu} lies outside the box")
        return mu


@dataclass(frozen=True)
class TrainingSet:
    """Finite sample of the parameter box used by the greedy sweeps.

    ``points`` has one parameter per row.  ``provenance`` records how the
    sample was generated (grid vs. random, sizes, seed) so that output
    artifacts can restate it.
    """

    points: np.ndarray
    provenance: str
    seed: Optional[int] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise InvalidParameterError("training points must form a 2-d array")
        object.__setattr__(self, "points", pts)

    @property
    def n_train(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n_train


@dataclass
class AffineProblem:
    """Parametric operator written as ``A(mu) = sum_q theta_q(mu) * A_q``.

    components hold the truth-space matrices restricted to free degrees of
    freedom; they are dense ndarrays or CSR matrices depending on the
    discretization.  ``rhs_theta`` scales the load vector (identity when the
    load does not depend on the parameter).  ``coercivity`` is the strategy
    object consumed by the error estimator; see ``rbx.reduced``.
    """

    box: ParameterBox
    theta: Callable[[np.ndarray], np.ndarray]
    components: list
    rhs: np.ndarray
    x_inner: object
    output: np.ndarray
    name: str = "problem"
    rhs_theta: Optional[Callable[[np.ndarray], float]] = None
    theta_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    rhs_theta_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    coercivity: object = None
    discretization: object = None

    def __post_init__(self):
        if not self.components:
            raise InvalidParameterError("at least one operator component is required")
        n = self.components[0].shape[0]
        for a in self.components:
            if a.shape != (n, n):
                raise InvalidParameterError("component matrices must share one square shape")
        if self.x_inner.shape != (n, n):
            raise InvalidParameterError("x_inner must match the component dimension")
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.output = np.asarray(self.output, dtype=float)
        if self.rhs.shape != (n,) or self.output.shape != (n,):
            raise InvalidParameterError("rhs/output vectors must have the component dimension")

    @property
    def n_dof(self) -> int:
        return self.components[0].shape[0]

    @property
    def n_terms(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def counters(self):
        return None if self.discretization is None else self.discretization.counters

    def is_sparse(self) -> bool:
        return sp.issparse(self.components[0])


def evaluate_theta(problem: AffineProblem, mu) -> np.ndarray:
    """Evaluate all affine coefficients at one admissible parameter."""
    mu = problem.box.validate(mu)
    theta = np.asarray(problem.theta(mu), dtype=float)
    if theta.shape != (problem.n_terms,):
        raise InvalidParameterError(
            f"theta returned shape {theta.shape}, expected ({problem.n_terms},)"
        )
    return theta


def evaluate_theta_batch(problem: AffineProblem, mus: np.ndarray) -> np.ndarray:
    """Vectorized coefficient evaluation; rows of ``mus`` are parameters."""
    mus = np.asarray(mus, dtype=float)
    if problem.theta_batch is not None:
        out = np.asarray(problem.theta_batch(mus), dtype=float)
    else:
        out = np.stack([np.asarray(problem.theta(m), dtype=float) for m in mus])
    if out.shape != (mus.shape[0], problem.n_terms):
        raise InvalidParameterError("theta_batch returned a wrong shape")
    return out


def rhs_scale(problem: AffineProblem, mu) -> float:
    return 1.0 if problem.rhs_theta is None else float(problem.rhs_theta(mu))


def rhs_scale_batch(problem: AffineProblem, mus: np.ndarray) -> np.ndarray:
    mus = np.asarray(mus, dtype=float)
    if problem.rhs_theta is None:
        return np.ones(mus.shape[0])
    if problem.rhs_theta_batch is not None:
        return np.asarray(problem.rhs_theta_batch(mus), dtype=float)
    return np.array([float(problem.rhs_theta(m)) for m in mus])


def assemble_operator(problem: AffineProblem, mu):
    """Form ``A(mu)`` explicitly.  Sparse problems return a CSR matrix."""
    theta = evaluate_theta(problem, mu)
    acc = problem.components[0] * theta[0]
    for q in range(1, problem.n_terms):
        acc = acc + theta[q] * problem.components[q]
    return acc


def sample_training_set(
    box: ParameterBox,
    kind: str,
    n_per_dim: Optional[int] = None,
    count: Optional[int] = None,
    seed: Optional[int] = None,
    max_entries: int = TRAINING_CAP_ENTRIES,
) -> TrainingSet:
    """Sample the box either on a tensor grid or uniformly at random.

    Grid points are ordered lexicographically in the dimension index (first
    coordinate varies slowest) with the box endpoints included.  Random
    sampling uses a seeded PCG64 generator so runs are reproducible.
    """
    p = box.dim
    if kind == "grid":
        if not n_per_dim or n_per_dim < 2:
            raise InvalidParameterError("grid sampling needs n_per_dim >= 2")
        total = n_per_dim**p
        if total * p > max_entries:
            raise ResourceError(
                f"grid of {total} points in {p} dims exceeds the cap of {max_entries} entries"
            )
        axes = [np.linspace(box.lower[i], box.upper[i], n_per_dim) for i in range(p)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        return TrainingSet(pts, f"grid(n_per_dim={n_per_dim})", seed=None)
    if kind == "random":
        if not count or count < 1:
            raise InvalidParameterError("random sampling needs a positive count")
        if count * p > max_entries:
            raise ResourceError(
                f"{count} random points in {p} dims exceed the cap of {max_entries} entries"
            )
        rng = np.random.default_rng(seed)
        pts = box.lower + rng.random((count, p)) * (box.upper - box.lower)
        return TrainingSet(pts, f"random(count={count},seed={seed})", seed=seed)
    raise InvalidParameterError(f"unknown sampling kind {kind!r}")
