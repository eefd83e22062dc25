"""Operation counters used for offline/online cost accounting.

One ``Counters`` instance is shared by a truth discretization, the affine
problem built on top of it, and every reduced model derived from either, so
a single run accumulates into a single place.  ``estimator_evals`` is the
total across the three sub-buckets (global sweeps, surrogate sweeps, and
per-extension reproduction checks).
"""

from dataclasses import dataclass, fields, asdict


@dataclass
class Counters:
    truth_solves: int = 0
    truth_factorizations: int = 0
    riesz_solves: int = 0
    reduced_solves: int = 0
    estimator_evals: int = 0
    sweep_evals_global: int = 0
    sweep_evals_surrogate: int = 0
    reproduction_checks: int = 0
    approx_error_evals: int = 0
    pivoted_cholesky_steps: int = 0

    def reset(self):
        for f in fields(self):
            setattr(self, f.name, 0)

    def snapshot(self):
        return asdict(self)

    def count_estimates(self, n, kind="other"):
        """Record ``n`` error-estimator evaluations of the given kind."""
        self.estimator_evals += n
        if kind == "global":
            self.sweep_evals_global += n
        elif kind == "surrogate":
            self.sweep_evals_surrogate += n
        elif kind == "check":
            self.reproduction_checks += n
