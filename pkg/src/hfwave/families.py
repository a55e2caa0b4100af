"""Epsilon-indexed ladders of grid fields with their declared weak limit."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class EpsilonFamily:
    """A ladder {v_eps} of grid fields sharing one limit field.

    fields[k] lives on grids[k] (per-level grids are allowed so fine
    oscillations stay resolved); limit is given per level via limit_fn or
    as one array when all levels share a grid.  omega[k] is the
    oscillation-scale bookkeeping used by the frequency-regime machinery.
    """

    grid: object                      # common grid, or the coarsest one
    eps: list
    fields: list
    limit: np.ndarray = None
    omega: list = None
    grids: list = None                # per-level grids; defaults to [grid]*K
    limits: list = None               # per-level limit arrays when grids differ
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.eps) != len(self.fields):
            raise ValueError("eps and fields must have equal length")
        if self.grids is None:
            self.grids = [self.grid] * len(self.eps)
        if self.omega is None:
            self.omega = list(self.eps)
        if self.limits is None:
            if self.limit is None:
                self.limit = np.zeros(self.grid.shape)
            self.limits = [self.limit] * len(self.eps)
        elif self.limit is None:
            self.limit = self.limits[-1]

    def __len__(self):
        return len(self.eps)

    def level(self, k):
        return self.eps[k], self.grids[k], self.fields[k], self.limits[k]

    def diffs(self):
        return [f - lim for f, lim in zip(self.fields, self.limits)]
