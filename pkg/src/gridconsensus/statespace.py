"""Minimal continuous-time LTI container."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class StateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float).reshape(A.shape[0], -1)
        C = np.asarray(self.C, dtype=float).reshape(-1, A.shape[0])
        D = np.zeros((C.shape[0], B.shape[1])) if self.D is None else np.atleast_2d(np.asarray(self.D, dtype=float))
        for name, val in zip("ABCD", (A, B, C, D)):
            object.__setattr__(self, name, val)

    def __iter__(self):
        return iter((self.A, self.B, self.C, self.D))

    @property
    def nstates(self):
        return self.A.shape[0]

    def derivative(self, x, u):
        return self.A @ x + self.B @ np.atleast_1d(u)

    def output(self, x, u):
        return self.C @ x + self.D @ np.atleast_1d(u)

    def frequency_response(self, s: complex) -> np.ndarray:
        """Transfer matrix C (sI - A)^-1 B + D at the complex point ``s``."""
        n = self.nstates
        return self.C @ np.linalg.solve(s * np.eye(n) - self.A, self.B) + self.D
