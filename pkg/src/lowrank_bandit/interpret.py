"""Latent-factor summaries of a fitted representation matrix."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import RepresentationMatrix
from .errors import DataError, DegenerateInput

ABS_FLOOR = 1e-12


@dataclass(frozen=True)
class SpectralReport:
    """Thin SVD of ``Theta`` plus its effective rank.

    ``left_factors[:, j]`` loads on action coordinates and
    ``right_factors[:, j]`` on context coordinates. All numerically nonzero
    triplets are kept, so ``reconstruct()`` returns the input even when
    ``effective_rank`` is smaller.
    """

    singular_values: np.ndarray
    left_factors: np.ndarray
    right_factors: np.ndarray
    effective_rank: int
    rel_tol: float
    action_labels: Optional[tuple] = None
    context_labels: Optional[tuple] = None

    def reconstruct(self) -> np.ndarray:
        return (self.left_factors * self.singular_values) @ self.right_factors.T

    def to_dict(self) -> dict:
        d_a, d_x = self.left_factors.shape[0], self.right_factors.shape[0]
        a_lab = list(self.action_labels) if self.action_labels else [f"a_{i + 1}" for i in range(d_a)]
        x_lab = list(self.context_labels) if self.context_labels else [f"x_{i + 1}" for i in range(d_x)]
        factors = []
        for j, s in enumerate(self.singular_values):
            factors.append(
                {
                    "index": j + 1,
                    "singular_value": float(s),
                    "action_loadings": dict(zip(a_lab, map(float, self.left_factors[:, j]))),
                    "context_loadings": dict(zip(x_lab, map(float, self.right_factors[:, j]))),
                }
            )
        return {
            "shape": [d_a, d_x],
            "rel_tol": self.rel_tol,
            "effective_rank": self.effective_rank,
            "singular_values": [float(s) for s in self.singular_values],
            "factors": factors,
        }


def spectral_decompose(
    theta,
    rel_tol: float = 0.0,
    action_labels: Optional[Sequence[str]] = None,
    context_labels: Optional[Sequence[str]] = None,
) -> SpectralReport:
    """Effective rank counts ``s_j > rel_tol * s_1`` (and ``s_j > 1e-12 * s_1``)."""
    if not 0.0 <= rel_tol < 1.0:
        raise DataError("rel_tol must lie in [0, 1)")
    if not isinstance(theta, RepresentationMatrix):
        theta = RepresentationMatrix(theta)
    d_a, d_x = theta.shape
    if action_labels is not None and len(action_labels) != d_a:
        raise DataError(f"expected {d_a} action labels")
    if context_labels is not None and len(context_labels) != d_x:
        raise DataError(f"expected {d_x} context labels")
    u, s, v = theta.svd()
    s1 = float(s[0]) if s.size else 0.0
    keep = s > ABS_FLOOR * s1 if s1 > 0 else np.zeros(s.shape, dtype=bool)
    u, s, v = u[:, keep], s[keep], v[:, keep]
    rank = int(np.count_nonzero(s > rel_tol * s1))
    return SpectralReport(
        singular_values=s,
        left_factors=u,
        right_factors=v,
        effective_rank=rank,
        rel_tol=float(rel_tol),
        action_labels=tuple(action_labels) if action_labels is not None else None,
        context_labels=tuple(context_labels) if context_labels is not None else None,
    )


def scaled_action_loadings(report: SpectralReport, x_bar, j: int) -> np.ndarray:
    """``s_j * u_j * <v_j, x_bar>`` for the 1-based factor index ``j``.

    Summed over all factors, ``<loadings, a>`` gives ``a' Theta x_bar``.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    if x_bar.shape != (report.right_factors.shape[0],):
        raise DataError(f"x_bar must have length {report.right_factors.shape[0]}")
    if not 1 <= j <= report.singular_values.shape[0]:
        raise IndexError(f"factor index {j} out of range 1..{report.singular_values.shape[0]}")
    k = j - 1
    return report.singular_values[k] * report.left_factors[:, k] * float(report.right_factors[:, k] @ x_bar)


def normalize_loadings(v) -> np.ndarray:
    """Divide by the largest absolute entry."""
    v = np.asarray(v, dtype=float)
    m = float(np.max(np.abs(v))) if v.size else 0.0
    if m == 0.0:
        raise DegenerateInput("cannot normalize a zero vector")
    return v / m
