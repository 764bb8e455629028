"""
Shared domain types and the deterministic prediction paths.

Arrays are dense float64. Types are frozen dataclasses; treat the arrays they
hold as read-only once constructed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import softmax

from ..errors import ContractViolation, DataError, check_shape


@dataclass(frozen=True, slots=True)
class FeatureSpec:
    """Column roles: non-sensitive A, sensitive S, outcome Y.

    ``mem_indices`` / ``out_indices`` index into ``s_names`` (0-based) and pick
    the sensitive columns used by the membership and outcome models.
    """

    a_names: tuple[str, ...]
    s_names: tuple[str, ...]
    y_name: str
    mem_indices: tuple[int, ...]
    out_indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "a_names", tuple(self.a_names))
        object.__setattr__(self, "s_names", tuple(self.s_names))
        object.__setattr__(self, "mem_indices", tuple(int(i) for i in self.mem_indices))
        object.__setattr__(self, "out_indices", tuple(int(i) for i in self.out_indices))
        if len(self.a_names) < 1:
            raise ContractViolation("at least one non-sensitive feature is required")
        if overlap := set(self.a_names) & set(self.s_names):
            raise ContractViolation(f"columns used as both A and S: {sorted(overlap)}")
        if self.y_name in self.a_names or self.y_name in self.s_names:
            raise ContractViolation(f"outcome column {self.y_name!r} is also a feature")
        p_s = len(self.s_names)
        for name, idx in (("mem_indices", self.mem_indices), ("out_indices", self.out_indices)):
            if any(i < 0 or i >= p_s for i in idx):
                raise ContractViolation(f"{name} {idx} outside 0..{p_s - 1}")

    @property
    def p_a(self) -> int:
        return len(self.a_names)

    @property
    def p_s(self) -> int:
        return len(self.s_names)

    @property
    def design_dim(self) -> int:
        return 1 + self.p_a + len(self.out_indices)

    @property
    def design_names(self) -> list[str]:
        return ["intercept", *self.a_names, *(self.s_names[i] for i in self.out_indices)]

    def to_dict(self) -> dict:
        return {
            "a_names": list(self.a_names),
            "s_names": list(self.s_names),
            "y_name": self.y_name,
            "mem_indices": list(self.mem_indices),
            "out_indices": list(self.out_indices),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "FeatureSpec":
        return cls(
            a_names=raw["a_names"],
            s_names=raw["s_names"],
            y_name=raw["y_name"],
            mem_indices=raw["mem_indices"],
            out_indices=raw["out_indices"],
        )


@dataclass(frozen=True, slots=True)
class Dataset:
    a: np.ndarray
    s: np.ndarray
    y: np.ndarray
    spec: FeatureSpec
    labels: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        s = np.asarray(self.s, dtype=float).reshape(a.shape[0], -1)
        y = np.asarray(self.y, dtype=float).ravel()
        check_shape(a.ndim == 2 and a.shape[1] == self.spec.p_a, f"A has shape {a.shape}, expected (n, {self.spec.p_a})")
        check_shape(s.shape[1] == self.spec.p_s, f"S has {s.shape[1]} columns, expected {self.spec.p_s}")
        check_shape(a.shape[0] == s.shape[0] == y.shape[0], "A, S and Y must share the row count")
        if not (np.isfinite(a).all() and np.isfinite(s).all() and np.isfinite(y).all()):
            raise DataError("dataset contains non-finite entries")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "y", y)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=int).ravel()
            check_shape(labels.shape[0] == y.shape[0], "labels must have one entry per row")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def s_mem(self) -> np.ndarray:
        return self.s[:, list(self.spec.mem_indices)]

    def design(self) -> np.ndarray:
        """Design matrix: intercept, A, then the outcome-model sensitive columns."""
        s_out = self.s[:, list(self.spec.out_indices)]
        return np.column_stack([np.ones(self.n), self.a, s_out])

    def subset(self, rows: Sequence[int] | np.ndarray) -> "Dataset":
        rows = np.asarray(rows)
        labels = None if self.labels is None else self.labels[rows]
        return Dataset(self.a[rows], self.s[rows], self.y[rows], self.spec, labels)


@dataclass(frozen=True, slots=True)
class DesignRow:
    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        if x.size == 0 or x[0] != 1.0:
            raise ContractViolation("design row must start with the intercept entry 1")
        object.__setattr__(self, "x", x)


@dataclass(frozen=True, slots=True)
class MixtureParams:
    gamma: np.ndarray
    omega: np.ndarray
    sigma2: float = 1.0

    def __post_init__(self):
        gamma = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        omega = np.atleast_2d(np.asarray(self.omega, dtype=float))
        check_shape(gamma.shape[0] == omega.shape[0], "gamma and omega must have one row per group")
        check_shape(gamma.shape[0] >= 1, "at least one group is required")
        if not self.sigma2 > 0:
            raise ContractViolation("sigma2 must be positive")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "omega", omega)

    @property
    def g(self) -> int:
        return self.omega.shape[0]

    def check_against(self, spec: FeatureSpec) -> None:
        check_shape(
            self.gamma.shape[1] == len(spec.mem_indices),
            f"gamma has {self.gamma.shape[1]} columns, membership model uses {len(spec.mem_indices)}",
        )
        check_shape(
            self.omega.shape[1] == spec.design_dim,
            f"omega has {self.omega.shape[1]} columns, design has {spec.design_dim}",
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([self.gamma.ravel(), self.omega.ravel()])

    def step_towards(self, other: "MixtureParams", alpha: float) -> "MixtureParams":
        """theta + alpha * (other - theta)."""
        return MixtureParams(
            self.gamma + alpha * (other.gamma - self.gamma),
            self.omega + alpha * (other.omega - self.omega),
            self.sigma2,
        )

    def to_dict(self) -> dict:
        return {"gamma": self.gamma.tolist(), "omega": self.omega.tolist(), "sigma2": self.sigma2}

    @classmethod
    def from_dict(cls, raw: dict) -> "MixtureParams":
        return cls(np.array(raw["gamma"], dtype=float), np.array(raw["omega"], dtype=float), float(raw["sigma2"]))


@dataclass(frozen=True, slots=True)
class Responsibilities:
    w: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.w, dtype=float))
        if (w < 0).any() or (w > 1).any() or not np.allclose(w.sum(axis=1), 1.0, rtol=0, atol=1e-10):
            raise ContractViolation("responsibility rows must be distributions")
        object.__setattr__(self, "w", w)


@dataclass(frozen=True, slots=True)
class RobustWeights:
    v: np.ndarray
    v0: np.ndarray
    c: float
    objective: float = field(default=float("nan"))

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).ravel()
        v0 = np.asarray(self.v0, dtype=float).ravel()
        check_shape(v.shape == v0.shape, "v and v0 must have the same length")
        if (v < -1e-8).any() or abs(v.sum() - 1.0) > 1e-8:
            raise ContractViolation(f"v is not on the simplex: {v}")
        if np.linalg.norm(v - v0) > self.c * np.sqrt(v.size) + 1e-8:
            raise ContractViolation("v lies outside the ball around v0")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "v0", v0)

    @property
    def g(self) -> int:
        return self.v.size

    def to_dict(self) -> dict:
        return {"v": self.v.tolist(), "v0": self.v0.tolist(), "c": self.c, "objective": self.objective}

    @classmethod
    def from_dict(cls, raw: dict) -> "RobustWeights":
        return cls(np.array(raw["v"]), np.array(raw["v0"]), float(raw["c"]), float(raw["objective"]))


def membership_probs(gamma: np.ndarray, s_mem: np.ndarray) -> np.ndarray:
    """Softmax of the G scores gamma_j . s_mem."""
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    s_mem = np.asarray(s_mem, dtype=float).ravel()
    check_shape(gamma.shape[1] == s_mem.size, f"gamma has {gamma.shape[1]} columns, s_mem has {s_mem.size} entries")
    return softmax(gamma @ s_mem)


def membership_matrix(gamma: np.ndarray, s_mem: np.ndarray) -> np.ndarray:
    """Row-wise membership_probs for an n x m matrix of membership features."""
    gamma = np.atleast_2d(gamma)
    check_shape(gamma.shape[1] == s_mem.shape[1], "gamma and membership features disagree on width")
    return softmax(s_mem @ gamma.T, axis=1)


def group_predict(omega_j: np.ndarray, x: DesignRow) -> float:
    omega_j = np.asarray(omega_j, dtype=float).ravel()
    check_shape(omega_j.size == x.x.size, f"omega_j has {omega_j.size} entries, design row has {x.x.size}")
    return float(omega_j @ x.x)


def group_predictions(omega: np.ndarray, design: np.ndarray) -> np.ndarray:
    """n x G matrix of per-group linear predictions."""
    omega = np.atleast_2d(omega)
    check_shape(omega.shape[1] == design.shape[1], "omega and design disagree on width")
    return design @ omega.T


def ensemble_predict(params: MixtureParams, v: RobustWeights, x: DesignRow) -> float:
    check_shape(v.g == params.g, f"weights cover {v.g} groups, model has {params.g}")
    return float(v.v @ np.array([group_predict(params.omega[j], x) for j in range(params.g)]))


def ensemble_predictions(params: MixtureParams, v: RobustWeights, design: np.ndarray) -> np.ndarray:
    check_shape(v.g == params.g, f"weights cover {v.g} groups, model has {params.g}")
    return group_predictions(params.omega, design) @ v.v


def pooled_ols(data: Dataset) -> np.ndarray:
    """Least-squares coefficients of y on the design matrix, ignoring groups."""
    coef, *_ = np.linalg.lstsq(data.design(), data.y, rcond=None)
    return coef
