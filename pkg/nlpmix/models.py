"""
Data models for nlpmix.
ORM records for the marginal-likelihood store, validated configuration
schemas, and the array containers passed between services.
"""

import hashlib
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from sqlalchemy import Column, DateTime, Float, Integer, String, Text, UniqueConstraint
from sqlalchemy.orm import declarative_base

from nlpmix.exceptions import InvalidPriorError, NlpmixError
from nlpmix.utils.constants import (
    DEFAULT_A_PHI,
    DEFAULT_B_PHI,
    DEFAULT_TAUS,
    MODEL_PRIORS,
    SIM_NONZERO_COEFFICIENTS,
)
from nlpmix.utils.helpers import indices_from_mask, mask_from_indices

# SQLAlchemy ORM Setup
Base = declarative_base()


class MarginalRecord(Base):
    """Memoised log marginal likelihood of one model."""
    __tablename__ = "log_marginals"
    __table_args__ = (
        UniqueConstraint("data_key", "prior_key", "model_key", "n_samples", name="uq_marginal"),
    )

    id = Column(Integer, primary_key=True)
    data_key = Column(String(64), nullable=False, index=True)
    prior_key = Column(String(255), nullable=False)
    model_key = Column(String(512), nullable=False)
    n_samples = Column(Integer, nullable=False)
    seed = Column(String(32), nullable=False)
    value = Column(Float, nullable=False)
    mc_se = Column(Float, nullable=False, default=0.0)
    created_at = Column(DateTime, default=datetime.utcnow, nullable=False)

    def __repr__(self):
        return f"<MarginalRecord(model='{self.model_key}', value={self.value:.4f})>"


class RunRecord(Base):
    """Manifest of one CLI run."""
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True)
    subcommand = Column(String(32), nullable=False)
    seed = Column(String(32), nullable=False)
    version = Column(String(32), nullable=False)
    config_json = Column(Text, nullable=False)
    created_at = Column(DateTime, default=datetime.utcnow, nullable=False)

    def __repr__(self):
        return f"<RunRecord(id={self.id}, subcommand='{self.subcommand}', seed={self.seed})>"


def validation_cause(exc: Exception) -> Optional[NlpmixError]:
    """The package error a pydantic validator raised, if one is wrapped in ``exc``."""
    errors = getattr(exc, "errors", None)
    if not callable(errors):
        return None
    for detail in errors():
        cause = (detail.get("ctx") or {}).get("error")
        if isinstance(cause, NlpmixError):
            return cause
    return None


# Prior specification ----------------------------------------------------------

class PriorFamily(str, Enum):
    """Prior families on regression coefficients."""
    PMOM = "pmom"
    PIMOM = "pimom"
    PEMOM = "pemom"
    NORMAL = "normal"

    @property
    def is_nonlocal(self) -> bool:
        return self is not PriorFamily.NORMAL


class PriorSpec(BaseModel):
    """Prior on (theta, phi) for one model.

    phi ~ IG(a_phi/2, b_phi/2) with density proportional to
    phi^(-a_phi/2 - 1) exp(-b_phi / (2 phi)).
    """
    model_config = ConfigDict(frozen=True)

    family: PriorFamily = PriorFamily.PMOM
    tau: float = Field(..., gt=0)
    r: int = Field(1, ge=1)
    tau_n: float = Field(..., gt=0)
    a_phi: float = Field(DEFAULT_A_PHI, gt=0)
    b_phi: float = Field(DEFAULT_B_PHI, gt=0)

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data: Any) -> Any:
        if isinstance(data, dict):
            data = dict(data)
            family = data.get("family", PriorFamily.PMOM)
            if not isinstance(family, PriorFamily):
                family = PriorFamily(str(family).lower())
            data["family"] = family
            if data.get("tau") is None:
                data["tau"] = DEFAULT_TAUS[family.value]
            if data.get("tau_n") is None:
                data["tau_n"] = 2.0 * float(data["tau"])
        return data

    @model_validator(mode="after")
    def _check_envelope(self) -> "PriorSpec":
        if self.family is PriorFamily.PIMOM and self.tau_n > 2.0 * self.tau * (1 + 1e-12):
            raise InvalidPriorError(
                f"tau_n={self.tau_n:g} exceeds 2*tau={2 * self.tau:g}. The iMOM log-penalty "
                "g(z) has real critical points z = tau_n*phi*(1 +/- sqrt(1 - 2*tau/tau_n)) "
                "exactly when tau_n >= 2*tau, so it is monotone only for tau_n <= 2*tau. "
                "Use tau_n <= 2*tau (default 2*tau)."
            )
        return self

    @property
    def key(self) -> str:
        """Stable text key used by the persistent store."""
        return (
            f"{self.family.value}|tau={self.tau!r}|r={self.r}|tau_n={self.tau_n!r}"
            f"|a={self.a_phi!r}|b={self.b_phi!r}"
        )

    @property
    def local_tau(self) -> float:
        """Dispersion of the Normal local kernel the penalty multiplies."""
        return self.tau_n if self.family is PriorFamily.PIMOM else self.tau


# Data containers --------------------------------------------------------------

@dataclass
class Dataset:
    """Response vector and design matrix."""
    y: np.ndarray
    X: np.ndarray
    names: Optional[List[str]] = None
    n: int = field(init=False)
    p: int = field(init=False)

    def __post_init__(self):
        self.y = np.ascontiguousarray(self.y, dtype=float).reshape(-1)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size else X.reshape(self.y.shape[0], 0)
        self.X = np.ascontiguousarray(X)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"design has {self.X.shape[0]} rows but response has {self.y.shape[0]}"
            )
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.X))):
            raise ValueError("dataset contains non-finite entries")
        self.n, self.p = self.X.shape
        if self.names is None:
            self.names = [f"x{j + 1}" for j in range(self.p)]
        elif len(self.names) != self.p:
            raise ValueError(f"{len(self.names)} names for {self.p} columns")
        self.xtx = self.X.T @ self.X
        self.xty = self.X.T @ self.y
        self.yty = float(self.y @ self.y)

    @property
    def key(self) -> str:
        """Content hash of (y, X)."""
        h = hashlib.sha256()
        h.update(np.asarray(self.X.shape, dtype=np.int64).tobytes())
        h.update(self.y.tobytes())
        h.update(self.X.tobytes())
        return h.hexdigest()

    def subset_rows(self, rows: np.ndarray) -> "Dataset":
        return Dataset(self.y[rows], self.X[rows], list(self.names))


@dataclass(frozen=True)
class ModelIndicator:
    """Inclusion bitmask over p candidate variables."""
    mask: int
    p: int

    def __post_init__(self):
        if self.mask < 0 or self.mask >> self.p:
            raise ValueError(f"mask {self.mask:#x} has bits beyond p={self.p}")

    @classmethod
    def from_indices(cls, indices: Sequence[int], p: int) -> "ModelIndicator":
        return cls(mask_from_indices(indices), p)

    @classmethod
    def from_key(cls, key: str, p: int) -> "ModelIndicator":
        return cls(int(key, 16), p)

    @classmethod
    def null(cls, p: int) -> "ModelIndicator":
        return cls(0, p)

    @classmethod
    def full(cls, p: int) -> "ModelIndicator":
        return cls((1 << p) - 1, p)

    @property
    def indices(self) -> Tuple[int, ...]:
        return indices_from_mask(self.mask)

    @property
    def size(self) -> int:
        return bin(self.mask).count("1")

    @property
    def key(self) -> str:
        """Hex bitmask, bit i set when variable i is included."""
        return format(self.mask, "x")

    def contains(self, i: int) -> bool:
        return bool(self.mask >> i & 1)

    def flip(self, i: int) -> "ModelIndicator":
        return ModelIndicator(self.mask ^ (1 << i), self.p)

    def with_variable(self, i: int, included: bool) -> "ModelIndicator":
        if included:
            return ModelIndicator(self.mask | (1 << i), self.p)
        return ModelIndicator(self.mask & ~(1 << i), self.p)


@dataclass
class LogMarginal:
    """A log marginal likelihood (or log multiplier) with Monte Carlo error."""
    value: float
    mc_se: float = 0.0
    n_samples: int = 0
    effective_sample_size: Optional[float] = None
    low_ess: bool = False
    degenerate_weights: bool = False

    def __post_init__(self):
        if self.mc_se < 0:
            raise ValueError("mc_se must be nonnegative")


# Configuration schemas ---------------------------------------------------------

class SimConfig(BaseModel):
    """Equicorrelated Gaussian design with a sparse true coefficient vector."""
    n: int = Field(..., ge=2)
    p: int = Field(..., ge=1)
    theta_star: List[float]
    phi_star: float = Field(1.0, gt=0)
    rho: float = Field(0.0, ge=0, lt=1)
    replicates: int = Field(1, ge=1, le=1000)
    seed: int = 0

    @model_validator(mode="after")
    def _check_theta(self) -> "SimConfig":
        if len(self.theta_star) != self.p:
            raise ValueError(f"theta_star has {len(self.theta_star)} entries, expected p={self.p}")
        return self

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.theta_star) != 0.0)

    @classmethod
    def sparse_design(
        cls,
        p: int,
        n: int = 100,
        phi_star: float = 1.0,
        rho: float = 0.0,
        replicates: int = 1,
        seed: int = 0,
        coefficients: Sequence[float] = SIM_NONZERO_COEFFICIENTS,
    ) -> "SimConfig":
        """All-zero coefficients except the last few, set to the given values."""
        if p < len(coefficients):
            raise ValueError(f"p={p} is smaller than the number of nonzero coefficients")
        theta = [0.0] * (p - len(coefficients)) + [float(c) for c in coefficients]
        return cls(n=n, p=p, theta_star=theta, phi_star=phi_star, rho=rho,
                   replicates=replicates, seed=seed)


class MethodConfig(BaseModel):
    """One estimator in a benchmark."""
    model_config = ConfigDict(frozen=True)

    name: str
    n_sweeps: int = Field(200, ge=1)
    draws_per_model: int = Field(500, ge=10)
    search_samples: int = Field(1000, ge=1000)
    model_prior: str = "beta_binomial"
    tau: Optional[float] = None

    @field_validator("name")
    @classmethod
    def _check_name(cls, v: str) -> str:
        v = v.lower()
        allowed = {f.value for f in PriorFamily} | {"ridge", "ols_oracle"}
        if v not in allowed:
            raise ValueError(f"unknown method '{v}', expected one of {sorted(allowed)}")
        return v

    @field_validator("model_prior")
    @classmethod
    def _check_model_prior(cls, v: str) -> str:
        v = v.replace("-", "_")
        if v not in MODEL_PRIORS:
            raise ValueError(f"model prior must be one of {MODEL_PRIORS}")
        return v

    @property
    def is_bayesian(self) -> bool:
        return self.name in {f.value for f in PriorFamily}

    def prior_spec(self) -> PriorSpec:
        return PriorSpec(family=self.name, tau=self.tau)


class RunConfig(BaseModel):
    """Resolved configuration of one CLI run; the manifest is built from it."""
    subcommand: str
    input_path: Optional[str] = None
    output_path: Optional[str] = None
    family: PriorFamily = PriorFamily.PMOM
    tau: Optional[float] = Field(None, gt=0)
    tau_n: Optional[float] = Field(None, gt=0)
    a_phi: float = Field(DEFAULT_A_PHI, gt=0)
    b_phi: float = Field(DEFAULT_B_PHI, gt=0)
    iterations: int = Field(1000, ge=1)
    burn_in: int = Field(100, ge=0)
    seed: int
    threads: int = Field(1, ge=1)
    standardize: bool = True
    model_prior: str = "beta_binomial"
    search_samples: int = Field(1000, ge=1000)
    report_samples: int = Field(10000, ge=1000)
    draws_per_model: int = Field(1000, ge=10)
    top_k: int = Field(10, ge=1)
    extra: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_burn_in(self) -> "RunConfig":
        if self.burn_in >= self.iterations:
            raise ValueError(
                f"burn-in ({self.burn_in}) must be smaller than iterations ({self.iterations})"
            )
        return self

    def prior_spec(self) -> PriorSpec:
        return PriorSpec(
            family=self.family,
            tau=self.tau,
            tau_n=self.tau_n,
            a_phi=self.a_phi,
            b_phi=self.b_phi,
        )

    def manifest(self, version: str) -> Dict[str, Any]:
        config = self.model_dump(mode="json")
        return {"version": version, "seed": self.seed, "config": config}
