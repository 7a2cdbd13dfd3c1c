"""One-vs-rest RBF support vector machine trained by SMO.

Each of the four classes gets a binary machine (class vs rest) solved
in the dual by sequential minimal optimization: sweep all points,
and for each KKT violator optimize one analytically solvable pair,
second index chosen by the largest error gap with an in-order
fallback. Sweeps repeat until one passes with no update or the pass
budget runs out, which makes training deterministic without any RNG.

Features are standardized by training-set statistics by default; with
mixed physical units (m/s^2, rad/s, uT) the raw kernel distances would
be dominated by whichever axes happen to have the largest spread.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import LABEL_ORDER, TrajectoryLabel
from ..errors import DataError
from .model_io import data_digest

N_CLASSES = len(LABEL_ORDER)

# Duals below this are treated as zero when extracting support vectors.
ALPHA_EPS = 1e-12


@dataclass(frozen=True)
class SvmConfig:
    c: float = 1.0
    gamma: Optional[float] = None  # None: 1 / (n_features * var(X))
    tol: float = 1e-3
    max_passes: int = 500
    standardize: bool = True

    def __post_init__(self):
        if self.c <= 0:
            raise DataError(f"C must be positive, got {self.c}")
        if self.gamma is not None and self.gamma <= 0:
            raise DataError(f"gamma must be positive or None, got {self.gamma}")
        if self.tol <= 0:
            raise DataError(f"tolerance must be positive, got {self.tol}")
        if self.max_passes < 1:
            raise DataError(f"max_passes must be >= 1, got {self.max_passes}")


@dataclass(frozen=True)
class BinarySvm:
    """One class-vs-rest machine: support vectors, duals times labels, bias."""

    sv: np.ndarray  # (m, d) standardized support vectors
    coef: np.ndarray  # (m,) alpha_i * y_i
    bias: float
    converged: bool
    sweeps: int


@dataclass(frozen=True)
class SvmModel:
    kind: str
    config: SvmConfig
    n_features: int
    gamma: float
    mean: np.ndarray
    scale: np.ndarray
    machines: tuple[BinarySvm, ...]
    manifest: dict

    def to_json_dict(self) -> dict:
        cfg = self.config
        return {
            "kind": self.kind,
            "config": {
                "c": cfg.c,
                "gamma": cfg.gamma,
                "tol": cfg.tol,
                "max_passes": cfg.max_passes,
                "standardize": cfg.standardize,
            },
            "n_features": self.n_features,
            "gamma_used": self.gamma,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "machines": [
                {
                    "sv": m.sv.tolist(),
                    "coef": m.coef.tolist(),
                    "bias": m.bias,
                    "converged": m.converged,
                    "sweeps": m.sweeps,
                }
                for m in self.machines
            ],
            "manifest": self.manifest,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SvmModel":
        cfg = SvmConfig(**obj["config"])
        n_features = int(obj["n_features"])
        machines = tuple(
            BinarySvm(
                sv=np.asarray(m["sv"], dtype=np.float64).reshape(-1, n_features),
                coef=np.asarray(m["coef"], dtype=np.float64),
                bias=float(m["bias"]),
                converged=bool(m["converged"]),
                sweeps=int(m["sweeps"]),
            )
            for m in obj["machines"]
        )
        return cls(
            kind="svm",
            config=cfg,
            n_features=n_features,
            gamma=float(obj["gamma_used"]),
            mean=np.asarray(obj["mean"], dtype=np.float64),
            scale=np.asarray(obj["scale"], dtype=np.float64),
            machines=machines,
            manifest=dict(obj["manifest"]),
        )


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """k(x, z) = exp(-gamma * ||x - z||^2), pairwise over rows."""
    sq = (
        np.sum(a**2, axis=1)[:, None]
        + np.sum(b**2, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


def kkt_violations(
    alpha: np.ndarray, y: np.ndarray, decision: np.ndarray, c: float
) -> np.ndarray:
    """Per-point KKT violation magnitude for a converged dual solution.

    alpha=0 wants y*f >= 1, interior alphas want y*f = 1, alpha=C wants
    y*f <= 1; the return value is how far each point is on the wrong
    side of its own condition (0 when satisfied).
    """
    margin = y * decision
    at_zero = alpha <= ALPHA_EPS
    at_upper = alpha >= c - ALPHA_EPS
    interior = ~(at_zero | at_upper)
    viol = np.zeros_like(alpha)
    viol[at_zero] = np.maximum(0.0, 1.0 - margin[at_zero])
    viol[interior] = np.abs(margin[interior] - 1.0)
    viol[at_upper & ~at_zero] = np.maximum(0.0, margin[at_upper & ~at_zero] - 1.0)
    return viol


def _smo_binary(
    k: np.ndarray, y: np.ndarray, c: float, tol: float, max_passes: int
) -> tuple[np.ndarray, float, int, bool]:
    """Solve one binary dual; returns (alpha, bias, sweeps, converged)."""
    n = y.size
    alpha = np.zeros(n)
    bias = 0.0
    # f tracks the current decision value for every training point
    f = np.zeros(n)

    def take_step(i: int, j: int) -> bool:
        nonlocal bias, f
        if i == j:
            return False
        a_i, a_j = alpha[i], alpha[j]
        y_i, y_j = y[i], y[j]
        e_i = f[i] - y_i
        e_j = f[j] - y_j
        if y_i == y_j:
            low, high = max(0.0, a_i + a_j - c), min(c, a_i + a_j)
        else:
            low, high = max(0.0, a_j - a_i), min(c, c + a_j - a_i)
        if high - low < ALPHA_EPS:
            return False
        eta = 2.0 * k[i, j] - k[i, i] - k[j, j]
        if eta >= 0:
            return False
        a_j_new = np.clip(a_j - y_j * (e_i - e_j) / eta, low, high)
        if abs(a_j_new - a_j) < ALPHA_EPS:
            return False
        a_i_new = a_i + y_i * y_j * (a_j - a_j_new)
        d_i = y_i * (a_i_new - a_i)
        d_j = y_j * (a_j_new - a_j)
        b1 = bias - e_i - d_i * k[i, i] - d_j * k[i, j]
        b2 = bias - e_j - d_i * k[i, j] - d_j * k[j, j]
        if ALPHA_EPS < a_i_new < c - ALPHA_EPS:
            bias_new = b1
        elif ALPHA_EPS < a_j_new < c - ALPHA_EPS:
            bias_new = b2
        else:
            bias_new = 0.5 * (b1 + b2)
        f += d_i * k[:, i] + d_j * k[:, j] + (bias_new - bias)
        alpha[i], alpha[j] = a_i_new, a_j_new
        bias = bias_new
        return True

    sweeps = 0
    for _ in range(max_passes):
        sweeps += 1
        changed = 0
        for i in range(n):
            e_i = f[i] - y[i]
            r = e_i * y[i]
            if not ((r < -tol and alpha[i] < c) or (r > tol and alpha[i] > 0)):
                continue
            gaps = np.abs((f - y) - e_i)
            gaps[i] = -1.0
            if take_step(i, int(np.argmax(gaps))):
                changed += 1
                continue
            for j in range(n):
                if take_step(i, j):
                    changed += 1
                    break
        if changed == 0:
            break

    # recompute decisions from scratch so the flag is free of the tiny
    # drift the incremental f updates accumulate
    fresh = k @ (alpha * y) + bias
    converged = bool(np.max(kkt_violations(alpha, y, fresh, c)) <= tol)
    return alpha, bias, sweeps, converged


def train_svm(x: np.ndarray, y: np.ndarray, cfg: SvmConfig) -> SvmModel:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError(f"training features must be a non-empty 2-d array, got shape {x.shape}")
    if y.shape != (x.shape[0],):
        raise DataError(f"labels shape {y.shape} does not match {x.shape[0]} rows")
    if not np.all(np.isfinite(x)):
        raise DataError("training features must be finite")
    if np.unique(y).size < 2:
        raise DataError("training data must contain at least 2 classes")
    n, d = x.shape

    if cfg.standardize:
        mean = x.mean(axis=0)
        sd = x.std(axis=0)
        scale = np.where(sd > 0, sd, 1.0)
    else:
        mean = np.zeros(d)
        scale = np.ones(d)
    xs = (x - mean) / scale

    gamma = cfg.gamma
    if gamma is None:
        var = float(xs.var())
        if var <= 0:
            raise DataError("cannot derive gamma: features have zero variance")
        gamma = 1.0 / (d * var)

    k = rbf_kernel(xs, xs, gamma)
    machines: list[BinarySvm] = []
    per_class: list[dict] = []
    for class_index in range(N_CLASSES):
        yk = np.where(y == class_index, 1.0, -1.0)
        if np.all(yk == yk[0]):
            # degenerate one-sided problem: constant decision at the
            # common sign, no support vectors
            machines.append(
                BinarySvm(
                    sv=np.zeros((0, d)),
                    coef=np.zeros(0),
                    bias=float(yk[0]),
                    converged=True,
                    sweeps=0,
                )
            )
            per_class.append(
                {"n_support": 0, "converged": True, "sweeps": 0,
                 "max_kkt_violation": 0.0, "duals": [0.0] * n}
            )
            continue
        alpha, bias, sweeps, converged = _smo_binary(
            k, yk, cfg.c, cfg.tol, cfg.max_passes
        )
        decision = k @ (alpha * yk) + bias
        mask = alpha > ALPHA_EPS
        machines.append(
            BinarySvm(
                sv=xs[mask],
                coef=(alpha * yk)[mask],
                bias=float(bias),
                converged=converged,
                sweeps=sweeps,
            )
        )
        per_class.append(
            {
                "n_support": int(mask.sum()),
                "converged": converged,
                "sweeps": sweeps,
                "max_kkt_violation": float(
                    np.max(kkt_violations(alpha, yk, decision, cfg.c))
                ),
                "duals": alpha.tolist(),
            }
        )

    model = SvmModel(
        kind="svm",
        config=cfg,
        n_features=d,
        gamma=gamma,
        mean=mean,
        scale=scale,
        machines=tuple(machines),
        manifest={},
    )
    decisions = decision_matrix(model, x)
    train_accuracy = float(np.mean(np.argmax(decisions, axis=1) == y))
    manifest = {
        "config": model.to_json_dict()["config"],
        "gamma_used": gamma,
        "data_sha256": data_digest(x, y),
        "n_samples": n,
        "n_features": d,
        "train_accuracy": train_accuracy,
        "classes": per_class,
    }
    return SvmModel(
        kind="svm",
        config=cfg,
        n_features=d,
        gamma=gamma,
        mean=mean,
        scale=scale,
        machines=tuple(machines),
        manifest=manifest,
    )


def decision_matrix(model: SvmModel, x: np.ndarray) -> np.ndarray:
    """(n, 4) one-vs-rest decision values for raw (unstandardized) rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise DataError(
            f"feature matrix shape {x.shape} does not match trained dimension "
            f"{model.n_features}"
        )
    xs = (x - model.mean) / model.scale
    out = np.zeros((x.shape[0], N_CLASSES))
    for column, machine in enumerate(model.machines):
        if machine.sv.shape[0] == 0:
            out[:, column] = machine.bias
        else:
            out[:, column] = rbf_kernel(xs, machine.sv, model.gamma) @ machine.coef + machine.bias
    return out


def predict_svm(model: SvmModel, x: np.ndarray) -> tuple[TrajectoryLabel, np.ndarray]:
    """argmax of one-vs-rest decisions, first maximum on exact ties."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise DataError(
            f"feature vector shape {x.shape} does not match trained dimension "
            f"({model.n_features},)"
        )
    decisions = decision_matrix(model, x[None, :])[0]
    return LABEL_ORDER[int(np.argmax(decisions))], decisions


def predict_svm_batch(
    model: SvmModel, x: np.ndarray
) -> tuple[list[TrajectoryLabel], np.ndarray]:
    decisions = decision_matrix(model, x)
    labels = [LABEL_ORDER[int(np.argmax(row))] for row in decisions]
    return labels, decisions
