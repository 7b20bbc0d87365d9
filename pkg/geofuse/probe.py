import logging
from dataclasses import dataclass, field
from typing import Iterable, List

import numpy as np
from scipy import linalg

from .errors import DataError, ParameterError, ShapeError
from .metrics import r_squared

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 1e-3


@dataclass(frozen=True)
class RidgeResult:
    weights: np.ndarray = field(repr=False)
    r2: float


def ridge_fit(x: np.ndarray, y: np.ndarray, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Solve (X^T X + lam I) w = X^T y."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not lam > 0:
        raise ParameterError(f"Ridge: Lambda must be > 0 ({lam})")
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"Ridge: Expected an n x d design matrix ({x.shape})")
    if y.shape != (x.shape[0],):
        raise ShapeError(f"Ridge: Targets {y.shape} do not match {x.shape[0]} rows")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DataError("Ridge: Non-finite inputs")

    gram = x.T @ x + lam * np.eye(x.shape[1])
    return linalg.solve(gram, x.T @ y, assume_a="pos")


def ridge_probe(
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    test_y: np.ndarray,
    lam: float = DEFAULT_LAMBDA,
) -> RidgeResult:
    weights = ridge_fit(train_x, train_y, lam)
    test_x = np.asarray(test_x, dtype=np.float64)
    if test_x.ndim != 2 or test_x.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"Ridge: Test matrix {test_x.shape} does not have "
            f"{weights.shape[0]} columns"
        )
    if not np.all(np.isfinite(test_x)):
        raise DataError("Ridge: Non-finite inputs")
    return RidgeResult(weights=weights, r2=r_squared(test_x @ weights, test_y))


@dataclass(frozen=True)
class TrialResult:
    seed: int
    r2_optical: float
    r2_stacked: float

    @property
    def stacked_wins(self) -> bool:
        return self.r2_stacked > self.r2_optical


def data_efficiency_trial(
    seed: int,
    n_train: int = 32,
    n_test: int = 256,
    n_optical: int = 4,
    noise: float = 0.5,
    lam: float = DEFAULT_LAMBDA,
) -> TrialResult:
    """Optical-only vs optical + auxiliary ridge probe on y = 3 * x_aux + noise.

    The optical features are independent noise. Only the auxiliary channel
    carries signal.
    """
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    optical = rng.standard_normal((n, n_optical))
    aux = rng.standard_normal((n, 1))
    y = 3.0 * aux[:, 0] + noise * rng.standard_normal(n)
    stacked = np.concatenate([optical, aux], axis=1)

    def probe(features: np.ndarray) -> float:
        return ridge_probe(
            features[:n_train], y[:n_train], features[n_train:], y[n_train:], lam
        ).r2

    return TrialResult(seed=seed, r2_optical=probe(optical), r2_stacked=probe(stacked))


@dataclass(frozen=True)
class ExperimentResult:
    trials: List[TrialResult]

    @property
    def wins(self) -> int:
        return sum(trial.stacked_wins for trial in self.trials)


def data_efficiency_experiment(
    seeds: Iterable[int] = range(20), n_train: int = 32, lam: float = DEFAULT_LAMBDA
) -> ExperimentResult:
    trials = [data_efficiency_trial(seed, n_train=n_train, lam=lam) for seed in seeds]
    result = ExperimentResult(trials=trials)
    logger.debug("Probe: Stacked input won %d of %d seeds", result.wins, len(trials))
    return result
