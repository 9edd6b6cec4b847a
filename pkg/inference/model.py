"""
Probabilistic model: a prior specification bound to a likelihood over named parameters.
"""
import math
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy import optimize

from inference.priors import PriorSpec, grad_log_prior_unconstrained, log_prior, log_prior_unconstrained
from utils.errors import DomainError
from utils.logging_utils import setup_logger

# Configure logging
logger = setup_logger("inference", "inference.log")

LogLike = Callable[[np.ndarray], float]
LogLikeGrad = Callable[[np.ndarray], np.ndarray]
Predictor = Callable[[np.ndarray, np.ndarray], np.ndarray]

FD_STEP = 1e-5


class ProbModel:
    """
    Unnormalised posterior P(theta | X) proportional to P(X | theta) P(theta).

    The samplers work on unconstrained coordinates z; theta = transform(z) per
    parameter and the log-posterior in z includes the transform Jacobians.
    Evaluation is pure, so one model may be shared by concurrent chains.
    """

    def __init__(
        self,
        priors: PriorSpec,
        loglike: LogLike,
        loglike_grad: Optional[LogLikeGrad] = None,
        predictors: Optional[Dict[str, Predictor]] = None,
        name: str = "model",
    ):
        """
        Bind a likelihood to a parameter layout.

        Args:
            priors: Priors in parameter layout order.
            loglike: Log-likelihood of a constrained parameter vector.
            loglike_grad: Optional analytic gradient of loglike in constrained space.
            predictors: Named curves f(theta, inputs) used for posterior-predictive output.
            name: Label used in logs and result files.
        """
        self.priors = priors
        self.loglike = loglike
        self.loglike_grad = loglike_grad
        self.predictors: Dict[str, Predictor] = dict(predictors or {})
        self.name = name

    @property
    def names(self) -> List[str]:
        return self.priors.names

    @property
    def dim(self) -> int:
        return self.priors.dim

    @property
    def has_analytic_gradient(self) -> bool:
        return self.loglike_grad is not None

    def to_constrained(self, z: np.ndarray) -> np.ndarray:
        return self.priors.to_constrained(z)

    def to_unconstrained(self, theta: np.ndarray) -> np.ndarray:
        return self.priors.to_unconstrained(theta)

    def _check_dim(self, vector: np.ndarray) -> np.ndarray:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise DomainError(
                f"{self.name}: parameter vector has shape {vector.shape}, expected ({self.dim},)"
            )
        return vector

    def log_posterior_theta(self, theta: np.ndarray) -> float:
        """Unnormalised log-posterior at constrained parameters (no Jacobian)."""
        theta = self._check_dim(theta)
        lp = log_prior(theta, self.priors, include_jacobian=False)
        if not np.isfinite(lp):
            return -math.inf
        ll = self.loglike(theta)
        return float(lp + ll) if np.isfinite(ll) else -math.inf

    def log_posterior(self, z: np.ndarray) -> float:
        """Unnormalised log-posterior density of the unconstrained coordinates."""
        z = self._check_dim(z)
        if not np.all(np.isfinite(z)):
            return -math.inf
        lp = log_prior_unconstrained(z, self.priors)
        if not np.isfinite(lp):
            return -math.inf
        ll = self.loglike(self.to_constrained(z))
        return float(lp + ll) if np.isfinite(ll) else -math.inf

    def grad_log_posterior(self, z: np.ndarray) -> np.ndarray:
        """
        Gradient of log_posterior in z.

        Uses the registered analytic likelihood gradient (chain rule through the
        transforms) and falls back to central finite differences otherwise.
        """
        z = self._check_dim(z)
        if self.loglike_grad is None:
            return self.fd_grad_log_posterior(z)
        theta = self.to_constrained(z)
        dtheta = np.array([entry.dtheta_dz(zi) for entry, zi in zip(self.priors.entries.values(), z)])
        return grad_log_prior_unconstrained(z, self.priors) + self.loglike_grad(theta) * dtheta

    def fd_grad_log_posterior(self, z: np.ndarray, step: float = FD_STEP) -> np.ndarray:
        """Central finite-difference gradient with step `step` relative to max(1, |z_i|)."""
        z = self._check_dim(z)
        grad = np.empty(self.dim)
        for i in range(self.dim):
            h = step * max(1.0, abs(z[i]))
            up, down = z.copy(), z.copy()
            up[i] += h
            down[i] -= h
            grad[i] = (self.log_posterior(up) - self.log_posterior(down)) / (2.0 * h)
        return grad

    def initial_point(self) -> np.ndarray:
        """Unconstrained start built from each prior's init value."""
        return self.priors.initial_unconstrained()

    def find_map(self, start: Optional[np.ndarray] = None, max_iter: int = 4000) -> np.ndarray:
        """
        Maximum-a-posteriori point in unconstrained space.

        Nelder-Mead with a simplex sized by the prior widths locates the mode, then
        L-BFGS-B polishes it. The best finite point seen is returned.

        Args:
            start: Unconstrained start; defaults to initial_point().
            max_iter: Iteration cap of the Nelder-Mead stage.

        Returns:
            The MAP estimate in unconstrained coordinates.
        """
        z0 = self.initial_point() if start is None else self._check_dim(start)
        best_z, best_value = z0, self.log_posterior(z0)
        if not np.isfinite(best_value):
            return z0

        def objective(z: np.ndarray) -> float:
            value = self.log_posterior(z)
            return -value if np.isfinite(value) else 1e300

        def jacobian(z: np.ndarray) -> np.ndarray:
            grad = self.grad_log_posterior(z)
            return -np.nan_to_num(grad, nan=0.0, posinf=0.0, neginf=0.0)

        steps = 0.1 * self.priors.unconstrained_scales()
        simplex = np.vstack([z0] + [z0 + np.eye(self.dim)[i] * steps[i] for i in range(self.dim)])
        try:
            coarse = optimize.minimize(
                objective,
                z0,
                method="Nelder-Mead",
                options={"initial_simplex": simplex, "maxiter": max_iter, "xatol": 1e-8, "fatol": 1e-8},
            )
            if -coarse.fun > best_value:
                best_z, best_value = coarse.x, -coarse.fun
            fine = optimize.minimize(objective, best_z, jac=jacobian, method="L-BFGS-B")
            if np.isfinite(fine.fun) and -fine.fun > best_value:
                best_z, best_value = fine.x, -fine.fun
        except (ValueError, FloatingPointError) as e:
            logger.warning(f"{self.name}: MAP search stopped early: {e}")
        logger.info(f"{self.name}: MAP log-posterior {best_value:.6g}")
        return np.asarray(best_z, dtype=np.float64)

    def predict(self, curve: str, theta: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        """
        Evaluate a registered predictor curve.

        Raises:
            DomainError: If no predictor of that name is registered.
        """
        if curve not in self.predictors:
            raise DomainError(f"{self.name}: no predictor '{curve}' (available: {sorted(self.predictors)})")
        return np.asarray(self.predictors[curve](theta, np.asarray(inputs, dtype=np.float64)), dtype=np.float64)
