"""Unconstrained incremental model predictive control.

The controller works on the augmented model ``[dx; y]`` (see
:func:`v2g_mpc.lti.augment`), predicts ``Y = F x + Phi dU`` over ``N_p``
samples with ``N_c`` free moves, minimises
``(Rs - Y)' (Rs - Y) + r_w dU' dU`` in closed form and applies only the first
move (receding horizon).
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator

from ._validation import check_positive, check_vector
from .lti import AugmentedModel, DiscreteStateSpace, augment

__all__ = [
    "MpcConfig",
    "PredictionMatrices",
    "MpcState",
    "SingularNormalMatrixError",
    "build_prediction_matrices",
    "build_setpoint_vector",
    "evaluate_cost",
    "solve_optimal_du",
    "factorize_normal_matrix",
    "initial_state",
    "controller_update",
    "MPCController",
]

logger = logging.getLogger(__name__)

TIKHONOV_SCALE = 1e-10


class SingularNormalMatrixError(np.linalg.LinAlgError):
    """``Phi' Phi + r_w I`` could not be factorized and regularization is off."""


@dataclass(frozen=True)
class MpcConfig:
    N_p: int = 10
    N_c: int = 3
    r_w: float = 0.0
    Ts: float = 10e-6

    def __post_init__(self):
        if int(self.N_p) != self.N_p or self.N_p < 1:
            raise ValueError(f"N_p must be a positive integer, got {self.N_p!r}")
        if int(self.N_c) != self.N_c or self.N_c < 1:
            raise ValueError(f"N_c must be a positive integer, got {self.N_c!r}")
        if self.N_c > self.N_p:
            raise ValueError(f"N_c ({self.N_c}) must not exceed N_p ({self.N_p})")
        if not np.isfinite(self.r_w) or self.r_w < 0:
            raise ValueError(f"r_w must be >= 0, got {self.r_w!r}")
        check_positive(self.Ts, "Ts")
        object.__setattr__(self, "N_p", int(self.N_p))
        object.__setattr__(self, "N_c", int(self.N_c))
        object.__setattr__(self, "r_w", float(self.r_w))
        object.__setattr__(self, "Ts", float(self.Ts))

    @property
    def horizon_duration(self):
        """Length of the prediction window in seconds."""
        return self.N_p * self.Ts


@dataclass(frozen=True)
class PredictionMatrices:
    F: np.ndarray
    Phi: np.ndarray
    n_outputs: int
    n_inputs: int

    @property
    def N_p(self):
        return self.F.shape[0] // self.n_outputs

    @property
    def N_c(self):
        return self.Phi.shape[1] // self.n_inputs


@dataclass(frozen=True)
class MpcState:
    """What the controller remembers between samples."""

    x_prev: np.ndarray
    u_prev: np.ndarray
    y_meas: np.ndarray
    k: int = 0


def build_prediction_matrices(aug, cfg):
    """Stack the free response ``F`` and the block-Toeplitz forced response ``Phi``.

    Row block ``i`` of ``F`` is ``Cm Gm^(i+1)``; block ``(i, j)`` of ``Phi`` is
    ``Cm Gm^(i-j) Hm`` for ``i >= j`` and zero above the diagonal.
    """
    if not isinstance(aug, AugmentedModel):
        raise TypeError("aug must be an AugmentedModel")
    q, m = aug.n_outputs, aug.n_inputs
    N_p, N_c = cfg.N_p, cfg.N_c

    F = np.empty((q * N_p, aug.n_states))
    markov = np.empty((N_p, q, m))  # Cm Gm^i Hm
    CG = aug.Cm.copy()
    for i in range(N_p):
        markov[i] = CG @ aug.Hm
        CG = CG @ aug.Gm
        F[i * q:(i + 1) * q] = CG

    Phi = np.zeros((q * N_p, m * N_c))
    for i in range(N_p):
        for j in range(min(i + 1, N_c)):
            Phi[i * q:(i + 1) * q, j * m:(j + 1) * m] = markov[i - j]
    F.setflags(write=False)
    Phi.setflags(write=False)
    return PredictionMatrices(F=F, Phi=Phi, n_outputs=q, n_inputs=m)


def build_setpoint_vector(r, cfg):
    """Repeat the current set-point over the prediction horizon."""
    r = check_vector(r, name="r")
    N_p = cfg.N_p if isinstance(cfg, MpcConfig) else int(cfg)
    return np.tile(r, N_p)


def _check_dims(pm, x_aug, R_s, dU=None):
    x_aug = check_vector(x_aug, pm.F.shape[1], "x_aug")
    R_s = check_vector(R_s, pm.F.shape[0], "R_s")
    if dU is not None:
        dU = check_vector(dU, pm.Phi.shape[1], "dU")
    return x_aug, R_s, dU


def evaluate_cost(pm, r_w, x_aug, R_s, dU):
    """``J = (Rs - Y)'(Rs - Y) + r_w dU'dU`` with ``Y = F x_aug + Phi dU``."""
    x_aug, R_s, dU = _check_dims(pm, x_aug, R_s, dU)
    if r_w < 0:
        raise ValueError("r_w must be >= 0")
    e = R_s - pm.F @ x_aug - pm.Phi @ dU
    return float(e @ e + r_w * (dU @ dU))


def factorize_normal_matrix(pm, r_w, regularize=True):
    """Cholesky factor of ``Phi'Phi + r_w I``.

    A factorization counts as failed when Cholesky raises or when the smallest
    pivot is negligible against the largest. With ``regularize`` the matrix is
    then shifted by ``1e-10 * trace / rows`` and factorized again.

    Returns
    -------
    factor : tuple
        Suitable for :func:`scipy.linalg.cho_solve`.
    regularized : bool
    """
    M = pm.Phi.T @ pm.Phi + r_w * np.eye(pm.Phi.shape[1])
    try:
        factor = linalg.cho_factor(M, lower=True, check_finite=False)
        piv = np.abs(np.diag(factor[0]))
        if piv.min() ** 2 <= np.finfo(float).eps * M.shape[0] * piv.max() ** 2:
            raise np.linalg.LinAlgError("normal matrix is numerically singular")
        return factor, False
    except np.linalg.LinAlgError as exc:
        if not regularize:
            raise SingularNormalMatrixError(str(exc)) from exc
    eps = TIKHONOV_SCALE * np.trace(M) / M.shape[0]
    if eps <= 0:
        raise SingularNormalMatrixError("Phi is identically zero")
    logger.warning("normal matrix singular; adding Tikhonov term %.3g*I", eps)
    factor = linalg.cho_factor(M + eps * np.eye(M.shape[0]), lower=True, check_finite=False)
    return factor, True


def solve_optimal_du(pm, r_w, x_aug, R_s, regularize=True, factor=None):
    """Closed-form minimiser ``dU = (Phi'Phi + r_w I)^-1 Phi' (Rs - F x_aug)``."""
    x_aug, R_s, _ = _check_dims(pm, x_aug, R_s)
    if factor is None:
        factor, _ = factorize_normal_matrix(pm, r_w, regularize)
    rhs = pm.Phi.T @ (R_s - pm.F @ x_aug)
    return linalg.cho_solve(factor, rhs, check_finite=False)


def initial_state(n_states, n_inputs, n_outputs, x0=None, u0=None):
    x0 = np.zeros(n_states) if x0 is None else check_vector(x0, n_states, "x0")
    u0 = np.zeros(n_inputs) if u0 is None else check_vector(u0, n_inputs, "u0")
    return MpcState(x_prev=x0.copy(), u_prev=u0.copy(), y_meas=np.zeros(n_outputs), k=0)


def controller_update(state, cfg, aug, pm, y_meas, x_meas, r, *, factor=None,
                      u_min=None, u_max=None, return_du=False):
    """One receding-horizon step.

    Builds ``x_aug = [x_meas - x_prev; y_meas]``, solves for the move sequence
    and keeps only its first ``m`` entries. When bounds are given, the
    accumulated input is clipped to them and the increment recorded is the
    one actually applied, so ``u[k] = u[0] + sum(du)`` still holds exactly.

    Returns
    -------
    mv : ndarray
        Input to apply over the next sample.
    state : MpcState
    du : ndarray, only when ``return_du``
    """
    n = aug.n_plant_states
    x_meas = check_vector(x_meas, n, "x_meas")
    y_meas = check_vector(y_meas, aug.n_outputs, "y_meas")
    r = check_vector(r, aug.n_outputs, "r")
    if factor is None:
        factor, _ = factorize_normal_matrix(pm, cfg.r_w)

    x_aug = np.concatenate([x_meas - state.x_prev, y_meas])
    R_s = build_setpoint_vector(r, cfg)
    dU = solve_optimal_du(pm, cfg.r_w, x_aug, R_s, factor=factor)
    du = dU[:aug.n_inputs]
    u = state.u_prev + du
    if u_min is not None or u_max is not None:
        u = np.clip(u, u_min, u_max)
        du = u - state.u_prev
        u = state.u_prev + du
    new_state = MpcState(x_prev=x_meas.copy(), u_prev=u, y_meas=y_meas.copy(), k=state.k + 1)
    if return_du:
        return u.copy(), new_state, du
    return u.copy(), new_state


class MPCController(BaseEstimator):
    """Incremental MPC wrapped as an estimator.

    ``fit`` takes a :class:`~v2g_mpc.lti.DiscreteStateSpace` and precomputes
    the augmented model, ``F``, ``Phi`` and the factorized normal matrix.
    ``update`` runs the receding-horizon loop; ``predict`` maps a batch of
    augmented states and set-points to first moves without touching the loop
    state.

    Parameters
    ----------
    n_pred : int, default=10
        Prediction horizon in samples.
    n_ctrl : int, default=3
        Control horizon in samples.
    r_w : float, default=0.0
        Weight on the move vector.
    regularize : bool, default=True
        Fall back to a small Tikhonov shift when the normal matrix is singular.
    u_min, u_max : float or array_like, optional
        Clip on the accumulated input (anti-windup).
    """

    def __init__(self, n_pred=10, n_ctrl=3, r_w=0.0, regularize=True, u_min=None, u_max=None):
        self.n_pred = n_pred
        self.n_ctrl = n_ctrl
        self.r_w = r_w
        self.regularize = regularize
        self.u_min = u_min
        self.u_max = u_max

    def fit(self, model, y=None):
        if not isinstance(model, DiscreteStateSpace):
            raise TypeError("fit expects a DiscreteStateSpace")
        self.config_ = MpcConfig(N_p=self.n_pred, N_c=self.n_ctrl, r_w=self.r_w, Ts=model.Ts)
        self.model_ = model
        self.augmented_ = augment(model)
        self.matrices_ = build_prediction_matrices(self.augmented_, self.config_)
        self.factor_, self.regularized_ = factorize_normal_matrix(
            self.matrices_, self.r_w, self.regularize
        )
        self.reset()
        return self

    def _check_fitted(self):
        if not hasattr(self, "matrices_"):
            raise RuntimeError("MPCController is not fitted; call fit(model) first")

    def reset(self, x0=None, u0=None):
        self._check_fitted()
        m = self.model_
        self.state_ = initial_state(m.n_states, m.n_inputs, m.n_outputs, x0, u0)
        return self

    def update(self, y_meas, x_meas, r):
        """Advance the loop one sample and return the input to apply."""
        self._check_fitted()
        mv, self.state_, self.last_du_ = controller_update(
            self.state_, self.config_, self.augmented_, self.matrices_,
            y_meas, x_meas, r, factor=self.factor_,
            u_min=self.u_min, u_max=self.u_max, return_du=True,
        )
        return mv

    def solve(self, x_aug, R_s):
        """Full optimal move vector for one augmented state."""
        self._check_fitted()
        return solve_optimal_du(self.matrices_, self.r_w, x_aug, R_s, factor=self.factor_)

    def predict(self, X, R):
        """First moves for a batch.

        Parameters
        ----------
        X : (n_samples, n_states + n_outputs) array_like
            Augmented states.
        R : (n_samples, n_outputs) array_like
            Set-points, held over the horizon.

        Returns
        -------
        (n_samples, n_inputs) ndarray
        """
        self._check_fitted()
        X = np.atleast_2d(np.asarray(X, dtype=float))
        R = np.atleast_2d(np.asarray(R, dtype=float))
        if X.shape[0] != R.shape[0]:
            raise ValueError("X and R must have the same number of rows")
        pm = self.matrices_
        Rs = np.tile(R, self.config_.N_p)
        rhs = pm.Phi.T @ (Rs - X @ pm.F.T).T
        dU = linalg.cho_solve(self.factor_, rhs, check_finite=False)
        return dU[:pm.n_inputs].T

    def cost(self, x_aug, R_s, dU):
        self._check_fitted()
        return evaluate_cost(self.matrices_, self.r_w, x_aug, R_s, dU)
