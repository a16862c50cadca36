"""Linear time-invariant state-space models.

Continuous models ``dx/dt = A x + B u``, ``y = C x`` (no feedthrough), their
zero-order-hold discretization, and the incremental ``[dx; y]`` augmentation
used by the predictive controller.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_matrix, check_positive, check_vector

__all__ = [
    "ContinuousStateSpace",
    "DiscreteStateSpace",
    "AugmentedModel",
    "matrix_exponential",
    "discretize",
    "step",
    "augment",
    "spectral_radius",
]

# Degree-13 diagonal Pade coefficients and the scaling threshold for which the
# backward error stays below double-precision unit roundoff (Higham, 2005).
_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
_THETA13 = 5.371920351148152
_MIN_TOL = 1e-15


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True)
class ContinuousStateSpace:
    """``dx/dt = A x + B u``, ``y = C x + D u`` with ``D`` required to be zero.

    Parameters
    ----------
    A : (n_states, n_states) array_like
    B : (n_states, n_inputs) array_like
    C : (n_outputs, n_states) array_like
    D : (n_outputs, n_inputs) array_like, optional
        Must be all zeros when given.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray = field(default=None)

    def __post_init__(self):
        A = check_matrix(self.A, "A", square=True)
        B = check_matrix(self.B, "B")
        C = check_matrix(self.C, "C")
        n = A.shape[0]
        if B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {B.shape[0]}")
        if C.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got {C.shape[1]}")
        m, q = B.shape[1], C.shape[0]
        if self.D is None:
            D = np.zeros((q, m))
        else:
            D = check_matrix(self.D, "D", allow_empty=True)
            if D.shape != (q, m):
                raise ValueError(f"D must have shape {(q, m)}, got {D.shape}")
            if np.any(D != 0.0):
                raise ValueError("feedthrough D must be zero")
        if m < q:
            raise ValueError(f"need at least as many inputs as outputs (m={m} < q={q})")
        A, B, C, D = (np.array(a, dtype=float) for a in (A, B, C, D))
        _freeze(A, B, C, D)
        for name, value in zip("ABCD", (A, B, C, D)):
            object.__setattr__(self, name, value)

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def n_outputs(self):
        return self.C.shape[0]


@dataclass(frozen=True)
class DiscreteStateSpace:
    """``x[k+1] = G x[k] + H u[k]``, ``y[k] = C x[k] + d[k]`` sampled every ``Ts`` seconds."""

    G: np.ndarray
    H: np.ndarray
    C: np.ndarray
    Ts: float

    def __post_init__(self):
        G = check_matrix(self.G, "G", square=True)
        H = check_matrix(self.H, "H")
        C = check_matrix(self.C, "C")
        n = G.shape[0]
        if H.shape[0] != n:
            raise ValueError(f"H must have {n} rows, got {H.shape[0]}")
        if C.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got {C.shape[1]}")
        Ts = check_positive(self.Ts, "Ts")
        G, H, C = (np.array(a, dtype=float) for a in (G, H, C))
        _freeze(G, H, C)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "Ts", Ts)

    @property
    def n_states(self):
        return self.G.shape[0]

    @property
    def n_inputs(self):
        return self.H.shape[1]

    @property
    def n_outputs(self):
        return self.C.shape[0]


@dataclass(frozen=True)
class AugmentedModel:
    """Incremental model on the state ``[dx[k]; y[k]]`` driven by ``du[k]``."""

    Gm: np.ndarray
    Hm: np.ndarray
    Cm: np.ndarray
    n_plant_states: int

    def __post_init__(self):
        Gm = check_matrix(self.Gm, "Gm", square=True)
        Hm = check_matrix(self.Hm, "Hm")
        Cm = check_matrix(self.Cm, "Cm")
        if Hm.shape[0] != Gm.shape[0] or Cm.shape[1] != Gm.shape[0]:
            raise ValueError("augmented matrices have inconsistent dimensions")
        Gm, Hm, Cm = (np.array(a, dtype=float) for a in (Gm, Hm, Cm))
        _freeze(Gm, Hm, Cm)
        object.__setattr__(self, "Gm", Gm)
        object.__setattr__(self, "Hm", Hm)
        object.__setattr__(self, "Cm", Cm)

    @property
    def n_states(self):
        return self.Gm.shape[0]

    @property
    def n_inputs(self):
        return self.Hm.shape[1]

    @property
    def n_outputs(self):
        return self.Cm.shape[0]


def matrix_exponential(M, tol=1e-12):
    """Matrix exponential by scaling and squaring a degree-13 Pade approximant.

    The scaling keeps ``||M / 2**s||_1`` below the degree-13 threshold, which
    bounds the backward error at double-precision roundoff, so any ``tol`` of
    at least 1e-15 is met for well-conditioned exponentials.

    Parameters
    ----------
    M : (n, n) array_like
    tol : float
        Requested relative accuracy; values below 1e-15 are not achievable in
        double precision and are rejected.

    Returns
    -------
    (n, n) ndarray
    """
    M = check_matrix(M, "M", square=True)
    tol = check_positive(tol, "tol")
    if tol < _MIN_TOL:
        raise ValueError(f"tol={tol:g} is below double-precision reach ({_MIN_TOL:g})")
    n = M.shape[0]
    ident = np.eye(n)
    norm = np.linalg.norm(M, 1)
    if norm == 0.0:
        return ident
    s = max(0, int(np.ceil(np.log2(norm / _THETA13))))
    X = M / 2.0**s

    b = _PADE13
    X2 = X @ X
    X4 = X2 @ X2
    X6 = X2 @ X4
    U = X @ (
        X6 @ (b[13] * X6 + b[11] * X4 + b[9] * X2)
        + b[7] * X6 + b[5] * X4 + b[3] * X2 + b[1] * ident
    )
    V = (
        X6 @ (b[12] * X6 + b[10] * X4 + b[8] * X2)
        + b[6] * X6 + b[4] * X4 + b[2] * X2 + b[0] * ident
    )
    E = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        E = E @ E
    return E


def discretize(sys, Ts):
    """Zero-order-hold discretization of a continuous model.

    ``G = exp(A Ts)`` and ``H = int_0^Ts exp(A tau) d tau B``, both read off a
    single exponential of the block matrix ``[[A, B], [0, 0]] * Ts``, which
    stays valid when ``A`` is singular.
    """
    Ts = check_positive(Ts, "Ts")
    n, m = sys.n_states, sys.n_inputs
    block = np.zeros((n + m, n + m))
    block[:n, :n] = sys.A
    block[:n, n:] = sys.B
    E = matrix_exponential(block * Ts)
    return DiscreteStateSpace(G=E[:n, :n], H=E[:n, n:], C=sys.C, Ts=Ts)


def step(sys, x, u, d=None):
    """Advance one sample: returns ``(G x + H u, C x + d)``."""
    x = check_vector(x, sys.n_states, "x")
    u = check_vector(u, sys.n_inputs, "u")
    y = sys.C @ x
    if d is not None:
        y = y + check_vector(d, sys.n_outputs, "d")
    return sys.G @ x + sys.H @ u, y


def augment(sys):
    """Build the incremental model ``Gm = [[G, 0], [C G, I]]``, ``Hm = [H; C H]``, ``Cm = [0, I]``.

    A constant output disturbance drops out of the increments, which is what
    gives the controller its integral action.
    """
    n, q = sys.n_states, sys.n_outputs
    G, H, C = sys.G, sys.H, sys.C
    Gm = np.block([[G, np.zeros((n, q))], [C @ G, np.eye(q)]])
    Hm = np.vstack([H, C @ H])
    Cm = np.hstack([np.zeros((q, n)), np.eye(q)])
    return AugmentedModel(Gm=Gm, Hm=Hm, Cm=Cm, n_plant_states=n)


def spectral_radius(M):
    M = check_matrix(M, "M", square=True)
    return float(np.max(np.abs(np.linalg.eigvals(M))))
