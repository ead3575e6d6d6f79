"""
Constraint manifolds, tangent frames and the Newton projector.

A manifold M is the zero set of q: R^da -> R^m intersected with the open
set {h > 0}. Its tangent space at x is the null space of Q_x^t, where
column i of Q_x is the gradient of q_i. Frames are rebuilt at every point,
from a single Householder reflection when m = 1 and a dense QR otherwise.

Usage:
    M = ConstraintManifold(ambient_dim=2, equality_count=1, q=..., grad_q=...)
    frame = tangent_frame(M, x)
    result = project(M, x + v, frame.Q, NewtonParams())
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.optimize import least_squares

from manifolds.exceptions import DegenerateConstraintError, DomainError, InvalidStateError

logger = logging.getLogger(__name__)

# smallest singular value of Q_x must stay above this fraction of the largest
RANK_THRESHOLD = 1e-10
# R diagonals spread wider than this are checked with a full SVD
RANK_SCREEN = 1e-4


@dataclass(frozen=True)
class ConstraintManifold:
    """
    M = {x in R^ambient_dim : q(x) = 0, h(x) > 0}.

    q returns a length-m vector, grad_q the ambient_dim x m matrix whose
    column i is the gradient of q_i, h a length-l vector (or None when l = 0).
    """

    ambient_dim: int
    equality_count: int
    q: Callable[[np.ndarray], np.ndarray]
    grad_q: Callable[[np.ndarray], np.ndarray]
    h: Optional[Callable[[np.ndarray], np.ndarray]] = None
    inequality_count: int = 0
    name: str = 'manifold'

    def __post_init__(self):
        if self.ambient_dim < 1:
            raise DomainError(f"ambient_dim must be >= 1, got {self.ambient_dim}")
        if self.equality_count < 0 or self.inequality_count < 0:
            raise DomainError("constraint counts must be non-negative")
        if self.h is None and self.inequality_count > 0:
            raise DomainError("inequality_count > 0 requires an h callback")

    @property
    def intrinsic_dim(self) -> int:
        return self.ambient_dim - self.equality_count

    def residual(self, x: np.ndarray) -> np.ndarray:
        if self.equality_count == 0:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self.q(x), dtype=float))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        if self.equality_count == 0:
            return np.zeros((self.ambient_dim, 0))
        return np.asarray(self.grad_q(x), dtype=float).reshape(self.ambient_dim, self.equality_count)

    def inequalities(self, x: np.ndarray) -> np.ndarray:
        if self.h is None:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self.h(x), dtype=float))

    def satisfies_inequalities(self, x: np.ndarray) -> bool:
        values = self.inequalities(x)
        return bool(np.all(values > 0))

    def is_feasible(self, x: np.ndarray, tol: float) -> bool:
        with np.errstate(all='ignore'):
            rnorm = np.linalg.norm(self.residual(x))
        return bool(np.isfinite(rnorm) and rnorm <= tol and self.satisfies_inequalities(x))

    def restricted_to_ball(self, center: np.ndarray, radius: float) -> 'ConstraintManifold':
        """Same manifold with the extra inequality radius^2 - |x - center|^2 > 0."""
        center = np.array(center, dtype=float)
        radius_sq = float(radius) ** 2
        base = self

        def h_ball(x):
            diff = np.asarray(x, dtype=float) - center
            return np.concatenate([base.inequalities(x), [radius_sq - diff @ diff]])

        return ConstraintManifold(
            ambient_dim=self.ambient_dim,
            equality_count=self.equality_count,
            q=self.q,
            grad_q=self.grad_q,
            h=h_ball,
            inequality_count=self.inequality_count + 1,
            name=f"{self.name}|ball(r={radius:g})",
        )


@dataclass(frozen=True)
class TangentFrame:
    point: np.ndarray
    U_tan: np.ndarray
    U_norm: np.ndarray
    Q: np.ndarray

    @property
    def d(self) -> int:
        return self.U_tan.shape[1]

    @property
    def m(self) -> int:
        return self.U_norm.shape[1]

    def tangent_projector(self) -> np.ndarray:
        return self.U_tan @ self.U_tan.T

    def normal_projector(self) -> np.ndarray:
        return self.U_norm @ self.U_norm.T


@dataclass(frozen=True)
class NewtonParams:
    tol: float = 1e-12
    nmax: int = 10

    def __post_init__(self):
        if not self.tol > 0:
            raise DomainError(f"Newton tol must be positive, got {self.tol}")
        if self.nmax < 1:
            raise DomainError(f"Newton nmax must be >= 1, got {self.nmax}")


@dataclass
class ProjectionResult:
    a: np.ndarray
    success: bool
    iterations: int
    point: np.ndarray
    residual: float = 0.0
    # the Newton linear system was singular or produced non-finite values
    breakdown: bool = False


def _householder_frame(x: np.ndarray, Q: np.ndarray, name: str) -> TangentFrame:
    g = Q[:, 0]
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0:
        raise DegenerateConstraintError(f"constraint gradient of {name} vanishes", smin=0.0, smax=0.0)
    n = g / gnorm
    sign = 1.0 if n[0] >= 0 else -1.0
    w = n.copy()
    w[0] += sign
    # H = I - 2 w w^t / |w|^2 maps e_1 to -sign n; its other columns span n's complement
    U_tan = np.eye(x.shape[0])[:, 1:] - np.outer(w, w[1:] * (2.0 / (w @ w)))
    if sign < 0 and U_tan.shape[1]:
        U_tan[:, -1] *= -1
    return TangentFrame(point=x.copy(), U_tan=U_tan, U_norm=n[:, None], Q=Q)


def tangent_frame(M: ConstraintManifold, x: np.ndarray) -> TangentFrame:
    """
    Orthonormal bases of T_x and its complement: a Householder reflection
    for one constraint, else the full QR of Q_x, whose first m columns span
    span(Q_x) and last d columns the tangent space. Frames are oriented: U_norm is the
    Gram-Schmidt basis of the gradients (positive R diagonal) and
    det([U_norm | U_tan]) = +1, so U_tan varies continuously with x.
    """
    x = np.asarray(x, dtype=float)
    Q = M.gradient(x)
    da, m = Q.shape
    if m == 0:
        return TangentFrame(point=x.copy(), U_tan=np.eye(da), U_norm=np.zeros((da, 0)), Q=Q)
    if m > da:
        raise DegenerateConstraintError(f"{m} constraints in {da} ambient dimensions")
    if not np.all(np.isfinite(Q)):
        raise DegenerateConstraintError(f"non-finite constraint gradient at {M.name}")
    if m == 1:
        return _householder_frame(x, Q, M.name)

    Qf, Rf = linalg.qr(Q, mode='full', check_finite=False)
    diag = np.diag(Rf)
    rdiag = np.abs(diag)
    # |R_ii| bounds the singular values; confirm with an SVD only when the bound is close
    if rdiag.max() == 0 or rdiag.min() < RANK_SCREEN * rdiag.max():
        sv = linalg.svdvals(Rf[:m, :m], check_finite=False)
        smax, smin = sv[0], sv[-1]
        if smax == 0 or smin < RANK_THRESHOLD * smax:
            raise DegenerateConstraintError(
                f"constraint gradients of {M.name} are rank deficient (smin={smin:.3e}, smax={smax:.3e})",
                smin=smin,
                smax=smax,
            )
    Qf[:, :m] *= np.where(diag < 0, -1.0, 1.0)
    if np.linalg.det(Qf) < 0:
        Qf[:, -1] *= -1
    return TangentFrame(point=x.copy(), U_tan=Qf[:, m:], U_norm=Qf[:, :m], Q=Q)


def project(M: ConstraintManifold, z: np.ndarray, Q: np.ndarray, params: NewtonParams) -> ProjectionResult:
    """
    Solve q(z + Q a) = 0 for a by plain Newton from a = 0.

    No line search and no regularization. A singular or non-finite Newton
    step counts as failure; a failed result always reports nmax iterations.
    """
    z = np.asarray(z, dtype=float)
    Q = np.asarray(Q, dtype=float)
    a = np.zeros(Q.shape[1])
    point = z.copy()
    rnorm = np.inf

    with np.errstate(all='ignore'):
        for iteration in range(params.nmax + 1):
            r = M.residual(point)
            rnorm = float(np.linalg.norm(r))
            if rnorm <= params.tol:
                return ProjectionResult(a=a, success=True, iterations=iteration, point=point, residual=rnorm)
            if iteration == params.nmax or not np.isfinite(rnorm):
                break

            J = M.gradient(point).T @ Q
            if J.shape == (1, 1):
                step = -r / J[0, 0]
            else:
                try:
                    step = np.linalg.solve(J, -r)
                except np.linalg.LinAlgError:
                    return ProjectionResult(a=a, success=False, iterations=params.nmax, point=point,
                                            residual=rnorm, breakdown=True)
            if not np.all(np.isfinite(step)):
                return ProjectionResult(a=a, success=False, iterations=params.nmax, point=point,
                                        residual=rnorm, breakdown=True)
            a = a + step
            point = z + Q @ a

    return ProjectionResult(a=a, success=False, iterations=params.nmax, point=point, residual=rnorm)


def cross_jacobian(frame_x: TangentFrame, frame_y: TangentFrame) -> float:
    """
    det(U_x^t U_y): product of cosines of the principal angles. Frames from
    tangent_frame share an orientation, so the sign turns negative only where
    the tangent planes have folded over.
    """
    if frame_x.d != frame_y.d:
        raise DomainError(f"frames have different dimensions ({frame_x.d} vs {frame_y.d})")
    if frame_x.d == 0:
        return 1.0
    return float(np.linalg.det(frame_x.U_tan.T @ frame_y.U_tan))


def tangential_decompose(delta: np.ndarray, frame: TangentFrame):
    """Split delta into its tangential part v_t and normal part w_n = delta - v_t."""
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (frame.point.shape[0],):
        raise DomainError(f"delta has shape {delta.shape}, expected ({frame.point.shape[0]},)")
    v_t = frame.U_tan @ (frame.U_tan.T @ delta)
    return v_t, delta - v_t


def check_gradients(M: ConstraintManifold, x: np.ndarray, eps: float = 1e-6) -> float:
    """Relative error between grad_q and a central finite difference of q at x."""
    x = np.asarray(x, dtype=float)
    G = M.gradient(x)
    G_fd = np.zeros_like(G)
    for i in range(M.ambient_dim):
        e = np.zeros_like(x)
        e[i] = eps
        G_fd[i, :] = (M.residual(x + e) - M.residual(x - e)) / (2 * eps)
    scale = max(np.linalg.norm(G), 1.0)
    return float(np.linalg.norm(G - G_fd) / scale)


def find_feasible_point(
    M: ConstraintManifold,
    x_guess: np.ndarray,
    rng: Optional[np.random.Generator] = None,
    params: NewtonParams = NewtonParams(),
    restarts: int = 20,
    jitter: float = 0.1,
) -> np.ndarray:
    """
    Locate a point of M near x_guess.

    Least squares on q drives the residual down, a Newton projection along
    the local gradients polishes it to params.tol, and the inequalities are
    checked last. Failed attempts restart from a jittered guess.
    """
    rng = rng if rng is not None else np.random.default_rng()
    x_guess = np.asarray(x_guess, dtype=float)

    for attempt in range(restarts):
        start = x_guess if attempt == 0 else x_guess + jitter * rng.standard_normal(x_guess.shape)
        if M.equality_count == 0:
            candidate = start
        else:
            fit = least_squares(
                M.residual,
                start,
                jac=lambda x: M.gradient(x).T,
                method='trf',
                xtol=1e-15,
                ftol=1e-15,
                gtol=1e-15,
            )
            candidate = fit.x
            if np.linalg.norm(M.residual(candidate)) > params.tol:
                polished = project(M, candidate, M.gradient(candidate), params)
                if not polished.success:
                    continue
                candidate = polished.point
        if M.is_feasible(candidate, params.tol):
            logger.debug(f"Feasible point for {M.name} found on attempt {attempt + 1}")
            return candidate

    raise InvalidStateError(f"no feasible point found for {M.name} after {restarts} attempts")
