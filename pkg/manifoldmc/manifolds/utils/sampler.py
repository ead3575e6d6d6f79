"""
Reversible Metropolis-Hastings sampler on constraint manifolds.

One step draws an isotropic Gaussian tangent move, projects it back onto M
along the normal space at the current point, checks the inequalities,
applies the Metropolis-Hastings test and finally certifies that the reverse
move would regenerate the current point.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from manifolds.exceptions import DegenerateConstraintError, DomainError, InvalidStateError
from manifolds.utils.core import (
    ConstraintManifold,
    NewtonParams,
    TangentFrame,
    project,
    tangent_frame,
    tangential_decompose,
)

logger = logging.getLogger(__name__)

LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class StepOutcome(str, Enum):
    PROJECTION_FAILURE = 'ProjectionFailure'
    INEQUALITY_FAILURE = 'InequalityFailure'
    METROPOLIS_REJECT = 'MetropolisReject'
    REVERSE_FAILURE = 'ReverseFailure'
    ACCEPTED = 'Accepted'


@dataclass(frozen=True)
class ProposalParams:
    """
    step_scale is the standard deviation s of each tangent coordinate,
    density the un-normalized target f (positive on M).
    """

    step_scale: float
    density: Callable[[np.ndarray], float]
    newton: NewtonParams = field(default_factory=NewtonParams)
    reverse_match_tol: Optional[float] = None
    # disabling breaks detailed balance; only used to demonstrate the bias
    reverse_check: bool = True

    def __post_init__(self):
        if not self.step_scale > 0:
            raise DomainError(f"step_scale must be positive, got {self.step_scale}")

    @property
    def match_tol(self) -> float:
        if self.reverse_match_tol is not None:
            return self.reverse_match_tol
        return max(1e-8, 100 * self.newton.tol)


@dataclass(frozen=True)
class ChainState:
    x: np.ndarray
    fx: float
    frame: TangentFrame


@dataclass(frozen=True)
class StepDiagnostics:
    outcome: StepOutcome
    newton_iterations_forward: int = 0
    newton_iterations_reverse: int = 0


@dataclass
class ChainResult:
    samples: np.ndarray
    sample_steps: np.ndarray
    counts: Dict[StepOutcome, int]
    n_steps: int
    final_state: ChainState
    # per-step values of the requested observables
    series: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def acceptance(self) -> float:
        if self.n_steps == 0:
            return 0.0
        return self.counts[StepOutcome.ACCEPTED] / self.n_steps

    def rates(self) -> Dict[str, float]:
        total = max(self.n_steps, 1)
        return {outcome.value: count / total for outcome, count in self.counts.items()}


def uniform_density(x: np.ndarray) -> float:
    return 1.0


def log_tangent_density(v: np.ndarray, s: float, d: int) -> float:
    v = np.asarray(v, dtype=float)
    return -float(v @ v) / (2 * s * s) - d * (math.log(s) + LOG_SQRT_2PI)


def tangent_density(v: np.ndarray, s: float, d: int) -> float:
    """(2 pi)^(-d/2) s^(-d) exp(-|v|^2 / 2 s^2)."""
    return math.exp(log_tangent_density(v, s, d))


def sample_tangent(frame: TangentFrame, s: float, rng: np.random.Generator):
    """Draw v = U_tan xi with xi ~ N(0, s^2 I_d); returns (v, log p(v))."""
    if not s > 0:
        raise DomainError(f"step scale must be positive, got {s}")
    xi = s * rng.standard_normal(frame.d)
    logp = -float(xi @ xi) / (2 * s * s) - frame.d * (math.log(s) + LOG_SQRT_2PI)
    return frame.U_tan @ xi, logp


def initial_state(M: ConstraintManifold, params: ProposalParams, x: np.ndarray) -> ChainState:
    x = np.array(x, dtype=float)
    if x.shape != (M.ambient_dim,):
        raise InvalidStateError(f"start point has shape {x.shape}, expected ({M.ambient_dim},)")
    if not M.is_feasible(x, params.newton.tol):
        raise InvalidStateError(f"start point is not a feasible point of {M.name}")
    fx = float(params.density(x))
    if not fx > 0:
        raise InvalidStateError(f"density is not positive at the start point (f={fx})")
    try:
        frame = tangent_frame(M, x)
    except DegenerateConstraintError as exc:
        raise InvalidStateError(f"start point is a singular point of {M.name}: {exc}") from exc
    return ChainState(x=x, fx=fx, frame=frame)


def mcmc_step(state: ChainState, M: ConstraintManifold, params: ProposalParams, rng: np.random.Generator):
    """
    One step of the sampler. Every rejection returns the input state object
    unchanged together with the reason.
    """
    s = params.step_scale
    frame = state.frame

    v, logp_forward = sample_tangent(frame, s, rng)
    forward = project(M, state.x + v, frame.Q, params.newton)
    if not forward.success:
        return state, StepDiagnostics(StepOutcome.PROJECTION_FAILURE, forward.iterations)
    y = forward.point

    if not M.satisfies_inequalities(y):
        return state, StepDiagnostics(StepOutcome.INEQUALITY_FAILURE, forward.iterations)

    try:
        frame_y = tangent_frame(M, y)
    except DegenerateConstraintError:
        return state, StepDiagnostics(StepOutcome.PROJECTION_FAILURE, forward.iterations)
    v_reverse, _ = tangential_decompose(state.x - y, frame_y)

    fy = float(params.density(y))
    if not fy > 0:
        return state, StepDiagnostics(StepOutcome.METROPOLIS_REJECT, forward.iterations)
    log_ratio = (
        math.log(fy) + log_tangent_density(v_reverse, s, frame_y.d)
        - math.log(state.fx) - logp_forward
    )
    if log_ratio < 0 and rng.random() >= math.exp(log_ratio):
        return state, StepDiagnostics(StepOutcome.METROPOLIS_REJECT, forward.iterations)

    reverse_iterations = 0
    if params.reverse_check:
        reverse = project(M, y + v_reverse, frame_y.Q, params.newton)
        reverse_iterations = reverse.iterations
        if not reverse.success or np.linalg.norm(reverse.point - state.x) > params.match_tol:
            return state, StepDiagnostics(StepOutcome.REVERSE_FAILURE, forward.iterations, reverse_iterations)

    return ChainState(x=y, fx=fy, frame=frame_y), StepDiagnostics(
        StepOutcome.ACCEPTED, forward.iterations, reverse_iterations
    )


def run_chain(
    M: ConstraintManifold,
    params: ProposalParams,
    x_init,
    n_steps: int,
    stride: int,
    rng: np.random.Generator,
    observables: Optional[Mapping[str, Callable[[np.ndarray], float]]] = None,
    observer: Optional[Callable[[int, ChainState, StepDiagnostics], None]] = None,
) -> ChainResult:
    """
    Run n_steps of mcmc_step from x_init (a point or a ChainState).

    The state after step j is stored when (j + 1) % stride == 0. Observables
    are evaluated after every step (recomputed only on acceptance) and
    returned as per-step series; observer sees every step.
    """
    if n_steps < 0:
        raise DomainError(f"n_steps must be non-negative, got {n_steps}")
    if stride < 1:
        raise DomainError(f"stride must be >= 1, got {stride}")

    state = x_init if isinstance(x_init, ChainState) else initial_state(M, params, x_init)
    counts = {outcome: 0 for outcome in StepOutcome}
    n_stored = n_steps // stride
    samples = np.empty((n_stored, M.ambient_dim))
    sample_steps = np.empty(n_stored, dtype=np.int64)

    observables = dict(observables or {})
    series = {name: np.empty(n_steps) for name in observables}
    current = {name: float(fn(state.x)) for name, fn in observables.items()}

    stored = 0
    for j in range(n_steps):
        state, diag = mcmc_step(state, M, params, rng)
        counts[diag.outcome] += 1
        if diag.outcome is StepOutcome.ACCEPTED:
            for name, fn in observables.items():
                current[name] = float(fn(state.x))
        for name in observables:
            series[name][j] = current[name]
        if observer is not None:
            observer(j, state, diag)
        if (j + 1) % stride == 0:
            samples[stored] = state.x
            sample_steps[stored] = j + 1
            stored += 1

    if n_steps:
        logger.debug(
            f"{M.name}: {n_steps} steps, acceptance {counts[StepOutcome.ACCEPTED] / n_steps:.3f}"
        )
    return ChainResult(
        samples=samples,
        sample_steps=sample_steps,
        counts=counts,
        n_steps=n_steps,
        final_state=state,
        series=series,
    )


@dataclass(frozen=True)
class ObservableAverage:
    mean: float
    stderr: float
    run_means: np.ndarray


def mean_observable(
    M: ConstraintManifold,
    params: ProposalParams,
    observable: Callable[[np.ndarray], float],
    x_init,
    n_points: int,
    n_repeats: int,
    rng: np.random.Generator,
    burn_in: int = 0,
) -> ObservableAverage:
    """
    Average of an observable under the density params targets, from
    n_repeats independent chains of n_points steps each. The error bar is
    the sample standard deviation of the run means over sqrt(n_repeats).

    With a uniform target and the rigidity weight as observable this is the
    sampled estimate of z / V.
    """
    if n_repeats < 2:
        raise DomainError("mean_observable needs at least two repeats for an error bar")
    total = burn_in + n_points
    run_means = np.empty(n_repeats)
    for i, child in enumerate(rng.spawn(n_repeats)):
        result = run_chain(M, params, x_init, total, stride=total + 1, rng=child,
                           observables={'value': observable})
        run_means[i] = result.series['value'][burn_in:].mean()
    stderr = float(run_means.std(ddof=1) / math.sqrt(n_repeats))
    return ObservableAverage(mean=float(run_means.mean()), stderr=stderr, run_means=run_means)
