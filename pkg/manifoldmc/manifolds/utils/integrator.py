"""
Multi-phase integration of a positive function over a constraint manifold.

Z is written as Z_k * prod R_i over nested balls B_0 > B_1 > ... > B_k
centered at x_0. Each ratio R_i = Z(B_i) / Z(B_(i+1)) is estimated from a
chain on M restricted to B_i; Z_k is a direct Monte Carlo estimate from the
tangent disk at x_0 projected onto M. Every estimate carries a single-run
relative error bar.

Usage:
    config = IntegrationConfig(n_total=100_000, k=2, step_scale=0.5)
    estimate = integrate(M, f, config, rng, x_init)
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from manifolds.exceptions import (
    DegenerateConstraintError,
    DomainError,
    InnermostProjectionError,
    InvalidStateError,
    NoValidRadiusError,
    ScheduleError,
    StageFailureError,
)
from manifolds.utils.core import (
    ConstraintManifold,
    NewtonParams,
    cross_jacobian,
    project,
    tangent_frame,
)
from manifolds.utils.sampler import ProposalParams, run_chain
from manifolds.utils.stats import combine_error, integrated_act
from manifolds.utils.zoo import ball_volume

logger = logging.getLogger(__name__)

# the probe gives up once the candidate radius falls below this fraction of r_start
PROBE_FLOOR = 1e-8
# a chord is only vertical if its normal part is at least this fraction of the radius
VERTICAL_CHORD_FRACTION = 0.1
# one rim point is checked for every BOUNDARY_SHARE interior probe draws
BOUNDARY_SHARE = 100


@dataclass(frozen=True)
class BallSchedule:
    center: np.ndarray
    radii: tuple
    nu: float
    k: int
    d: int

    def to_dict(self) -> dict:
        return {
            'x0': self.center.tolist(),
            'radii': list(self.radii),
            'nu': self.nu,
            'k': self.k,
            'd': self.d,
        }


@dataclass
class RatioEstimate:
    stage: int
    r_outer: float
    r_inner: float
    R_hat: float
    p_hat: float
    tau_hat: float
    n_i: int
    N_next: int
    window: int = 0
    acceptance: float = 0.0
    outcome_rates: Dict[str, float] = field(default_factory=dict)
    # N_{i,j} for the deeper balls j > i + 1, recorded but not used
    deeper_counts: List[int] = field(default_factory=list)
    burn_in: int = 0
    step_scale: float = 0.0
    last_inner_point: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            'stage': self.stage,
            'r_outer': self.r_outer,
            'r_inner': self.r_inner,
            'n_i': self.n_i,
            'N_next': self.N_next,
            'R_hat': self.R_hat,
            'p_hat': self.p_hat,
            'tau_hat': self.tau_hat,
            'window': self.window,
            'acceptance': self.acceptance,
            'outcome_rates': self.outcome_rates,
            'deeper_counts': self.deeper_counts,
            'burn_in': self.burn_in,
            'step_scale': self.step_scale,
        }


@dataclass
class InnermostEstimate:
    Z_k_hat: float
    rho_k: float
    n_k: int
    disk_volume: float
    inside_fraction: float

    def to_dict(self) -> dict:
        return {
            'Z_k_hat': self.Z_k_hat,
            'rho_k': self.rho_k,
            'n_k': self.n_k,
            'disk_volume': self.disk_volume,
            'inside_fraction': self.inside_fraction,
        }


@dataclass
class ProbeResult:
    radius: float
    shrinks: int
    # fraction of pair-test states with det(U_x0^t U_y) <= 0 at the accepted radius
    negative_det_fraction: float = 0.0
    rejected: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'radius': self.radius,
            'shrinks': self.shrinks,
            'negative_det_fraction': self.negative_det_fraction,
            'rejected': self.rejected,
        }


@dataclass
class IntegralEstimate:
    Z_hat: float
    sigma_r: float
    Z_k_hat: float
    rho_k: float
    stages: List[RatioEstimate]
    schedule: BallSchedule
    log_Z_hat: float
    innermost: Optional[InnermostEstimate] = None
    probe: Optional[ProbeResult] = None
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            'Z_hat': self.Z_hat,
            'log_Z_hat': self.log_Z_hat,
            'sigma_r': self.sigma_r,
            'Z_k_hat': self.Z_k_hat,
            'rho_k': self.rho_k,
            'schedule': self.schedule.to_dict(),
            'stages': [stage.to_dict() for stage in self.stages],
            'innermost': self.innermost.to_dict() if self.innermost else None,
            'probe': self.probe.to_dict() if self.probe else None,
            'wall_time': self.wall_time,
        }


@dataclass(frozen=True)
class IntegrationConfig:
    n_total: int = 100_000
    k: int = 2
    step_scale: float = 0.5
    newton: NewtonParams = field(default_factory=NewtonParams)
    burn_in_fraction: float = 0.01
    # initial run used to pick x_0 and r_0
    n_initial: int = 10_000
    initial_stride: int = 5
    n_probe: int = 100_000
    pair_steps: int = 5_000
    angle_tol_factor: float = 1e-3
    probe_start_fraction: float = 0.5
    # stage i proposes with min(step_scale, stage_step_fraction * r_i) when set
    stage_step_fraction: Optional[float] = None
    # innermost draws; defaults to n_total // k
    n_innermost: Optional[int] = None
    center: Optional[tuple] = None
    r_outer: Optional[float] = None
    r_inner: Optional[float] = None
    parallel: bool = False
    workers: int = 4

    def __post_init__(self):
        if self.k < 1:
            raise DomainError(f"k must be >= 1, got {self.k}")
        if self.n_total // self.k < 100:
            raise DomainError(f"n_total={self.n_total} leaves fewer than 100 points per stage")
        if not 0 <= self.burn_in_fraction < 1:
            raise DomainError(f"burn_in_fraction must lie in [0, 1), got {self.burn_in_fraction}")
        if not 0 < self.probe_start_fraction <= 1:
            raise DomainError("probe_start_fraction must lie in (0, 1]")
        if self.stage_step_fraction is not None and not self.stage_step_fraction > 0:
            raise DomainError(f"stage_step_fraction must be positive, got {self.stage_step_fraction}")

    @property
    def stage_length(self) -> int:
        return self.n_total // self.k


def choose_center(samples, M: ConstraintManifold, chunk: int = 1024) -> np.ndarray:
    """
    Sample farthest from the inequality constraints (argmax min_j h_j), or
    with no inequalities the sample of smallest maximal distance to the rest.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise DomainError("choose_center needs a non-empty 2-D sample array")
    if M.inequality_count > 0:
        margins = np.array([M.inequalities(x).min() for x in samples])
        return samples[int(np.argmax(margins))].copy()

    spread = np.empty(samples.shape[0])
    for start in range(0, samples.shape[0], chunk):
        block = samples[start:start + chunk]
        spread[start:start + chunk] = cdist(block, samples).max(axis=1)
    return samples[int(np.argmin(spread))].copy()


def outer_radius(samples, x0) -> float:
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] == 0:
        raise DomainError("outer_radius needs at least one sample")
    return float(np.linalg.norm(samples - np.asarray(x0, dtype=float), axis=1).max())


def uniform_disk(n: int, d: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """n points uniform in the d-ball of the given radius: Gaussian direction times r U^(1/d)."""
    directions = rng.standard_normal((n, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(n) ** (1.0 / d)
    return directions * radii[:, None]


def disk_boundary(d: int, radius: float, n_random: int, rng: np.random.Generator) -> np.ndarray:
    """The 2d axis points +-radius e_i followed by n_random uniform points on the sphere of that radius."""
    axes = radius * np.vstack([np.eye(d), -np.eye(d)])
    directions = rng.standard_normal((n_random, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return np.vstack([axes, radius * directions])


def _first_failed_projection(M, x0, frame0, draws, newton) -> Optional[int]:
    for i, u in enumerate(draws):
        if not project(M, x0 + frame0.U_tan @ u, frame0.U_norm, newton).success:
            return i
    return None


def probe_min_radius(
    M: ConstraintManifold,
    x0,
    r_start: float,
    n_probe: int,
    angle_tol: Optional[float],
    rng: np.random.Generator,
    step_scale: float = 0.5,
    newton: NewtonParams = NewtonParams(),
    pair_steps: int = 5_000,
    angle_tol_factor: float = 1e-3,
) -> ProbeResult:
    """
    Halve the candidate radius from r_start until (b) every one of n_probe
    uniform tangent-disk draws projects onto M along the normal space at x0
    and (a) no pair of sampled points in the ball forms a near-vertical chord.

    Before the random draws, (b) is checked on the rim of the disk: along
    +-U_tan and at n_probe // BOUNDARY_SHARE random rim points.

    angle_tol defaults to angle_tol_factor times the candidate radius.
    """
    if not r_start > 0:
        raise DomainError(f"r_start must be positive, got {r_start}")
    x0 = np.asarray(x0, dtype=float)
    frame0 = tangent_frame(M, x0)
    normal_projector = frame0.normal_projector()
    radius = float(r_start)
    shrinks = 0
    rejected = []

    while radius >= PROBE_FLOOR * r_start:
        tol = angle_tol if angle_tol is not None else angle_tol_factor * radius

        # (b) projections from the rim, then from the whole tangent disk
        rim = disk_boundary(frame0.d, radius, n_probe // BOUNDARY_SHARE, rng)
        failed_at = _first_failed_projection(M, x0, frame0, rim, newton)
        reason = 'boundary-projection'
        if failed_at is None:
            interior = uniform_disk(n_probe, frame0.d, radius, rng)
            failed_at = _first_failed_projection(M, x0, frame0, interior, newton)
            reason = 'projection'
        if failed_at is not None:
            logger.info(f"Probe: {reason} failed at r={radius:.4g} (draw {failed_at}), shrinking")
            rejected.append({'radius': radius, 'reason': reason, 'draw': failed_at})
            radius /= 2
            shrinks += 1
            continue

        # (a) single-valuedness over the tangent plane
        params = ProposalParams(min(step_scale, radius), lambda x: 1.0, newton)
        chain = run_chain(M.restricted_to_ball(x0, radius), params, x0, pair_steps, 1, rng)
        points = np.vstack([x0, chain.samples])
        i = rng.integers(0, points.shape[0], n_probe)
        j = rng.integers(0, points.shape[0], n_probe)
        chords = points[i] - points[j]
        normal = chords @ normal_projector
        tangential = np.linalg.norm(chords - normal, axis=1)
        vertical = (tangential < tol) & (np.linalg.norm(normal, axis=1) >= VERTICAL_CHORD_FRACTION * radius)
        if vertical.any():
            logger.info(f"Probe: {int(vertical.sum())} vertical chords at r={radius:.4g}, shrinking")
            rejected.append({'radius': radius, 'reason': 'vertical-chord', 'pairs': int(vertical.sum())})
            radius /= 2
            shrinks += 1
            continue

        negative = 0
        for y in chain.samples[:: max(1, pair_steps // 500)]:
            if cross_jacobian(frame0, tangent_frame(M, y)) <= 0:
                negative += 1
        checked = len(chain.samples[:: max(1, pair_steps // 500)])
        logger.info(f"Probe accepted r_k={radius:.6g} after {shrinks} shrinks")
        return ProbeResult(radius=radius, shrinks=shrinks,
                           negative_det_fraction=negative / checked if checked else 0.0,
                           rejected=rejected)

    raise NoValidRadiusError(f"no valid innermost radius above {PROBE_FLOOR * r_start:.3g}")


def make_schedule(x0, r0: float, rk: float, k: int, d: int) -> BallSchedule:
    """Radii r_i = r_0 nu^(-i/d) with nu = (r_0 / r_k)^(d/k); endpoints are exact."""
    if not r0 > rk > 0:
        raise ScheduleError(f"radii must satisfy r_0 > r_k > 0, got r_0={r0}, r_k={rk}")
    if k < 1:
        raise ScheduleError(f"k must be >= 1, got {k}")
    if d < 1:
        raise ScheduleError(f"intrinsic dimension must be >= 1, got {d}")
    nu = (r0 / rk) ** (d / k)
    radii = [r0] + [r0 * nu ** (-i / d) for i in range(1, k)] + [rk]
    return BallSchedule(center=np.array(x0, dtype=float), radii=tuple(float(r) for r in radii),
                        nu=float(nu), k=k, d=d)


def estimate_ratio(
    M: ConstraintManifold,
    f: Callable[[np.ndarray], float],
    x0,
    r_outer: float,
    r_inner: float,
    n_i: int,
    params: ProposalParams,
    rng: np.random.Generator,
    x_start=None,
    burn_in_fraction: float = 0.01,
    deeper_radii: Sequence[float] = (),
    stage: int = 0,
) -> RatioEstimate:
    """
    R_hat = n_i / N_next from a chain on M with r_outer^2 - |x - x0|^2 > 0.

    The chain runs burn_in + n_i steps and counts the last n_i states inside
    r_inner. tau_hat uses the Bernoulli variance p(1 - p) as c0.
    """
    if not r_outer >= r_inner > 0:
        raise ScheduleError(f"stage {stage}: need r_outer >= r_inner > 0")
    x0 = np.asarray(x0, dtype=float)
    ball = M.restricted_to_ball(x0, r_outer)
    stage_params = ProposalParams(params.step_scale, f, params.newton,
                                  params.reverse_match_tol, params.reverse_check)
    burn_in = int(round(burn_in_fraction * n_i))
    start = x0 if x_start is None else np.asarray(x_start, dtype=float)
    holder = {'x': None}

    def remember_inner(j, state, diag):
        if j >= burn_in and np.linalg.norm(state.x - x0) < r_inner:
            holder['x'] = state.x

    def distance(x):
        return float(np.linalg.norm(x - x0))

    result = run_chain(ball, stage_params, start, burn_in + n_i, burn_in + n_i + 1, rng,
                       observables={'distance': distance}, observer=remember_inner)
    distances = result.series['distance'][burn_in:]
    inside = (distances < r_inner).astype(float)
    N_next = int(inside.sum())
    deeper = [int((distances < r).sum()) for r in deeper_radii]
    diagnostics = {
        'stage': stage,
        'r_outer': r_outer,
        'r_inner': r_inner,
        'n_i': n_i,
        'N_next': N_next,
        'acceptance': result.acceptance,
    }
    if N_next == 0:
        raise StageFailureError(
            f"stage {stage}: no samples inside r={r_inner:.4g} out of {n_i}; increase n or lower nu",
            stage=stage,
            diagnostics=diagnostics,
        )

    p_hat = N_next / n_i
    if N_next == n_i:
        tau_hat, window = 1.0, 0
    else:
        act = integrated_act(inside, static_c0=p_hat * (1.0 - p_hat))
        tau_hat, window = act.tau, act.window

    estimate = RatioEstimate(
        stage=stage,
        r_outer=float(r_outer),
        r_inner=float(r_inner),
        R_hat=n_i / N_next,
        p_hat=p_hat,
        tau_hat=tau_hat,
        n_i=n_i,
        N_next=N_next,
        window=window,
        acceptance=result.acceptance,
        outcome_rates=result.rates(),
        deeper_counts=deeper,
        burn_in=burn_in,
        step_scale=stage_params.step_scale,
        last_inner_point=holder['x'],
    )
    logger.info(
        f"Stage {stage}: r {r_outer:.4g} -> {r_inner:.4g}, R_hat={estimate.R_hat:.5g}, "
        f"tau={tau_hat:.3g}, acceptance={result.acceptance:.3f}"
    )
    return estimate


def estimate_innermost(
    M: ConstraintManifold,
    f: Callable[[np.ndarray], float],
    x0,
    r_k: float,
    n_k: int,
    rng: np.random.Generator,
    newton: NewtonParams = NewtonParams(),
) -> InnermostEstimate:
    """
    Z_k from n_k uniform draws in the tangent disk at x0, each projected onto
    M along the normal space at x0 and weighted by 1_B(y) f(y) / |det(U_x0^t U_y)|.
    Any projection failure aborts the estimate.
    """
    x0 = np.asarray(x0, dtype=float)
    frame0 = tangent_frame(M, x0)
    volume = ball_volume(frame0.d, r_k)
    G = np.zeros(n_k)

    for i, u in enumerate(uniform_disk(n_k, frame0.d, r_k, rng)):
        result = project(M, x0 + frame0.U_tan @ u, frame0.U_norm, newton)
        if not result.success:
            raise InnermostProjectionError(
                f"projection from the tangent disk failed at draw {i} (r_k={r_k:.4g})"
            )
        y = result.point
        if np.linalg.norm(y - x0) >= r_k or not M.satisfies_inequalities(y):
            continue
        try:
            J = abs(cross_jacobian(frame0, tangent_frame(M, y)))
        except DegenerateConstraintError as exc:
            raise InnermostProjectionError(f"singular point reached at draw {i}: {exc}") from exc
        if J == 0:
            raise InnermostProjectionError(f"tangent plane at draw {i} is orthogonal to T_x0")
        G[i] = f(y) / J

    mean = float(G.mean())
    if mean <= 0:
        raise InnermostProjectionError(f"no projected point landed inside B(r_k={r_k:.4g})")
    rho_k = float(np.sqrt(((G - mean) ** 2).sum()) / (n_k * mean))
    return InnermostEstimate(
        Z_k_hat=volume * mean,
        rho_k=rho_k,
        n_k=n_k,
        disk_volume=volume,
        inside_fraction=float((G > 0).mean()),
    )


def _run_stages(M, f, schedule: BallSchedule, config: IntegrationConfig, params: ProposalParams,
                streams: List[np.random.Generator]) -> List[RatioEstimate]:
    x0 = schedule.center
    radii = schedule.radii
    n_i = config.stage_length

    def stage_task(i, x_start):
        stage_params = params
        if config.stage_step_fraction is not None:
            stage_params = replace(params, step_scale=min(params.step_scale, config.stage_step_fraction * radii[i]))
        return estimate_ratio(
            M, f, x0, radii[i], radii[i + 1], n_i, stage_params, streams[i],
            x_start=x_start,
            burn_in_fraction=config.burn_in_fraction,
            deeper_radii=radii[i + 2:],
            stage=i,
        )

    if config.parallel:
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            futures = [executor.submit(stage_task, i, None) for i in range(schedule.k)]
            return [future.result() for future in futures]

    stages = []
    x_start = None
    for i in range(schedule.k):
        estimate = stage_task(i, x_start)
        stages.append(estimate)
        x_start = estimate.last_inner_point
    return stages


def integrate(
    M: ConstraintManifold,
    f: Callable[[np.ndarray], float],
    config: IntegrationConfig,
    rng: np.random.Generator,
    x_init=None,
) -> IntegralEstimate:
    """
    Initial run, center, outer radius, innermost-radius probe, schedule,
    k ratio stages and the innermost estimate, combined into Z_hat and sigma_r.
    Explicit center / r_outer / r_inner in the config skip the matching step.
    """
    started = time.perf_counter()
    d = M.intrinsic_dim
    if d < 1:
        raise DomainError(f"{M.name} has intrinsic dimension {d} < 1")
    params = ProposalParams(config.step_scale, f, config.newton)
    streams = rng.spawn(config.k + 3)

    samples = None
    if config.center is None or config.r_outer is None:
        if x_init is None:
            raise InvalidStateError("integrate needs x_init when the center or r_0 is not given")
        initial = run_chain(M, params, x_init, config.n_initial, config.initial_stride, streams[0])
        samples = np.vstack([np.asarray(x_init, dtype=float), initial.samples])
        logger.info(f"Initial run on {M.name}: {config.n_initial} steps, acceptance {initial.acceptance:.3f}")

    x0 = np.array(config.center, dtype=float) if config.center is not None else choose_center(samples, M)
    if not M.is_feasible(x0, config.newton.tol):
        raise InvalidStateError(f"center {x0.tolist()} is not a feasible point of {M.name}")
    r0 = float(config.r_outer) if config.r_outer is not None else outer_radius(samples, x0)
    if not r0 > 0:
        raise ScheduleError("outer radius is zero; the initial run never moved")

    probe = None
    if config.r_inner is not None:
        rk = float(config.r_inner)
    else:
        probe = probe_min_radius(
            M, x0, config.probe_start_fraction * r0, config.n_probe, None, streams[1],
            step_scale=config.step_scale, newton=config.newton, pair_steps=config.pair_steps,
            angle_tol_factor=config.angle_tol_factor,
        )
        rk = probe.radius

    schedule = make_schedule(x0, r0, rk, config.k, d)
    logger.info(f"Schedule for {M.name}: radii={[round(r, 6) for r in schedule.radii]}, nu={schedule.nu:.4g}")

    stages = _run_stages(M, f, schedule, config, params, streams[2:2 + config.k])
    n_k = config.n_innermost or config.stage_length
    innermost = estimate_innermost(M, f, x0, rk, n_k, streams[2 + config.k], config.newton)

    Z_hat = innermost.Z_k_hat * math.prod(stage.R_hat for stage in stages)
    log_Z_hat = math.log(innermost.Z_k_hat) + sum(math.log(stage.R_hat) for stage in stages)
    sigma_r = combine_error(innermost.rho_k, [(s.p_hat, s.tau_hat, s.n_i) for s in stages])
    wall_time = time.perf_counter() - started
    logger.info(f"Integral over {M.name}: Z_hat={Z_hat:.6g} (sigma_r={sigma_r:.3g}) in {wall_time:.1f}s")

    return IntegralEstimate(
        Z_hat=Z_hat,
        sigma_r=sigma_r,
        Z_k_hat=innermost.Z_k_hat,
        rho_k=innermost.rho_k,
        stages=stages,
        schedule=schedule,
        log_Z_hat=log_Z_hat,
        innermost=innermost,
        probe=probe,
        wall_time=wall_time,
    )
