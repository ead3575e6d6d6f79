"""
Built-in constraint manifolds with analytic references.

Torus, cone, SO(n), circle, sphere, flat disk and sticky-sphere clusters
(chains, loops or any contact graph read from an edge-list file). Each
builder returns an immutable ConstraintManifold; `build` wraps one of them
together with its density, a feasible start point, observables and the
default step scale used by the management commands.

Usage:
    entry = build('torus', {'R': 1.0, 'r': 0.5})
    result = run_chain(entry.manifold, ProposalParams(entry.step_scale, entry.density), entry.x_start, ...)
"""

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

import numpy as np
from scipy.special import gamma, gammaln
from scipy.stats import vonmises

from manifolds.exceptions import ConfigError, DomainError
from manifolds.utils.core import ConstraintManifold, find_feasible_point
from manifolds.utils.sampler import uniform_density

logger = logging.getLogger(__name__)

# eigenvalues of R^t R at or below this fraction of the largest count as zero
RIGIDITY_THRESHOLD = 1e-10


# ========================================
# TORUS
# ========================================

@dataclass(frozen=True)
class TorusSpec:
    R: float = 1.0
    r: float = 0.5

    def __post_init__(self):
        if not self.R > self.r > 0:
            raise DomainError(f"torus needs R > r > 0, got R={self.R}, r={self.r}")


def torus_manifold(spec: TorusSpec = TorusSpec()) -> ConstraintManifold:
    R, r = spec.R, spec.r

    def q(x):
        rho = math.hypot(x[0], x[1])
        return np.array([(R - rho) ** 2 + x[2] ** 2 - r ** 2])

    def grad_q(x):
        rho = math.hypot(x[0], x[1])
        c = -2.0 * (R - rho) / rho
        return np.array([[c * x[0]], [c * x[1]], [2.0 * x[2]]])

    return ConstraintManifold(ambient_dim=3, equality_count=1, q=q, grad_q=grad_q, name='torus')


def torus_start(spec: TorusSpec = TorusSpec()) -> np.ndarray:
    return np.array([spec.R + spec.r, 0.0, 0.0])


def torus_angles(x: np.ndarray, spec: TorusSpec = TorusSpec()) -> Tuple[float, float]:
    """(theta, phi) with x = ((R + r cos phi) cos theta, (R + r cos phi) sin theta, r sin phi)."""
    theta = math.atan2(x[1], x[0])
    phi = math.atan2(x[2], math.hypot(x[0], x[1]) - spec.R)
    return theta, phi


def torus_phi_density(phi, spec: TorusSpec = TorusSpec()):
    return (1.0 + (spec.r / spec.R) * np.cos(phi)) / (2 * math.pi)


def torus_phi_cdf(phi, spec: TorusSpec = TorusSpec()):
    """Distribution function of phi on [-pi, pi]."""
    phi = np.asarray(phi, dtype=float)
    return (phi + math.pi + (spec.r / spec.R) * np.sin(phi)) / (2 * math.pi)


def torus_area(spec: TorusSpec = TorusSpec()) -> float:
    return 4 * math.pi ** 2 * spec.r * spec.R


# ========================================
# CONE
# ========================================

CONE_COORDS = ('x', 'y', 'z')


def cone_manifold() -> ConstraintManifold:
    """z = sqrt(x^2 + y^2) with x^2 + y^2 < 1 and z > 0."""

    def q(x):
        return np.array([x[2] - math.hypot(x[0], x[1])])

    def grad_q(x):
        rho = math.hypot(x[0], x[1])
        return np.array([[-x[0] / rho], [-x[1] / rho], [1.0]])

    def h(x):
        return np.array([1.0 - x[0] ** 2 - x[1] ** 2, x[2]])

    return ConstraintManifold(ambient_dim=3, equality_count=1, q=q, grad_q=grad_q, h=h,
                              inequality_count=2, name='cone')


def cone_start() -> np.ndarray:
    return np.array([0.5, 0.0, 0.5])


def _cone_support(coord: str):
    if coord not in CONE_COORDS:
        raise DomainError(f"unknown cone coordinate {coord!r}")
    return (0.0, 1.0) if coord == 'z' else (-1.0, 1.0)


def cone_marginals(coord: str, value: float) -> float:
    lo, hi = _cone_support(coord)
    if not lo <= value <= hi:
        raise DomainError(f"{coord}={value} outside the support [{lo}, {hi}]")
    if coord == 'z':
        return 2.0 * value
    return (2.0 / math.pi) * math.sqrt(1.0 - value * value)


def cone_marginal_cdf(coord: str, value):
    lo, hi = _cone_support(coord)
    v = np.clip(np.asarray(value, dtype=float), lo, hi)
    if coord == 'z':
        return v * v
    return 0.5 + (v * np.sqrt(1.0 - v * v) + np.arcsin(v)) / math.pi


# ========================================
# SO(n)
# ========================================

def son_manifold(n: int) -> ConstraintManifold:
    """
    SO(n) as n x n matrices flattened row-major: rows orthonormal, det > 0.

    Constraint (k, l) for k <= l is X_k . X_l - delta_kl, ordered as
    np.triu_indices(n).
    """
    if n < 2:
        raise DomainError(f"SO(n) needs n >= 2, got {n}")
    rows_k, rows_l = np.triu_indices(n)
    m = rows_k.shape[0]
    cols = np.arange(m)
    target = (rows_k == rows_l).astype(float)

    def q(x):
        X = x.reshape(n, n)
        return np.einsum('ij,ij->i', X[rows_k], X[rows_l]) - target

    def grad_q(x):
        X = x.reshape(n, n)
        G = np.zeros((n, n, m))
        G[rows_k, :, cols] = X[rows_l]
        G[rows_l, :, cols] += X[rows_k]
        return G.reshape(n * n, m)

    def h(x):
        return np.array([np.linalg.det(x.reshape(n, n))])

    return ConstraintManifold(ambient_dim=n * n, equality_count=m, q=q, grad_q=grad_q, h=h,
                              inequality_count=1, name=f"SO({n})")


def son_start(n: int) -> np.ndarray:
    return np.eye(n).ravel()


def son_trace(x: np.ndarray) -> float:
    n = int(round(math.sqrt(x.shape[0])))
    return float(np.trace(x.reshape(n, n)))


def son_integration_step(n: int) -> float:
    """Step scale for integrating over SO(n): tangent moves of length about one, min(1, d^(-1/2))."""
    if n < 2:
        raise DomainError(f"SO(n) needs n >= 2, got {n}")
    return min(1.0, 1.0 / math.sqrt(n * (n - 1) / 2))


def sphere_volume(i: int) -> float:
    """Surface area of the unit sphere S^i in R^(i+1)."""
    return 2 * math.pi ** ((i + 1) / 2) / gamma((i + 1) / 2)


def son_volume_exact(n: int) -> float:
    if n < 2:
        raise DomainError(f"SO(n) needs n >= 2, got {n}")
    volume = 2 ** (n * (n - 1) / 4)
    for i in range(1, n):
        volume *= sphere_volume(i)
    return float(volume)


# ========================================
# CIRCLE, SPHERE, FLAT DISK
# ========================================

def sphere_manifold(dim: int = 2) -> ConstraintManifold:
    """Unit sphere S^dim in R^(dim+1); dim = 1 is the unit circle."""
    if dim < 1:
        raise DomainError(f"sphere dimension must be >= 1, got {dim}")

    def q(x):
        return np.array([x @ x - 1.0])

    def grad_q(x):
        return (2.0 * x).reshape(-1, 1)

    name = 'circle' if dim == 1 else f"S^{dim}"
    return ConstraintManifold(ambient_dim=dim + 1, equality_count=1, q=q, grad_q=grad_q, name=name)


def circle_manifold() -> ConstraintManifold:
    return sphere_manifold(1)


def circle_angle(x: np.ndarray) -> float:
    return math.atan2(x[1], x[0])


def exp_cos_density(x: np.ndarray) -> float:
    """exp(cos theta) on the unit circle."""
    return math.exp(x[0] / math.hypot(x[0], x[1]))


def exp_cos_angle_cdf(theta):
    """CDF on [-pi, pi] of the angle under exp(cos theta): a von Mises law with unit concentration."""
    return vonmises.cdf(np.asarray(theta, dtype=float), 1.0)


def hyperplane_manifold(dim: int) -> ConstraintManifold:
    """The hyperplane {x_last = 0} in R^(dim+1), without inequalities."""
    if dim < 1:
        raise DomainError(f"hyperplane dimension must be >= 1, got {dim}")
    normal = np.zeros((dim + 1, 1))
    normal[-1, 0] = 1.0

    def q(x):
        return np.array([x[-1]])

    def grad_q(x):
        return normal

    return ConstraintManifold(ambient_dim=dim + 1, equality_count=1, q=q, grad_q=grad_q,
                              name=f"hyperplane({dim})")


def flat_disk_manifold(dim: int) -> ConstraintManifold:
    """Unit dim-ball lying in the hyperplane {x_last = 0} of R^(dim+1)."""
    plane = hyperplane_manifold(dim)

    def h(x):
        return np.array([1.0 - x @ x])

    return ConstraintManifold(ambient_dim=plane.ambient_dim, equality_count=1, q=plane.q,
                              grad_q=plane.grad_q, h=h, inequality_count=1, name=f"disk({dim})")


def ball_volume(dim: int, radius: float = 1.0) -> float:
    return math.exp((dim / 2) * math.log(math.pi) + dim * math.log(radius) - gammaln(dim / 2 + 1))


# ========================================
# STICKY-SPHERE CLUSTERS
# ========================================

@dataclass(frozen=True)
class ClusterSpec:
    """
    N unit spheres with contact pairs (0-based, stored with i < j).

    Contacts are held at distance exactly 1, every other pair stays apart,
    and the center of mass is pinned at the origin.
    """

    n_spheres: int
    contacts: Tuple[Tuple[int, int], ...]
    kind: str = 'custom'

    def __post_init__(self):
        if self.n_spheres < 2:
            raise DomainError(f"a cluster needs at least 2 spheres, got {self.n_spheres}")
        normalized = []
        for i, j in self.contacts:
            if i == j:
                raise DomainError(f"self contact ({i}, {j})")
            if not (0 <= i < self.n_spheres and 0 <= j < self.n_spheres):
                raise DomainError(f"contact ({i}, {j}) out of range for N={self.n_spheres}")
            normalized.append((min(i, j), max(i, j)))
        if len(set(normalized)) != len(normalized):
            raise DomainError("duplicate contact pairs")
        object.__setattr__(self, 'contacts', tuple(normalized))
        if self.intrinsic_dim < 1:
            raise DomainError(f"cluster has dimension {self.intrinsic_dim} < 1")

    @property
    def ambient_dim(self) -> int:
        return 3 * self.n_spheres

    @property
    def contact_count(self) -> int:
        return len(self.contacts)

    @property
    def intrinsic_dim(self) -> int:
        return 3 * self.n_spheres - self.contact_count - 3

    def non_contacts(self) -> Tuple[Tuple[int, int], ...]:
        touching = set(self.contacts)
        return tuple(pair for pair in combinations(range(self.n_spheres), 2) if pair not in touching)


def chain_spec(N: int) -> ClusterSpec:
    return ClusterSpec(N, tuple((i, i + 1) for i in range(N - 1)), kind='chain')


def loop_spec(N: int) -> ClusterSpec:
    if N < 3:
        raise DomainError(f"a loop needs at least 3 spheres, got {N}")
    return ClusterSpec(N, tuple((i, i + 1) for i in range(N - 1)) + ((0, N - 1),), kind='loop')


def read_cluster_spec(path) -> ClusterSpec:
    """Edge-list file: first line N, then one 1-based contact 'i j' per line."""
    path = Path(path)
    try:
        lines = [line.split('#')[0].strip() for line in path.read_text().splitlines()]
    except OSError as exc:
        raise ConfigError(f"cannot read edge list {path}: {exc}") from exc
    lines = [line for line in lines if line]
    if not lines:
        raise ConfigError(f"edge list {path} is empty")
    try:
        N = int(lines[0])
        contacts = []
        for line in lines[1:]:
            i, j = (int(token) for token in line.split())
            contacts.append((i - 1, j - 1))
        return ClusterSpec(N, tuple(contacts))
    except (ValueError, DomainError) as exc:
        raise ConfigError(f"invalid edge list {path}: {exc}") from exc


def cluster_manifold(spec: ClusterSpec) -> ConstraintManifold:
    """
    Equalities: |x_i - x_j|^2 - 1 per contact, then the three center-of-mass
    components. Inequalities: |x_i - x_j|^2 - 1 > 0 for every other pair.
    """
    N = spec.n_spheres
    m = spec.contact_count
    ci = np.array([i for i, _ in spec.contacts], dtype=int)
    cj = np.array([j for _, j in spec.contacts], dtype=int)
    pairs = spec.non_contacts()
    ni = np.array([i for i, _ in pairs], dtype=int)
    nj = np.array([j for _, j in pairs], dtype=int)
    k = np.arange(m)

    def q(x):
        P = x.reshape(N, 3)
        diff = P[ci] - P[cj]
        return np.concatenate([np.einsum('ij,ij->i', diff, diff) - 1.0, P.sum(axis=0)])

    def grad_q(x):
        P = x.reshape(N, 3)
        diff = P[ci] - P[cj]
        G = np.zeros((N, 3, m + 3))
        G[ci, :, k] = 2.0 * diff
        G[cj, :, k] = -2.0 * diff
        for axis in range(3):
            G[:, axis, m + axis] = 1.0
        return G.reshape(3 * N, m + 3)

    h = None
    if pairs:
        def h(x):
            P = x.reshape(N, 3)
            diff = P[ni] - P[nj]
            return np.einsum('ij,ij->i', diff, diff) - 1.0

    return ConstraintManifold(ambient_dim=3 * N, equality_count=m + 3, q=q, grad_q=grad_q, h=h,
                              inequality_count=len(pairs), name=f"{spec.kind}-{N}")


def cluster_start(spec: ClusterSpec, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Straight line for chains, regular planar N-gon of side 1 for loops;
    other contact graphs are solved for from a random spread-out guess.
    """
    N = spec.n_spheres
    if spec.kind == 'chain':
        P = np.zeros((N, 3))
        P[:, 0] = np.arange(N) - (N - 1) / 2
        return P.ravel()
    if spec.kind == 'loop':
        radius = 1.0 / (2 * math.sin(math.pi / N))
        angles = 2 * math.pi * np.arange(N) / N
        P = np.column_stack([radius * np.cos(angles), radius * np.sin(angles), np.zeros(N)])
        return P.ravel()
    rng = rng if rng is not None else np.random.default_rng()
    guess = rng.standard_normal(3 * N) * 0.8
    guess = (guess.reshape(N, 3) - guess.reshape(N, 3).mean(axis=0)).ravel()
    return find_feasible_point(cluster_manifold(spec), guess, rng=rng, jitter=0.5, restarts=50)


def rigidity_matrix(x: np.ndarray, spec: ClusterSpec) -> np.ndarray:
    """Half the Jacobian of the contact constraints, one row per contact."""
    N, m = spec.n_spheres, spec.contact_count
    P = np.asarray(x, dtype=float).reshape(N, 3)
    ci = np.array([i for i, _ in spec.contacts], dtype=int)
    cj = np.array([j for _, j in spec.contacts], dtype=int)
    diff = P[ci] - P[cj]
    R = np.zeros((m, N, 3))
    R[np.arange(m), ci, :] = diff
    R[np.arange(m), cj, :] = -diff
    return R.reshape(m, 3 * N)


def rigidity_weight(x: np.ndarray, spec: ClusterSpec) -> float:
    """Product of lambda^(-1/2) over the non-zero eigenvalues of R^t R."""
    R = rigidity_matrix(x, spec)
    eigenvalues = np.linalg.eigvalsh(R.T @ R)
    nonzero = eigenvalues[eigenvalues > RIGIDITY_THRESHOLD * eigenvalues.max()]
    if nonzero.shape[0] < spec.contact_count:
        logger.warning(
            f"rigidity matrix has {nonzero.shape[0]} non-zero eigenvalues, expected {spec.contact_count}"
        )
    return float(np.exp(-0.5 * np.log(nonzero).sum()))


def rigidity_density(spec: ClusterSpec) -> Callable[[np.ndarray], float]:
    def density(x):
        return rigidity_weight(x, spec)
    return density


@dataclass(frozen=True)
class ChainLoopStats:
    ratio_single: float
    ratio_indist: float
    kappa_hat: Optional[float] = None


def chain_loop_stats(N: int, z_C: float, z_L: float, loop_count: Optional[float] = None,
                     chain_count: Optional[float] = None) -> ChainLoopStats:
    """
    Chain versus loop ratios for N indistinguishable spheres, using
    n_C = N!/2 and n_L = (N-1)!/2 distinct copies.
    """
    if N < 3 or not (z_C > 0 and z_L > 0):
        raise DomainError("chain_loop_stats needs N >= 3 and positive partition functions")
    n_C = math.factorial(N) / 2
    n_L = math.factorial(N - 1) / 2
    ratio_single = z_C / z_L
    ratio_indist = (n_C * z_C) / (n_L * z_L)

    kappa_hat = None
    if loop_count is not None and chain_count is not None:
        if chain_count == 0:
            raise DomainError("chain_count must be non-zero to estimate kappa")
        if loop_count < 0 or chain_count < 0:
            raise DomainError("cluster counts must be non-negative")
        kappa_hat = (loop_count / chain_count) * ratio_indist
    return ChainLoopStats(ratio_single=ratio_single, ratio_indist=ratio_indist, kappa_hat=kappa_hat)


# (V, z) for chains and loops of N spheres, from runs of 1e8 points with k = 4
CHAIN_LOOP_REFERENCE = {
    ('chain', 4): (3.51e2, 1.32e2),
    ('loop', 4): (8.27e1, 2.18e1),
    ('chain', 5): (3.03e3, 8.31e2),
    ('loop', 5): (3.19e2, 6.19e1),
    ('chain', 6): (2.70e4, 5.33e3),
    ('loop', 6): (1.66e3, 2.32e2),
    ('chain', 7): (2.42e5, 3.84e4),
    ('loop', 7): (1.01e4, 1.09e3),
    ('chain', 8): (2.19e6, 2.77e5),
    ('loop', 8): (6.76e4, 5.65e3),
    ('chain', 9): (2.12e7, 1.73e6),
    ('loop', 9): (4.94e5, 2.87e4),
    ('chain', 10): (2.07e8, 1.43e7),
    ('loop', 10): (3.81e6, 1.71e5),
}


# ========================================
# REGISTRY
# ========================================

@dataclass
class ZooEntry:
    manifold: ConstraintManifold
    density: Callable[[np.ndarray], float]
    x_start: np.ndarray
    step_scale: float
    observables: Dict[str, Callable[[np.ndarray], float]] = field(default_factory=dict)
    # observable name -> (lo, hi) range for histogram output
    histograms: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    # exact integral of the density over the manifold when known
    reference: Optional[float] = None
    cluster: Optional[ClusterSpec] = None


MANIFOLD_NAMES = ('torus', 'cone', 'son', 'circle', 'sphere', 'flat-disk', 'chain', 'loop', 'cluster')
DENSITY_NAMES = ('uniform', 'rigidity', 'exp-cos')

DEFAULT_STEP_SCALES = {
    'torus': 0.5,
    'cone': 0.9,
    'son': 0.28,
    'circle': 0.5,
    'sphere': 0.5,
    'flat-disk': 0.5,
    'chain': 0.3,
    'loop': 0.3,
    'cluster': 0.3,
}


def build(name: str, params: Optional[Mapping[str, Any]] = None,
          rng: Optional[np.random.Generator] = None) -> ZooEntry:
    """
    Build a named manifold. Recognized params: R, r (torus), n (son),
    dim (sphere, flat-disk), N (chain, loop), edges (cluster edge-list path)
    and density ('uniform', 'rigidity' for clusters, 'exp-cos' for circle).
    """
    params = dict(params or {})
    density_name = params.get('density', 'uniform')
    if name not in MANIFOLD_NAMES:
        raise ConfigError(f"unknown manifold {name!r}; expected one of {', '.join(MANIFOLD_NAMES)}")
    if density_name not in DENSITY_NAMES:
        raise ConfigError(f"unknown density {density_name!r}; expected one of {', '.join(DENSITY_NAMES)}")

    step = DEFAULT_STEP_SCALES[name]
    try:
        if name == 'torus':
            spec = TorusSpec(float(params.get('R', 1.0)), float(params.get('r', 0.5)))

            def theta(x):
                return torus_angles(x, spec)[0]

            def phi(x):
                return torus_angles(x, spec)[1]

            entry = ZooEntry(
                manifold=torus_manifold(spec), density=uniform_density, x_start=torus_start(spec),
                step_scale=step,
                observables={'theta': theta, 'phi': phi,
                             'cos_theta': lambda x: math.cos(theta(x)),
                             'sin_theta': lambda x: math.sin(theta(x)),
                             'cos_phi': lambda x: math.cos(phi(x))},
                histograms={'theta': (-math.pi, math.pi), 'phi': (-math.pi, math.pi)},
                reference=torus_area(spec),
            )
        elif name == 'cone':
            entry = ZooEntry(
                manifold=cone_manifold(), density=uniform_density, x_start=cone_start(), step_scale=step,
                observables={'x': lambda x: float(x[0]), 'y': lambda x: float(x[1]), 'z': lambda x: float(x[2])},
                histograms={'x': (-1.0, 1.0), 'y': (-1.0, 1.0), 'z': (0.0, 1.0)},
                reference=math.pi * math.sqrt(2.0),
            )
        elif name == 'son':
            n = int(params.get('n', 3))
            entry = ZooEntry(
                manifold=son_manifold(n), density=uniform_density, x_start=son_start(n), step_scale=step,
                observables={'trace': son_trace}, histograms={'trace': (-4.0, 4.0)},
                reference=son_volume_exact(n),
            )
        elif name in ('circle', 'sphere'):
            dim = 1 if name == 'circle' else int(params.get('dim', 2))
            M = sphere_manifold(dim)
            start = np.zeros(dim + 1)
            start[0] = 1.0
            density = uniform_density
            reference = sphere_volume(dim)
            if density_name == 'exp-cos' and dim == 1:
                density = exp_cos_density
                reference = None
            observables = {'last': lambda x: float(x[-1])}
            histograms = {'last': (-1.0, 1.0)}
            if dim == 1:
                observables = {'angle': circle_angle, 'cos': lambda x: float(x[0]), 'sin': lambda x: float(x[1])}
                histograms = {'angle': (-math.pi, math.pi)}
            entry = ZooEntry(manifold=M, density=density, x_start=start, step_scale=step,
                             observables=observables, histograms=histograms, reference=reference)
        elif name == 'flat-disk':
            dim = int(params.get('dim', 2))
            entry = ZooEntry(
                manifold=flat_disk_manifold(dim), density=uniform_density, x_start=np.zeros(dim + 1),
                step_scale=step, observables={'radius': lambda x: float(np.linalg.norm(x))},
                histograms={'radius': (0.0, 1.0)}, reference=ball_volume(dim),
            )
        else:
            if name == 'cluster':
                if 'edges' not in params:
                    raise ConfigError("manifold 'cluster' needs manifold.edges")
                spec = read_cluster_spec(params['edges'])
            else:
                N = int(params.get('N', 4))
                spec = chain_spec(N) if name == 'chain' else loop_spec(N)
            weight = rigidity_density(spec)
            entry = ZooEntry(
                manifold=cluster_manifold(spec),
                density=weight if density_name == 'rigidity' else uniform_density,
                x_start=cluster_start(spec, rng), step_scale=step,
                observables={'rigidity': weight}, histograms={'rigidity': (0.0, 1.0)},
                cluster=spec,
            )
            reference = CHAIN_LOOP_REFERENCE.get((spec.kind, spec.n_spheres))
            if reference is not None:
                entry.reference = reference[1] if density_name == 'rigidity' else reference[0]
    except DomainError as exc:
        raise ConfigError(f"invalid parameters for manifold {name!r}: {exc}") from exc

    if density_name == 'rigidity' and entry.cluster is None:
        raise ConfigError("the rigidity density is only defined on cluster manifolds")
    if density_name == 'exp-cos' and name != 'circle':
        raise ConfigError("the exp-cos density is only defined on the circle")
    return entry
