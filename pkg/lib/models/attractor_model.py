"""
Attractor model: finite ensembles of fields, Hausdorff semi-distances,
attractor approximation by snapshot sampling, attraction-rate fits and
box-counting dimension estimates.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import linregress

from ..gmnse_integration.dynamics import GmnseParams
from ..gmnse_integration.errors import AttractorError, BlowUpError, FitError, ResolutionMismatchError
from ..gmnse_integration.simple_solver import SimpleGmnseSolver, get_solver
from ..gmnse_integration.spectral_core import SpectralVelocityField, TorusDomain, norms, random_field
from .base_model import GmnseBaseModel
from .estimates_model import AbsorbingRadii, MonitorReport, absorbing_radii, monitor_absorbing

logger = logging.getLogger("gmnse")

NORMS = ("H", "V")
DISTANCE_FLOOR = 10 * np.finfo(float).eps
MIN_BOX_COUNT_MEMBERS = 100
# With f = 0 the absorbing balls shrink to {0}; the default floor is this
# fraction of the largest seed norm squared.
UNFORCED_FLOOR_FRACTION = 1e-4


class EnsembleLabel(str, Enum):
    INITIAL_SET = "initial-set"
    ATTRACTOR_APPROX = "attractor-approx"
    EXP_ATTRACTOR_CANDIDATE = "exp-attractor-candidate"


@dataclass(frozen=True, eq=False)
class EnsembleState:
    """
    Finite, nonempty set of fields on a common domain.

    metadata carries per-member bookkeeping such as snapshot times and the
    index of the initial datum each snapshot came from.
    """

    members: Tuple[SpectralVelocityField, ...]
    label: EnsembleLabel = EnsembleLabel.INITIAL_SET
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise AttractorError("an ensemble needs at least one member")
        domain = members[0].domain
        for i, member in enumerate(members):
            if member.domain != domain:
                raise ResolutionMismatchError(f"member {i} lives on {member.domain}, expected {domain}")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "label", EnsembleLabel(self.label))

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @property
    def domain(self) -> TorusDomain:
        return self.members[0].domain

    def relabel(self, label: EnsembleLabel) -> "EnsembleState":
        return EnsembleState(self.members, label, dict(self.metadata))

    def subset(self, indices: Sequence[int]) -> "EnsembleState":
        metadata = {
            key: [value[i] for i in indices]
            for key, value in self.metadata.items()
            if isinstance(value, list) and len(value) == len(self)
        }
        return EnsembleState(tuple(self.members[i] for i in indices), self.label, metadata)

    def embedding(self, norm: str = "H") -> np.ndarray:
        """
        Real coordinates, one row per member, whose Euclidean distances are
        H (or V) norm distances.
        """
        if norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got '{norm}'")
        domain = self.domain
        keep = domain.nyquist_free
        weight = math.sqrt(domain.volume) * (np.sqrt(domain.k_squared[keep]) if norm == "V" else 1.0)
        rows = []
        for member in self.members:
            values = (member.coeffs[:, keep] * weight).ravel()
            rows.append(np.concatenate([values.real, values.imag]))
        return np.array(rows)


@dataclass(eq=False)
class FitResult:
    """dist_H(S(t)B, E) ~ Q exp(-rate t)"""

    q_factor: float
    rate: float
    goodness: float
    samples: List[Tuple[float, float]]
    converged: bool = False
    accepted: bool = False

    def to_dict(self) -> Dict[str, Any]:
        def plain(x: float) -> Any:
            return None if not math.isfinite(x) else x

        return {
            "q_factor": plain(self.q_factor),
            "rate": "inf" if self.rate == math.inf else plain(self.rate),
            "goodness": plain(self.goodness),
            "converged": self.converged,
            "accepted": self.accepted,
            "n_samples": len(self.samples),
        }


@dataclass(eq=False)
class DimensionEstimate:
    """
    Box counts and fitted slope in a finite projection.

    projection_dim counts real coordinates (real and imaginary parts of one
    velocity component at one wavevector), not complex Fourier modes.
    """

    scales: np.ndarray
    counts: np.ndarray
    slope: float
    projection_dim: int
    intercept: float = 0.0
    fit_range: Tuple[int, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "projection_dim": self.projection_dim,
            "slope": self.slope,
            "intercept": self.intercept,
            "fit_range": list(self.fit_range),
            "scales": [float(s) for s in self.scales],
            "counts": [int(c) for c in self.counts],
        }


def hausdorff_semidistance(a: EnsembleState, b: EnsembleState, norm: str = "H") -> float:
    """max over x in a of min over y in b of |x - y| in the chosen norm"""
    if a.domain != b.domain:
        raise ResolutionMismatchError(f"ensembles live on different domains: {a.domain} vs {b.domain}")
    distances = cdist(a.embedding(norm), b.embedding(norm))
    return float(np.max(np.min(distances, axis=1)))


def evolve_ensemble(
    e: EnsembleState,
    p: GmnseParams,
    t: float,
    scheme: str = "if-euler",
    workers: Optional[int] = None,
    threads: int = 1,
    solver: Optional[SimpleGmnseSolver] = None,
) -> EnsembleState:
    """
    Apply S(t) to every member independently; member order is preserved.

    Raises:
        BlowUpError: naming the offending member
    """
    solver = solver or get_solver(p, scheme, workers)

    def advance_member(index: int, u: SpectralVelocityField) -> SpectralVelocityField:
        try:
            return solver.advance(u, t)
        except BlowUpError as error:
            raise BlowUpError(error.step_index, error.time, member=index) from error

    with ThreadPoolExecutor(max_workers=threads) as pool:
        members = list(pool.map(advance_member, range(len(e)), e.members))
    return EnsembleState(tuple(members), e.label, dict(e.metadata))


def _snapshot_member(
    index: int,
    u0: SpectralVelocityField,
    solver: SimpleGmnseSolver,
    radii: AbsorbingRadii,
    t_transient: float,
    t_sample: float,
    n_snapshots: int,
    slack: float,
    radius_floor: float,
    v_radius_floor: float,
    record_every: int,
) -> Tuple[List[SpectralVelocityField], List[float], float]:
    """Snapshots of one member after its certified transient"""
    dt = solver.params.dt
    try:
        transient = solver.evolve(u0, t_transient, record_every)
    except BlowUpError as error:
        raise BlowUpError(error.step_index, error.time, member=index) from error
    report = monitor_absorbing(transient, radii, slack, radius_floor, v_radius_floor)
    if not report.details["certified_h"]:
        raise AttractorError(
            f"member {index}: absorbing-ball entry not certified within t_transient={t_transient:g}; "
            f"extend t_transient"
        )
    first = solver.steps_for(t_transient)
    last = first + solver.steps_for(t_sample)
    targets = np.unique(np.rint(np.linspace(first, last, n_snapshots)).astype(int))

    u = transient.final
    snapshots, times = [], []
    position = first
    for target in targets:
        for i in range(position + 1, target + 1):
            try:
                u = solver.step(u, step_index=i, time=i * dt)
            except BlowUpError as error:
                raise BlowUpError(error.step_index, error.time, member=index) from error
        position = target
        snapshots.append(u)
        times.append(float(target * dt))
    return snapshots, times, report.details["h_entry_time"]


def unforced_radius_floors(seed_set: EnsembleState) -> Tuple[float, float]:
    """(H floor, V floor) for f = 0, never below DISTANCE_FLOOR"""
    triples = [norms(u) for u in seed_set.members]
    h_max = max(t.h_norm for t in triples) ** 2
    v_max = max(t.v_norm for t in triples) ** 2
    return (
        max(UNFORCED_FLOOR_FRACTION * h_max, DISTANCE_FLOOR),
        max(UNFORCED_FLOOR_FRACTION * v_max, DISTANCE_FLOOR),
    )


def approximate_attractor(
    seed_set: EnsembleState,
    p: GmnseParams,
    t_transient: float,
    t_sample: float,
    n_snapshots: int,
    radii: Optional[AbsorbingRadii] = None,
    scheme: str = "if-euler",
    workers: Optional[int] = None,
    threads: int = 1,
    slack: float = 0.05,
    radius_floor: float = 0.0,
    record_every: int = 1,
) -> EnsembleState:
    """
    Approximate the global attractor by omega-limit sampling.

    Each member is evolved over the transient, which must certify entry into
    the H-absorbing ball, then sampled n_snapshots times evenly over
    [t_transient, t_transient + t_sample].

    With zero forcing and radius_floor 0 the ball floors default to
    UNFORCED_FLOOR_FRACTION times the largest seed |u|^2 (H) and |grad u|^2 (V).
    The floors used are recorded in the metadata.

    Raises:
        AttractorError: the H-ball has zero radius, the sampling window holds
            fewer than n_snapshots distinct steps, or a member's entry is not
            certified within t_transient
    """
    if n_snapshots < 1:
        raise ValueError(f"n_snapshots must be positive, got {n_snapshots}")
    if t_transient < 0 or t_sample < 0:
        raise ValueError("t_transient and t_sample must be nonnegative")
    radii = radii or absorbing_radii(p)
    solver = get_solver(p, scheme, workers)

    available = solver.steps_for(t_sample) + 1
    if available < n_snapshots:
        raise AttractorError(
            f"t_sample={t_sample:g} holds {available} steps at dt={p.dt:g}, fewer than "
            f"n_snapshots={n_snapshots}; extend t_sample or lower n_snapshots"
        )

    h_floor = v_floor = radius_floor
    if radius_floor == 0.0 and p.forcing_norm == 0.0:
        h_floor, v_floor = unforced_radius_floors(seed_set)
    if radii.h_ball_sq(slack, h_floor) <= 0.0:
        raise AttractorError(
            "H-absorbing ball has zero radius and no entry can be certified; set radius_floor > 0"
        )

    def sample(index: int, u0: SpectralVelocityField):
        return _snapshot_member(
            index, u0, solver, radii, t_transient, t_sample, n_snapshots, slack, h_floor, v_floor, record_every
        )

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(sample, range(len(seed_set)), seed_set.members))

    members: List[SpectralVelocityField] = []
    metadata: Dict[str, Any] = {
        "snapshot_times": [], "source_member": [], "entry_times": [],
        "radius_floor": h_floor, "v_radius_floor": v_floor,
    }
    for index, (snapshots, times, entry) in enumerate(results):
        members.extend(snapshots)
        metadata["snapshot_times"].extend(times)
        metadata["source_member"].extend([index] * len(snapshots))
        metadata["entry_times"].append(entry)
    logger.info(
        f"✅ Attractor approximation: {len(members)} snapshots from {len(seed_set)} members, "
        f"latest H entry t={max(metadata['entry_times']):g}"
    )
    return EnsembleState(tuple(members), EnsembleLabel.ATTRACTOR_APPROX, metadata)


def check_v_boundedness(
    ensemble: EnsembleState, radii: AbsorbingRadii, slack: float = 0.05, floor: float = 0.0
) -> MonitorReport:
    """Every member satisfies |u|^2 <= rho_v_sq_formula (1 + slack)"""
    ball = radii.v_ball_sq(slack, floor)
    v_sq = np.array([norms(u).v_norm ** 2 for u in ensemble.members])
    times = np.asarray(ensemble.metadata.get("snapshot_times", np.arange(len(ensemble))), dtype=np.float64)
    return MonitorReport.build(
        "v-boundedness", times, v_sq - ball, np.full_like(v_sq, ball),
        fitted_c=radii.fitted_c, details={"v_ball_sq": ball, "max_v_sq": float(np.max(v_sq))},
    )


def positive_invariance_gap(
    ensemble: EnsembleState,
    p: GmnseParams,
    t: float,
    scheme: str = "if-euler",
    workers: Optional[int] = None,
    threads: int = 1,
) -> float:
    """dist_H(S(t)A, A)"""
    moved = evolve_ensemble(ensemble, p, t, scheme, workers, threads)
    return hausdorff_semidistance(moved, ensemble, "H")


def sampling_convergence(ensemble: EnsembleState) -> Tuple[float, float]:
    """
    (dist_H(A, A_half), dist_H(A_half, A)) with A_half every other member.

    The second value is zero by construction; the first measures how much
    the coarser sampling misses.
    """
    half = ensemble.subset(range(0, len(ensemble), 2))
    return hausdorff_semidistance(ensemble, half, "H"), hausdorff_semidistance(half, ensemble, "H")


def regularity_gap(a: EnsembleState, b: EnsembleState) -> Tuple[float, float]:
    """(dist_H(a, b), lambda1^{-1/2} dist_V(a, b)); the first never exceeds the second"""
    scaled_v = hausdorff_semidistance(a, b, "V") / math.sqrt(a.domain.lambda1)
    return hausdorff_semidistance(a, b, "H"), scaled_v


def fit_attraction_rate(
    b: EnsembleState,
    candidate: EnsembleState,
    p: GmnseParams,
    times: Sequence[float],
    scheme: str = "if-euler",
    workers: Optional[int] = None,
    threads: int = 1,
) -> FitResult:
    """
    Fit d(t) = dist_H(S(t)b, candidate) ~ Q exp(-rate t) by least squares on ln d.

    Samples with d <= 10 eps are dropped. When every sample is below the
    floor the result is the "already converged" sentinel (rate = inf,
    goodness = nan).

    Raises:
        FitError: fewer than 3 usable samples
    """
    times = [float(t) for t in times]
    if not times:
        raise FitError("no sample times given")
    if any(t < 0 for t in times) or any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
        raise ValueError("times must be nonnegative and strictly increasing")
    solver = get_solver(p, scheme, workers)

    samples: List[Tuple[float, float]] = []
    current, elapsed = b, 0.0
    for t in times:
        current = evolve_ensemble(current, p, t - elapsed, threads=threads, solver=solver)
        elapsed = t
        samples.append((t, hausdorff_semidistance(current, candidate, "H")))

    usable = [(t, d) for t, d in samples if d > DISTANCE_FLOOR]
    if not usable:
        logger.info("✅ Rate fit: every distance below the floor, already converged")
        return FitResult(0.0, math.inf, math.nan, samples, converged=True, accepted=True)
    if len(usable) < 3:
        raise FitError(f"rate fit needs at least 3 distances above {DISTANCE_FLOOR:.3g}, got {len(usable)}")
    t_fit = np.array([t for t, _ in usable])
    log_d = np.log([d for _, d in usable])
    fit = linregress(t_fit, log_d)
    rate = float(-fit.slope)
    goodness = float(fit.rvalue ** 2)
    result = FitResult(float(np.exp(fit.intercept)), rate, goodness, samples, accepted=rate > 0)
    logger.info(f"🔍 Rate fit: rate={rate:.6g}, Q={result.q_factor:.6g}, r^2={goodness:.4f}")
    return result


def _canonical_half(domain: TorusDomain) -> np.ndarray:
    """One wavevector of every +k/-k pair: the first nonzero component is positive"""
    n = domain.integer_wavenumbers
    half = np.zeros(domain.shape, dtype=bool)
    undecided = np.ones(domain.shape, dtype=bool)
    for i in range(domain.dimension):
        half |= undecided & (n[i] > 0)
        undecided &= n[i] == 0
    return half & domain.nyquist_free


def projected_coordinates(e: EnsembleState, projection_dim: int) -> np.ndarray:
    """
    Coordinates on the projection_dim leading real Fourier coordinates,
    ranked by mean-square H-energy over the ensemble.

    A real coordinate is the real or imaginary part of one velocity
    component at one wavevector of the +k/-k half, scaled so that squared
    coordinates sum to |u|_2^2. One complex mode spans up to 2d of them.
    """
    if projection_dim < 1:
        raise ValueError(f"projection_dim must be positive, got {projection_dim}")
    domain = e.domain
    half = _canonical_half(domain)
    scale = math.sqrt(2.0 * domain.volume)
    rows = []
    for member in e.members:
        values = member.coeffs[:, half].ravel() * scale
        rows.append(np.concatenate([values.real, values.imag]))
    points = np.array(rows)
    energy = np.mean(points ** 2, axis=0)
    order = np.argsort(-energy, kind="stable")[:projection_dim]
    return points[:, order]


def box_count_points(points: np.ndarray, scales: Sequence[float]) -> np.ndarray:
    """Number of occupied eps-boxes of a grid anchored at the componentwise minimum"""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    shifted = points - np.min(points, axis=0)
    counts = []
    for eps in scales:
        if not eps > 0:
            raise ValueError(f"box sizes must be positive, got {eps}")
        cells = np.floor(shifted / eps).astype(np.int64)
        counts.append(np.unique(cells, axis=0).shape[0])
    return np.array(counts, dtype=np.int64)


def fit_box_counts(
    points: np.ndarray, scales: Optional[Sequence[float]] = None, projection_dim: Optional[int] = None
) -> DimensionEstimate:
    """
    Slope of log N(eps) against log(1/eps) over the scaling range.

    Scales whose counts are 1 or equal to the number of points (every point
    in its own box) are left out of the fit.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n_points, n_dims = points.shape
    dim = n_dims if projection_dim is None else projection_dim
    extent = float(np.max(np.ptp(points, axis=0))) if n_points else 0.0
    if extent == 0.0:
        eps = np.asarray(scales if scales is not None else [1.0], dtype=np.float64)
        return DimensionEstimate(eps, np.ones(eps.size, dtype=np.int64), 0.0, dim)
    if scales is None:
        levels = int(math.ceil(math.log2(n_points))) + 1
        scales = extent * 2.0 ** -np.arange(1, levels + 1)
    scales = np.sort(np.asarray(scales, dtype=np.float64))[::-1]
    counts = box_count_points(points, scales)
    usable = np.flatnonzero((counts > 1) & (counts < n_points))
    if usable.size < 2:
        return DimensionEstimate(scales, counts, 0.0, dim, fit_range=tuple(int(i) for i in usable))
    slope, intercept = np.polyfit(-np.log(scales[usable]), np.log(counts[usable]), 1)
    return DimensionEstimate(
        scales, counts, max(float(slope), 0.0), dim, float(intercept), tuple(int(i) for i in usable)
    )


def box_counting_dimension(
    e: EnsembleState, projection_dim: int, scales: Optional[Sequence[float]] = None
) -> DimensionEstimate:
    """
    Box-counting slope of the ensemble projected on its leading Fourier coordinates.

    A single distinct point gives slope 0.
    """
    if len(e) < MIN_BOX_COUNT_MEMBERS:
        logger.warning(
            f"⚠️  Box counting on {len(e)} members (fewer than {MIN_BOX_COUNT_MEMBERS}); the slope is rough"
        )
    return fit_box_counts(projected_coordinates(e, projection_dim), scales, projection_dim)


class AttractorModel(GmnseBaseModel):
    """
    Attractor model for ensemble experiments.

    This class provides:
    - reproducible initial sets from seeds
    - attractor approximation with certification
    - attraction-rate fits and dimension estimates
    """

    def initial_set(
        self,
        seed: int,
        size: int,
        h_norm: float,
        cutoff: Optional[float] = None,
        domain: Optional[TorusDomain] = None,
        stream: int = 0,
    ) -> EnsembleState:
        """
        size random divergence-free fields of H-norm h_norm drawn from one
        seeded generator; a nonzero stream gives an independent set for the
        same seed.
        """
        if size < 1:
            raise ValueError(f"ensemble size must be positive, got {size}")
        rng = np.random.default_rng([seed, stream] if stream else seed)
        domain = domain or self.params.domain
        members = tuple(random_field(domain, rng, h_norm, cutoff) for _ in range(size))
        return EnsembleState(members, EnsembleLabel.INITIAL_SET, {"seed": seed, "h_norm": h_norm})

    def evolve_ensemble(self, e: EnsembleState, t: float) -> EnsembleState:
        try:
            return evolve_ensemble(e, self.params, t, threads=self.threads, solver=self.solver)
        except Exception as error:
            self.logger.error(f"❌ Error evolving ensemble of {len(e)} members: {error}")
            raise

    def approximate(
        self,
        seed_set: EnsembleState,
        t_transient: float,
        t_sample: float,
        n_snapshots: int,
        radii: Optional[AbsorbingRadii] = None,
        radius_floor: float = 0.0,
        record_every: int = 1,
    ) -> EnsembleState:
        try:
            return approximate_attractor(
                seed_set, self.params, t_transient, t_sample, n_snapshots, radii,
                self.scheme, self.workers, self.threads, radius_floor=radius_floor, record_every=record_every,
            )
        except Exception as error:
            self.logger.error(f"❌ Error approximating the attractor: {error}")
            raise

    def fit_rate(self, b: EnsembleState, candidate: EnsembleState, times: Sequence[float]) -> FitResult:
        return fit_attraction_rate(b, candidate, self.params, times, self.scheme, self.workers, self.threads)

    def invariance_gap(self, ensemble: EnsembleState, t: float) -> float:
        return positive_invariance_gap(ensemble, self.params, t, self.scheme, self.workers, self.threads)

    def dimension(self, ensemble: EnsembleState, projection_dims: Sequence[int]) -> List[DimensionEstimate]:
        return [box_counting_dimension(ensemble, dim) for dim in projection_dims]
