"""
SimpleGmnseSolver: the discrete semigroup S(t) with trajectory recording.

The solver is the "client" the models talk to: it owns the params, the time
scheme and the FFT thread count, and turns initial data into trajectories.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import SCHEMES, GmnseParams, f_n_factor, step
from .spectral_core import NormTriple, SpectralVelocityField, norms, transform_to_physical

logger = logging.getLogger("gmnse")

Checkpoint = Tuple[float, SpectralVelocityField]


@dataclass(eq=False)
class TrajectoryRecord:
    """
    Sampled trajectory u(t) = S(t)u0.

    Norm series are stored as arrays; norm_series rebuilds NormTriple values.
    """

    times: np.ndarray
    h_norms: np.ndarray
    v_norms: np.ndarray
    a_norms: np.ndarray
    fn_series: np.ndarray
    n_cap: float
    checkpoints: List[Checkpoint] = field(default_factory=list)
    final: Optional[SpectralVelocityField] = None
    max_cfl: float = 0.0
    steps: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.h_norms = np.asarray(self.h_norms, dtype=np.float64)
        self.v_norms = np.asarray(self.v_norms, dtype=np.float64)
        self.a_norms = np.asarray(self.a_norms, dtype=np.float64)
        self.fn_series = np.asarray(self.fn_series, dtype=np.float64)
        n = len(self.times)
        if n == 0:
            raise ValueError("a trajectory record needs at least one sample")
        for name in ("h_norms", "v_norms", "a_norms", "fn_series"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")
        if np.any(self.fn_series <= 0) or np.any(self.fn_series > 1):
            raise ValueError("F_N values must lie in (0, 1]")
        if np.any(self.fn_series * self.v_norms > self.n_cap * (1 + 1e-12)):
            raise ValueError("F_N(||u||) ||u|| exceeds N")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def norm_series(self) -> List[NormTriple]:
        return [NormTriple(h, v, a) for h, v, a in zip(self.h_norms, self.v_norms, self.a_norms)]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    @classmethod
    def concatenate(cls, records: Sequence["TrajectoryRecord"]) -> "TrajectoryRecord":
        """Join consecutive records; a shared boundary sample is kept once"""
        if not records:
            raise ValueError("nothing to concatenate")
        parts = {name: [] for name in ("times", "h_norms", "v_norms", "a_norms", "fn_series")}
        checkpoints: List[Checkpoint] = []
        last_time = None
        for record in records:
            start = 0
            if last_time is not None:
                if record.times[0] < last_time:
                    raise ValueError("records overlap in time")
                if record.times[0] == last_time:
                    start = 1
            for name, chunks in parts.items():
                chunks.append(getattr(record, name)[start:])
            checkpoints.extend(c for c in record.checkpoints if last_time is None or c[0] > last_time)
            last_time = record.times[-1]
        return cls(
            **{name: np.concatenate(chunks) for name, chunks in parts.items()},
            n_cap=records[0].n_cap,
            checkpoints=checkpoints,
            final=records[-1].final,
            max_cfl=max(r.max_cfl for r in records),
            steps=sum(r.steps for r in records),
        )


class SimpleGmnseSolver:
    """Steps and records GMNSE trajectories for one parameter set"""

    CFL_LIMIT = 0.25
    ALIGNMENT_TOLERANCE = 1e-9

    def __init__(self, params: GmnseParams, scheme: str = "if-euler", workers: Optional[int] = None):
        """
        Args:
            params: physical and numerical parameters
            scheme: 'if-euler' (first order) or 'if-heun' (second order)
            workers: FFT threads per transform (None = scipy default)
        """
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme '{scheme}', expected one of {', '.join(SCHEMES)}")
        self.params = params
        self.scheme = scheme
        self.workers = workers

    def steps_for(self, t: float) -> int:
        """Number of steps covering t, warning when t is not a multiple of dt"""
        if t < 0:
            raise ValueError(f"time span must be nonnegative, got {t}")
        dt = self.params.dt
        n = int(round(t / dt))
        if abs(n * dt - t) > self.ALIGNMENT_TOLERANCE * max(1.0, abs(t)):
            logger.warning(f"⚠️  t={t} is not a multiple of dt={dt}; using {n} steps (t={n * dt})")
        return n

    def cfl_number(self, u: SpectralVelocityField) -> float:
        """dt F_N max|u| / h for the modulated velocity"""
        p = self.params
        state = norms(u)
        speed = float(np.max(np.sqrt(np.sum(transform_to_physical(u, workers=self.workers) ** 2, axis=0))))
        return p.dt * f_n_factor(state.v_norm, p.n_cap) * speed / p.domain.grid_spacing

    def step(self, u: SpectralVelocityField, step_index: int = 1, time: Optional[float] = None) -> SpectralVelocityField:
        return step(u, self.params, scheme=self.scheme, workers=self.workers, step_index=step_index, time=time)

    def advance(self, u: SpectralVelocityField, t: float, start_time: float = 0.0) -> SpectralVelocityField:
        """S(t)u without recording"""
        dt = self.params.dt
        for i in range(1, self.steps_for(t) + 1):
            u = self.step(u, step_index=i, time=start_time + i * dt)
        return u

    def evolve(
        self,
        u0: SpectralVelocityField,
        t_final: float,
        record_every: int = 1,
        checkpoint_every: Optional[int] = None,
        start_time: float = 0.0,
    ) -> TrajectoryRecord:
        """
        Evolve u0 over [start_time, start_time + t_final].

        Args:
            u0: initial field
            t_final: span, rounded to a whole number of steps
            record_every: sample norms every this many steps (the last step is always sampled)
            checkpoint_every: keep the field every this many steps (and at the start)

        Returns:
            TrajectoryRecord: samples, sparse checkpoints and the final field

        Raises:
            BlowUpError: non-finite state, naming the first offending step
        """
        if record_every < 1:
            raise ValueError(f"record_every must be a positive integer, got {record_every}")
        if checkpoint_every is not None and checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be a positive integer, got {checkpoint_every}")
        p = self.params
        n_steps = self.steps_for(t_final)
        times, triples, factors = [], [], []
        checkpoints: List[Checkpoint] = []
        max_cfl = 0.0
        warned = False

        def sample(u: SpectralVelocityField, t: float) -> None:
            nonlocal max_cfl, warned
            state = norms(u)
            times.append(t)
            triples.append(state)
            factors.append(f_n_factor(state.v_norm, p.n_cap))
            cfl = self.cfl_number(u)
            max_cfl = max(max_cfl, cfl)
            if cfl > self.CFL_LIMIT and not warned:
                warned = True
                logger.warning(f"⚠️  CFL heuristic exceeded at t={t:.6g}: {cfl:.3f} > {self.CFL_LIMIT}")

        u = u0
        sample(u, start_time)
        if checkpoint_every:
            checkpoints.append((start_time, u))
        for i in range(1, n_steps + 1):
            t = start_time + i * p.dt
            u = self.step(u, step_index=i, time=t)
            if i % record_every == 0 or i == n_steps:
                sample(u, t)
            if checkpoint_every and i % checkpoint_every == 0:
                checkpoints.append((t, u))

        return TrajectoryRecord(
            times=np.array(times),
            h_norms=np.array([s.h_norm for s in triples]),
            v_norms=np.array([s.v_norm for s in triples]),
            a_norms=np.array([s.a_norm for s in triples]),
            fn_series=np.array(factors),
            n_cap=p.n_cap,
            checkpoints=checkpoints,
            final=u,
            max_cfl=max_cfl,
            steps=n_steps,
        )


# Convenience functions


def get_solver(params: GmnseParams, scheme: str = "if-euler", workers: Optional[int] = None) -> SimpleGmnseSolver:
    """Get a solver for a parameter set"""
    return SimpleGmnseSolver(params, scheme, workers)


def evolve(
    u0: SpectralVelocityField,
    p: GmnseParams,
    t_final: float,
    record_every: int = 1,
    checkpoint_every: Optional[int] = None,
    scheme: str = "if-euler",
    workers: Optional[int] = None,
) -> TrajectoryRecord:
    """Evolve u0 with a throwaway solver"""
    return SimpleGmnseSolver(p, scheme, workers).evolve(u0, t_final, record_every, checkpoint_every)


def advance(
    u: SpectralVelocityField, p: GmnseParams, t: float, scheme: str = "if-euler", workers: Optional[int] = None
) -> SpectralVelocityField:
    """S(t)u with a throwaway solver"""
    return SimpleGmnseSolver(p, scheme, workers).advance(u, t)
