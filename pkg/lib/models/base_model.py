"""
Base model class for GMNSE models with common initialization logic.
"""

import logging
from typing import Optional

from ..gmnse_integration.dynamics import GmnseParams
from ..gmnse_integration.simple_solver import TrajectoryRecord, get_solver
from ..gmnse_integration.spectral_core import SpectralVelocityField


class GmnseBaseModel:
    """
    Base model class for GMNSE experiments.

    Holds the parameter set and a solver that the estimate and attractor
    models share.
    """

    def __init__(
        self,
        params: GmnseParams,
        scheme: str = "if-euler",
        workers: Optional[int] = None,
        threads: int = 1,
    ):
        """
        Initialize the base model with a solver.

        Args:
            params: GMNSE parameters (nu, N, forcing, dt, domain)
            scheme: time scheme name
            workers: FFT threads per transform
            threads: worker threads for independent trajectories
        """
        if threads < 1:
            raise ValueError(f"threads must be at least 1, got {threads}")
        self.params = params
        self.scheme = scheme
        self.workers = workers
        self.threads = threads
        self.solver = get_solver(params, scheme, workers)
        self.logger = logging.getLogger("gmnse")

    def evolve(
        self,
        u0: SpectralVelocityField,
        t_final: float,
        record_every: int = 1,
        checkpoint_every: Optional[int] = None,
        start_time: float = 0.0,
    ) -> TrajectoryRecord:
        """
        Evolve a single trajectory with this model's solver.

        Raises:
            BlowUpError: non-finite state
        """
        try:
            return self.solver.evolve(u0, t_final, record_every, checkpoint_every, start_time)
        except Exception as error:
            self.logger.error(f"❌ Error evolving trajectory to t={t_final:g}: {error}")
            raise
