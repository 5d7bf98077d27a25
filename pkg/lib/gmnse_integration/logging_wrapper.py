"""
SimpleGmnseSolver Logging Wrapper

Logs every trajectory evolution (span, steps, wall time, final norms, blow-ups)
without touching the solver internals.

Usage:
    from lib.gmnse_integration.logging_wrapper import enable_solver_logging

    # Call once at startup, before solvers are used
    enable_solver_logging()
"""

import logging
import time
from typing import Optional

from .errors import BlowUpError

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("gmnse")


def _log_start(run_id: str, solver, t_final: float, record_every: int):
    """Log the evolution request"""
    p = solver.params
    d = p.domain
    logger.info(
        f"🚀 {run_id} - evolve t={t_final:g} ({solver.steps_for(t_final)} steps, scheme={solver.scheme}, "
        f"M={d.resolution_per_axis}, d={d.dimension}, nu={p.nu:g}, N={p.n_cap:g}, dt={p.dt:g}, "
        f"record_every={record_every})"
    )


def _log_done(run_id: str, record, elapsed: float):
    """Log the finished trajectory"""
    logger.info(
        f"✅ {run_id} - {record.steps} steps in {elapsed:.1f}ms; final |u|_2={record.h_norms[-1]:.6g}, "
        f"|u|={record.v_norms[-1]:.6g}, max CFL={record.max_cfl:.3g}"
    )


def _log_error(run_id: str, error: Exception, elapsed: float):
    """Log any error raised while evolving"""
    if isinstance(error, BlowUpError):
        logger.error(f"❌ {run_id} - {error} after {elapsed:.1f}ms")
    else:
        logger.error(f"❌ {run_id} - Error after {elapsed:.1f}ms: {str(error)}")


def enable_solver_logging():
    """
    Enable logging for all SimpleGmnseSolver instances.

    Patches SimpleGmnseSolver.evolve; the original method is kept on the class
    so disable_solver_logging can restore it.
    """
    from .simple_solver import SimpleGmnseSolver

    if hasattr(SimpleGmnseSolver, "_original_evolve"):
        logger.debug("🔧 Solver logging wrapper already installed")
        return

    SimpleGmnseSolver._original_evolve = SimpleGmnseSolver.evolve

    def patched_evolve(self, u0, t_final, record_every=1, checkpoint_every=None, start_time=0.0):
        """Intercept and log the evolution"""
        self._evolve_count = getattr(self, "_evolve_count", 0) + 1
        run_id = f"EVO-{self._evolve_count:04d}"
        _log_start(run_id, self, t_final, record_every)

        start = time.time()
        try:
            record = self._original_evolve(u0, t_final, record_every, checkpoint_every, start_time)
        except Exception as e:
            _log_error(run_id, e, (time.time() - start) * 1000)
            raise
        _log_done(run_id, record, (time.time() - start) * 1000)
        return record

    SimpleGmnseSolver.evolve = patched_evolve
    logger.info("✅ Solver logging wrapper successfully installed")


def disable_solver_logging():
    """Restore the original SimpleGmnseSolver.evolve"""
    from .simple_solver import SimpleGmnseSolver

    if hasattr(SimpleGmnseSolver, "_original_evolve"):
        SimpleGmnseSolver.evolve = SimpleGmnseSolver._original_evolve
        del SimpleGmnseSolver._original_evolve
        logger.info("🔧 Solver logging wrapper disabled")
    else:
        logger.warning("⚠️  No logging wrapper was installed")


def setup_gmnse_logging(level: str = "INFO", format_string: Optional[str] = None):
    """
    Set up package logging and install the solver wrapper.

    Args:
        level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        format_string: Custom log format string
    """
    log_level = getattr(logging, level.upper(), logging.INFO)

    if format_string:
        formatter = logging.Formatter(format_string)
        for handler in logging.getLogger().handlers:
            handler.setFormatter(formatter)

    logger.setLevel(log_level)
    enable_solver_logging()
    logger.info(f"🔧 GMNSE logging configured with level: {level}")
