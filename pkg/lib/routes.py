import logging
from typing import Any, Callable, Dict, Optional

from .gmnse_integration.errors import ConfigError

logger = logging.getLogger("gmnse")


def send_progress_update(message: str, step: Optional[str] = None) -> None:
    """Log a progress update; the step name rides on the record as `step`"""
    logger.info(message, extra={'step': step})


# Experiment name -> ExperimentService handler
ROUTES: Dict[str, Callable[[Any], None]] = {
    'simulate': lambda service: service.simulate(),
    'verify-estimates': lambda service: service.verify_estimates(),
    'attractor': lambda service: service.attractor_experiment(),
    'dimension': lambda service: service.dimension(),
    'smoothing': lambda service: service.smoothing(),
    'time-regularity': lambda service: service.time_regularity(),
    'rate-fit': lambda service: service.rate_fit(),
}


def dispatch(experiment: str, service) -> None:
    """Run the handler registered for an experiment"""
    try:
        handler = ROUTES[experiment]
    except KeyError:
        raise ConfigError(
            f"unknown experiment '{experiment}', expected one of {', '.join(ROUTES)}", field='experiment'
        )
    handler(service)
