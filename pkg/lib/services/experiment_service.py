import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..gmnse_integration.errors import GmnseError
from ..gmnse_integration.simple_solver import TrajectoryRecord
from ..gmnse_integration.spectral_core import SpectralVelocityField, norms, random_field
from ..models.attractor_model import (
    AttractorModel,
    EnsembleLabel,
    EnsembleState,
    check_v_boundedness,
    sampling_convergence,
)
from ..models.checkpoint_model import write_checkpoint, write_ensemble
from ..models.config_model import ExperimentConfig
from ..models.estimates_model import (
    AbsorbingRadii,
    EstimatesModel,
    MonitorReport,
    fit_enstrophy_constant,
    monitor_enstrophy,
    monitor_smoothing,
    monitor_stokes_integral,
    monitor_time_derivative,
    monitor_time_regularity,
    verify_modulation_factor,
)

CODE_VERSION = "0.1.0"
MANIFEST_NAME = "manifest.json"

logger = logging.getLogger("gmnse")


def _json_safe(value: Any) -> Any:
    """Non-finite floats become strings so every report is strict JSON"""
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return _json_safe(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    started_at: str
    finished_at: Optional[str] = None
    status: str = "partial"
    error: Optional[str] = None
    outputs: Dict[str, List[str]] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def write(self, directory: Path) -> Path:
        path = Path(directory) / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        return path


class ExperimentService:
    """Experiment service running one configured experiment (service layer over the models)"""

    # Configuration constants
    CONSTANT_FIT_SPAN = 1.0  # time span of the quick run that fits the enstrophy constant
    PERTURBATION_STREAM = 1  # generator stream for perturbation directions
    RATE_STREAM = 2  # generator stream for the rate-fit initial set
    SERIES_HEADER = "time,h_norm,v_norm,a_norm,fn_value"

    def __init__(self, config: ExperimentConfig, output_dir: Optional[Path] = None):
        """
        Initialize the service with estimate and attractor models.

        Args:
            config: validated experiment configuration
            output_dir: overrides config.run.output_dir
        """
        self.config = config
        self.params = config.build_params()
        self.output_dir = Path(output_dir or config.run.output_dir)
        scheme, threads = config.params.scheme, config.run.threads
        self.estimates = EstimatesModel(self.params, scheme, threads=threads)
        self.attractor = AttractorModel(self.params, scheme, threads=threads)
        self.outputs: List[str] = []

    # Output helpers

    def _track(self, path: Path) -> Path:
        self.outputs.append(path.relative_to(self.output_dir).as_posix())
        return path

    def _write_table(self, name: str, header: str, rows: Sequence[Sequence[float]]) -> Path:
        path = self.output_dir / name
        data = np.asarray(rows, dtype=np.float64)
        if data.size == 0:
            path.write_text(header + "\n", encoding="utf-8")
        else:
            np.savetxt(path, np.atleast_2d(data), fmt="%.17g", delimiter=",", header=header, comments="")
        return self._track(path)

    def _write_series(self, name: str, record: TrajectoryRecord) -> Path:
        rows = np.column_stack([record.times, record.h_norms, record.v_norms, record.a_norms, record.fn_series])
        return self._write_table(name, self.SERIES_HEADER, rows)

    def _write_report(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self.output_dir / name
        body = {"experiment": self.config.experiment, "config_hash": self.config.config_hash(), **payload}
        path.write_text(json.dumps(_json_safe(body), indent=2), encoding="utf-8")
        return self._track(path)

    def _write_checkpoint(self, name: str, u: SpectralVelocityField) -> Path:
        return self._track(write_checkpoint(u, self.output_dir / name, self.config.run.checkpoint_format))

    # Shared steps

    def _initial_field(self, seed: int) -> SpectralVelocityField:
        return random_field(self.params.domain, np.random.default_rng(seed), self.config.run.initial_h_norm)

    def _perturbation(self, seed: int, size: float) -> SpectralVelocityField:
        """Same direction for every size, so sizes are comparable"""
        rng = np.random.default_rng([seed, self.PERTURBATION_STREAM])
        return random_field(self.params.domain, rng, size, self.config.estimates.perturbation_cutoff)

    def _fitted_radii(self, u0: SpectralVelocityField) -> AbsorbingRadii:
        """Radii with the enstrophy constant fitted on a short run from u0"""
        record = self.estimates.evolve(u0, self.CONSTANT_FIT_SPAN)
        return self.estimates.radii(monitor_enstrophy(record, self.params).fitted_c)

    def _burned_state(self, seed: int) -> Tuple[SpectralVelocityField, Optional[AbsorbingRadii]]:
        """State certified inside the absorbing balls; unforced runs start from the initial field"""
        u0 = self._initial_field(seed)
        if self.params.forcing_norm == 0.0:
            return u0, None
        radii = self._fitted_radii(u0)
        cfg = self.config
        state, _, _ = self.estimates.burn_in(
            u0, cfg.estimates.burn_in_max, radii, cfg.run.record_every, cfg.estimates.slack
        )
        return state, radii

    def _approximate_attractor(self, seed: int) -> Tuple[EnsembleState, AbsorbingRadii]:
        from ..routes import send_progress_update

        cfg = self.config.attractor
        seed_set = self.attractor.initial_set(seed, cfg.ensemble_size, self.config.run.initial_h_norm)
        radii = self._fitted_radii(seed_set.members[0])
        send_progress_update(f"🚀 Sampling the attractor from {len(seed_set)} members", "attractor")
        ensemble = self.attractor.approximate(
            seed_set, cfg.t_transient, cfg.t_sample, cfg.n_snapshots, radii,
            radius_floor=cfg.radius_floor, record_every=self.config.run.record_every,
        )
        return ensemble, radii

    # Experiments

    def simulate(self) -> None:
        run = self.config.run
        summary = []
        for seed in run.seeds:
            record = self.estimates.evolve(self._initial_field(seed), run.t_final, run.record_every, run.checkpoint_every)
            self._write_series(f"series_seed{seed}.csv", record)
            self._write_checkpoint(f"final_seed{seed}.ckpt", record.final)
            if record.checkpoints:
                members = tuple(u for _, u in record.checkpoints)
                directory = write_ensemble(
                    EnsembleState(members, EnsembleLabel.INITIAL_SET, {"times": [t for t, _ in record.checkpoints]}),
                    self.output_dir / f"checkpoints_seed{seed}", self.params.fingerprint(), run.checkpoint_format,
                )
                self.outputs.append(directory.relative_to(self.output_dir).as_posix() + "/" + MANIFEST_NAME)
            summary.append({
                "seed": seed,
                "steps": record.steps,
                "samples": len(record),
                "max_cfl": record.max_cfl,
                "final": {
                    "h_norm": record.h_norms[-1],
                    "v_norm": record.v_norms[-1],
                    "a_norm": record.a_norms[-1],
                },
            })
        self._write_report("simulate_report.json", {"runs": summary})

    def verify_estimates(self) -> None:
        from ..routes import send_progress_update

        cfg = self.config
        run, est = cfg.run, cfg.estimates
        p = self.params
        send_progress_update("🔍 Checking the modulation factor properties", "modulation")
        modulation_checks = verify_modulation_factor(est.modulation_samples, seed=run.seeds[0])

        checkpoint_every = run.checkpoint_every or 10 * run.record_every
        records = []
        for seed in run.seeds:
            record = self.estimates.evolve(self._initial_field(seed), run.t_final, run.record_every, checkpoint_every)
            self._write_series(f"series_seed{seed}.csv", record)
            records.append((seed, record))
        c_hat = fit_enstrophy_constant([r for _, r in records], p)
        radii = self.estimates.radii(c_hat)

        monitors: List[Dict[str, Any]] = [report.to_dict() for report in modulation_checks]
        for seed, record in records:
            for report in self.estimates.trajectory_monitors(record, radii, est.slack):
                monitors.append({"seed": seed, **report.to_dict()})

        send_progress_update("🔍 Burn-in and trajectory-pair monitors", "pairs")
        burned, burn_radii = self._burned_state(run.seeds[0])
        after = self.estimates.evolve(burned, est.pair_t_final, run.record_every)
        monitors.append(monitor_stokes_integral(after, p, burn_radii or radii).to_dict())

        pairs: Dict[str, List[Dict[str, Any]]] = {}
        fitted: Dict[str, List[float]] = {}
        for size in est.perturbation_sizes:
            u0b = burned + self._perturbation(run.seeds[0], size)
            reports = self.estimates.pair_monitors(burned, u0b, est.pair_t_final, est.smoothing_t_min, run.record_every)
            pairs[repr(size)] = [report.to_dict() for report in reports]
            for report in reports:
                fitted.setdefault(report.inequality_id, []).append(report.fitted_c)

        self._write_report("verify_estimates_report.json", {
            "radii": radii.to_dict(),
            "enstrophy_constant": c_hat,
            "monitors": monitors,
            "pairs": pairs,
            "consistency": {name: _relative_spread(values) for name, values in fitted.items()},
        })

    def smoothing(self) -> None:
        cfg = self.config
        seed = cfg.run.seeds[0]
        burned, _ = self._burned_state(seed)
        reports: List[MonitorReport] = []
        for size in cfg.estimates.perturbation_sizes:
            u0b = burned + self._perturbation(seed, size)
            reports.append(monitor_smoothing(
                burned, u0b, self.params, cfg.estimates.pair_t_final, cfg.estimates.smoothing_t_min,
                cfg.run.record_every, self.estimates.solver,
            ))
        header = "t_bar," + ",".join(f"ratio_{size!r}" for size in cfg.estimates.perturbation_sizes)
        length = min(len(r.times) for r in reports)
        columns = [reports[0].times[:length]] + [(r.residual_series + r.rhs_series)[:length] for r in reports]
        self._write_table("smoothing.csv", header, np.column_stack(columns))
        self._write_report("smoothing_report.json", {
            "monitors": [report.to_dict() for report in reports],
            "consistency": {
                "rho1": _relative_spread([r.details["rho1"] for r in reports]),
                "rho2": _relative_spread([r.details["rho2"] for r in reports]),
            },
        })

    def time_regularity(self) -> None:
        cfg = self.config
        est = cfg.estimates
        burned, radii = self._burned_state(cfg.run.seeds[0])
        radii = radii or self.estimates.radii()
        results, derivatives = [], []
        for refinement in (1, 2):
            params = self.params.with_dt(self.params.dt / refinement)
            model = EstimatesModel(params, cfg.params.scheme, threads=cfg.run.threads)
            record = model.evolve(
                burned, est.regularity_t_final, cfg.run.record_every * refinement,
                est.regularity_checkpoint_every * refinement,
            )
            derivative = monitor_time_derivative(record, params, model.workers)
            derivatives.append(derivative)
            results.append(monitor_time_regularity(record, params, radii, derivative.fitted_c))
        base, halved = results
        rows = np.column_stack([base.times, base.rhs_series + base.residual_series, base.rhs_series])
        self._write_table("regularity.csv", "separation,ratio,rho3_formula", rows)
        self._write_report("time_regularity_report.json", {
            "radii": radii.to_dict(),
            "monitors": [report.to_dict() for report in (base, halved, *derivatives)],
            "enstrophy_constant": radii.fitted_c,
            "derivative_constant": derivatives[0].fitted_c,
            "rho3_hat": base.fitted_c,
            "rho3_hat_halved_dt": halved.fitted_c,
            "relative_change": _relative_spread([base.fitted_c, halved.fitted_c]),
        })

    def attractor_experiment(self) -> None:
        cfg = self.config
        ensemble, radii = self._approximate_attractor(cfg.run.seeds[0])
        v_report = check_v_boundedness(
            ensemble, radii, cfg.estimates.slack, ensemble.metadata["v_radius_floor"]
        )
        forward, backward = sampling_convergence(ensemble)
        gap = self.attractor.invariance_gap(ensemble, cfg.attractor.invariance_time)

        rows = []
        for member, t, u in zip(ensemble.metadata["source_member"], ensemble.metadata["snapshot_times"], ensemble):
            state = norms(u)
            rows.append([member, t, state.h_norm, state.v_norm, state.a_norm])
        self._write_table("snapshots.csv", "member,time,h_norm,v_norm,a_norm", rows)
        directory = write_ensemble(
            ensemble, self.output_dir / "attractor_ensemble", self.params.fingerprint(), cfg.run.checkpoint_format
        )
        self.outputs.append(directory.relative_to(self.output_dir).as_posix() + "/" + MANIFEST_NAME)
        self._write_report("attractor_report.json", {
            "radii": radii.to_dict(),
            "members": len(ensemble),
            "entry_times": ensemble.metadata["entry_times"],
            "monitors": [v_report.to_dict()],
            "sampling_convergence": {"to_half": forward, "half_to_full": backward},
            "positive_invariance_gap": gap,
        })

    def dimension(self) -> None:
        cfg = self.config
        ensemble, _ = self._approximate_attractor(cfg.run.seeds[0])
        estimates = self.attractor.dimension(ensemble, cfg.attractor.projection_dims)
        for estimate in estimates:
            rows = np.column_stack([
                estimate.scales, estimate.counts, -np.log(estimate.scales), np.log(estimate.counts),
            ])
            self._write_table(f"boxcounts_p{estimate.projection_dim}.csv", "epsilon,count,log_inv_epsilon,log_count", rows)
        slopes = [e.slope for e in estimates]
        self._write_report("dimension_report.json", {
            "members": len(ensemble),
            "estimates": [e.to_dict() for e in estimates],
            "slope_range": max(slopes) - min(slopes),
        })

    def rate_fit(self) -> None:
        cfg = self.config
        seed = cfg.run.seeds[0]
        if self.params.forcing_norm == 0.0:
            candidate = EnsembleState(
                (SpectralVelocityField.zeros(self.params.domain),), EnsembleLabel.EXP_ATTRACTOR_CANDIDATE
            )
        else:
            ensemble, _ = self._approximate_attractor(seed)
            candidate = ensemble.relabel(EnsembleLabel.EXP_ATTRACTOR_CANDIDATE)
        b = self.attractor.initial_set(
            seed, cfg.attractor.rate_ensemble_size, cfg.run.initial_h_norm, stream=self.RATE_STREAM
        )
        fit = self.attractor.fit_rate(b, candidate, cfg.attractor.rate_times)
        self._write_table("distance.csv", "time,distance", fit.samples)
        self._write_report("rate_fit_report.json", {
            "fit": fit.to_dict(),
            "candidate_members": len(candidate),
            "reference_rate": self.params.nu * self.params.lambda1,
        })

    def run(self) -> RunManifest:
        """
        Run the configured experiment and write its manifest.

        The manifest is written even when the experiment fails; it is then
        marked partial with the error category and message, and the error is
        re-raised.
        """
        from ..routes import dispatch, send_progress_update

        self.output_dir.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(
            config_hash=self.config.config_hash(),
            code_version=CODE_VERSION,
            started_at=_now(),
        )
        experiment = self.config.experiment
        send_progress_update(f"🚀 Starting experiment '{experiment}'", "start")
        self.config.dump(self.output_dir / "config.yaml")
        self._track(self.output_dir / "config.yaml")
        try:
            dispatch(experiment, self)
            manifest.status = "complete"
            send_progress_update(f"✅ Experiment '{experiment}' complete", "done")
        except Exception as error:
            category = error.category if isinstance(error, GmnseError) else "error"
            manifest.error = f"{category}: {error}"
            send_progress_update(f"❌ Experiment '{experiment}' failed: {error}", "error")
            raise
        finally:
            manifest.outputs = {experiment: list(self.outputs)}
            manifest.finished_at = _now()
            manifest.write(self.output_dir)
        return manifest


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _relative_spread(values: Sequence[Optional[float]]) -> Optional[float]:
    """(max - min) / max over finite values; None without two finite values"""
    finite = [float(v) for v in values if v is not None and math.isfinite(v)]
    if len(finite) < 2:
        return None
    top = max(abs(v) for v in finite)
    if top == 0.0:
        return 0.0
    return (max(finite) - min(finite)) / top
