"""
GMNSE right-hand side and one-step maps.

    du/dt = P f - nu A u - F_N(||u||) P (u.grad) u

Time stepping uses the exact viscous integrating factor E = exp(-nu |k|^2 dt)
per mode; forcing and the modulated convection are explicit, with F_N
evaluated at the beginning-of-step V-norm.

    if-euler:  u' = E (u + dt N(u))
    if-heun:   u* = E (u + dt N(u)),  u' = E u + dt/2 (E N(u) + N(u*))

where N(u) = P f - F_N(||u||) B(u).
"""

import hashlib
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, Dict, Optional, Union

import numpy as np
import scipy.fft

from .errors import BlowUpError
from .spectral_core import (
    SpectralVelocityField,
    TorusDomain,
    leray_project,
    norms,
)

SCHEMES = ("if-euler", "if-heun")


def f_n_factor(
    r: Union[float, np.ndarray], n_cap: Union[float, np.ndarray]
) -> Union[float, np.ndarray]:
    """
    Modulation factor F_N(r) = min{1, N/r}, with F_N(0) = 1.

    Accepts scalars or broadcastable arrays of r and N.
    """
    cap = np.asarray(n_cap, dtype=np.float64)
    if not np.all(cap > 0):
        raise ValueError(f"n_cap must be positive, got {n_cap}")
    r_arr = np.asarray(r, dtype=np.float64)
    if np.any(r_arr < 0) or np.any(np.isnan(r_arr)):
        raise ValueError("r must be nonnegative")
    factor = np.where(r_arr <= cap, 1.0, cap / np.maximum(r_arr, cap))
    if factor.ndim == 0:
        return float(factor)
    return factor


@dataclass(frozen=True, eq=False)
class GmnseParams:
    """
    Everything defining the discrete semigroup S(t).

    The forcing is Leray-projected on ingestion.
    """

    nu: float
    n_cap: float
    forcing: SpectralVelocityField
    dt: float
    domain: Optional[TorusDomain] = None

    def __post_init__(self):
        for name in ("nu", "n_cap", "dt"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        domain = self.domain or self.forcing.domain
        if self.forcing.domain != domain:
            raise ValueError(f"forcing domain {self.forcing.domain} does not match {domain}")
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "forcing", leray_project(self.forcing))

    @classmethod
    def unforced(cls, domain: TorusDomain, nu: float, n_cap: float, dt: float) -> "GmnseParams":
        return cls(nu=nu, n_cap=n_cap, forcing=SpectralVelocityField.zeros(domain), dt=dt)

    @property
    def lambda1(self) -> float:
        return self.domain.lambda1

    @cached_property
    def forcing_norm(self) -> float:
        """||f||_2"""
        return norms(self.forcing).h_norm

    @cached_property
    def viscous_factor(self) -> np.ndarray:
        factor = np.exp(-self.nu * self.domain.k_squared * self.dt)
        factor.flags.writeable = False
        return factor

    def with_dt(self, dt: float) -> "GmnseParams":
        return replace(self, dt=dt)

    def fingerprint(self) -> str:
        """sha256 over scalars, domain and forcing bits"""
        digest = hashlib.sha256()
        d = self.domain
        digest.update(
            repr((self.nu, self.n_cap, self.dt, d.resolution_per_axis, d.dimension, d.edge_length)).encode()
        )
        digest.update(np.ascontiguousarray(self.forcing.coeffs).tobytes())
        return digest.hexdigest()


def _advection_coefficients(u: SpectralVelocityField, workers: Optional[int]) -> np.ndarray:
    """Dealiased pseudo-spectral (u.grad)u, masked but not projected"""
    domain = u.domain
    axes = domain.spatial_axes
    mask = domain.dealias_mask
    k = domain.wavenumbers
    u_hat = u.coeffs * mask
    velocity = scipy.fft.ifftn(u_hat, axes=axes, norm="forward", workers=workers).real
    advection = np.zeros(domain.coeff_shape)
    for j in range(domain.dimension):
        gradient_j = scipy.fft.ifftn(1j * k[j] * u_hat, axes=axes, norm="forward", workers=workers).real
        advection += velocity[j] * gradient_j
    return scipy.fft.fftn(advection, axes=axes, norm="forward", workers=workers) * mask


def convective_term(u: SpectralVelocityField, workers: Optional[int] = None) -> SpectralVelocityField:
    """
    Unmodulated, Leray-projected (u.grad)u with 2/3-rule dealiasing.

    The input is truncated to the dealiased set before the product and the
    product is truncated again, so the result equals the Galerkin convolution
    over the retained wavevectors.
    """
    return leray_project(_advection_coefficients(u, workers), u.domain)


def modulation(u: SpectralVelocityField, p: GmnseParams) -> float:
    return f_n_factor(norms(u).v_norm, p.n_cap)


def _explicit_part(u: SpectralVelocityField, p: GmnseParams, workers: Optional[int]) -> np.ndarray:
    """P f - F_N(||u||) B(u), coefficient array"""
    factor = modulation(u, p)
    return p.forcing.coeffs - factor * convective_term(u, workers).coeffs


def rhs(u: SpectralVelocityField, p: GmnseParams, workers: Optional[int] = None) -> SpectralVelocityField:
    """P f - nu A u - F_N(||u||) B(u), with F_N at the V-norm of u"""
    linear = p.nu * p.domain.k_squared * u.coeffs
    return SpectralVelocityField(u.domain, _explicit_part(u, p, workers) - linear)


def _if_euler(u: SpectralVelocityField, p: GmnseParams, workers: Optional[int]) -> np.ndarray:
    return p.viscous_factor * (u.coeffs + p.dt * _explicit_part(u, p, workers))


def _if_heun(u: SpectralVelocityField, p: GmnseParams, workers: Optional[int]) -> np.ndarray:
    explicit_now = _explicit_part(u, p, workers)
    predictor = SpectralVelocityField(u.domain, p.viscous_factor * (u.coeffs + p.dt * explicit_now))
    explicit_next = _explicit_part(predictor, p, workers)
    return p.viscous_factor * (u.coeffs + 0.5 * p.dt * explicit_now) + 0.5 * p.dt * explicit_next


STEPPERS: Dict[str, Callable[[SpectralVelocityField, GmnseParams, Optional[int]], np.ndarray]] = {
    "if-euler": _if_euler,
    "if-heun": _if_heun,
}


def step(
    u: SpectralVelocityField,
    p: GmnseParams,
    scheme: str = "if-euler",
    workers: Optional[int] = None,
    step_index: int = 1,
    time: Optional[float] = None,
) -> SpectralVelocityField:
    """
    One IMEX step of size p.dt.

    Raises:
        BlowUpError: the new state has non-finite coefficients
    """
    try:
        stepper = STEPPERS[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme '{scheme}', expected one of {', '.join(SCHEMES)}")
    if u.domain != p.domain:
        raise ValueError(f"field domain {u.domain} does not match params domain {p.domain}")
    if not u.is_finite():
        raise BlowUpError(step_index, time if time is not None else step_index * p.dt)
    with np.errstate(over="ignore", invalid="ignore"):
        new_coeffs = stepper(u, p, workers)
    if not np.all(np.isfinite(new_coeffs)):
        raise BlowUpError(step_index, time if time is not None else step_index * p.dt)
    return leray_project(new_coeffs, p.domain)
