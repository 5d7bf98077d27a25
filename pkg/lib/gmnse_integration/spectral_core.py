"""
Spectral core: divergence-free velocity fields on the periodic torus.

Fields live in truncated Fourier space as full complex arrays of shape
(d, M, ..., M) in FFT index order. Coefficients are Fourier-series
coefficients, u(x) = sum_k u_k exp(i k.x), so u_k = FFT(u)/M^d.

Normalization used by every norm in the package:
    ||u||_2^2  = vol * sum_k |u_k|^2
    ||u||^2    = vol * sum_k |k|^2 |u_k|^2
    ||Au||_2^2 = vol * sum_k |k|^4 |u_k|^2
with vol = L^d. On the grid this is the quadrature weight (L/M)^d times the
sum of |u(x)|^2 over the M^d points, i.e. (2 pi)^d * M^-d per point on the
2 pi torus, so Parseval holds exactly. With L = 2 pi the first Stokes
eigenvalue is lambda_1 = 1.

The Nyquist planes (any index equal to M/2) are held at zero by
leray_project: the +k/-k pairing and the derivative i k are not defined there.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.fft

from .errors import ResolutionMismatchError

TWO_PI = 2.0 * np.pi


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class TorusDomain:
    """
    Periodic box [0, L)^d resolved by M Fourier modes per axis.

    Args:
        resolution_per_axis: even M >= 4
        dimension: 2 (fast mode) or 3
        edge_length: L > 0
    """

    resolution_per_axis: int = 16
    dimension: int = 3
    edge_length: float = TWO_PI

    def __post_init__(self):
        m = self.resolution_per_axis
        if int(m) != m or m < 4 or m % 2 != 0:
            raise ValueError(f"resolution_per_axis must be an even integer >= 4, got {m}")
        if self.dimension not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dimension}")
        if not self.edge_length > 0:
            raise ValueError(f"edge_length must be positive, got {self.edge_length}")

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.resolution_per_axis,) * self.dimension

    @property
    def coeff_shape(self) -> Tuple[int, ...]:
        return (self.dimension,) + self.shape

    @property
    def spatial_axes(self) -> Tuple[int, ...]:
        return tuple(range(1, self.dimension + 1))

    @property
    def zero_index(self) -> Tuple[int, ...]:
        return (0,) * self.dimension

    @property
    def wavenumber_scale(self) -> float:
        return TWO_PI / self.edge_length

    @property
    def volume(self) -> float:
        return float(self.edge_length ** self.dimension)

    @property
    def lambda1(self) -> float:
        """First Stokes eigenvalue (2 pi / L)^2"""
        return float(self.wavenumber_scale ** 2)

    @property
    def grid_spacing(self) -> float:
        return self.edge_length / self.resolution_per_axis

    @property
    def quadrature_weight(self) -> float:
        return float(self.grid_spacing ** self.dimension)

    @cached_property
    def integer_wavenumbers(self) -> np.ndarray:
        m = self.resolution_per_axis
        n = np.rint(np.fft.fftfreq(m, d=1.0 / m)).astype(np.int64)
        return _frozen(np.stack(np.meshgrid(*([n] * self.dimension), indexing="ij")))

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return _frozen(self.integer_wavenumbers * self.wavenumber_scale)

    @cached_property
    def k_squared(self) -> np.ndarray:
        return _frozen(np.sum(self.wavenumbers ** 2, axis=0))

    @cached_property
    def nyquist_free(self) -> np.ndarray:
        """True away from the Nyquist planes"""
        half = self.resolution_per_axis // 2
        return _frozen(np.all(np.abs(self.integer_wavenumbers) != half, axis=0))

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3 rule: keep modes with every |n_i| < M/3"""
        m = self.resolution_per_axis
        return _frozen(np.all(3 * np.abs(self.integer_wavenumbers) < m, axis=0))

    def grid(self) -> np.ndarray:
        """Physical coordinates, shape (d, M, ..., M)"""
        x = np.arange(self.resolution_per_axis) * self.grid_spacing
        return np.stack(np.meshgrid(*([x] * self.dimension), indexing="ij"))

    def index_of(self, wavevector: Sequence[int]) -> Tuple[int, ...]:
        """Array index of an integer wavevector; rejects the Nyquist planes"""
        if len(wavevector) != self.dimension:
            raise ValueError(f"wavevector {tuple(wavevector)} has wrong dimension for d={self.dimension}")
        m = self.resolution_per_axis
        for n in wavevector:
            if 2 * abs(int(n)) >= m:
                raise ValueError(f"wavevector {tuple(wavevector)} outside the retained set for M={m}")
        return tuple(int(n) % m for n in wavevector)


@dataclass(frozen=True, eq=False)
class SpectralVelocityField:
    """
    Velocity field given by its Fourier coefficients.

    The coefficient array is copied on construction and made read-only, so
    a field never changes after it is produced.
    """

    domain: TorusDomain
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=np.complex128)
        if coeffs.shape != self.domain.coeff_shape:
            raise ResolutionMismatchError(
                f"coefficient shape {coeffs.shape} does not match domain shape {self.domain.coeff_shape}"
            )
        object.__setattr__(self, "coeffs", _frozen(coeffs))

    @classmethod
    def zeros(cls, domain: TorusDomain) -> "SpectralVelocityField":
        return cls(domain, np.zeros(domain.coeff_shape, dtype=np.complex128))

    def _check_domain(self, other: "SpectralVelocityField") -> None:
        if other.domain != self.domain:
            raise ResolutionMismatchError(f"domains differ: {self.domain} vs {other.domain}")

    def __add__(self, other: "SpectralVelocityField") -> "SpectralVelocityField":
        self._check_domain(other)
        return SpectralVelocityField(self.domain, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralVelocityField") -> "SpectralVelocityField":
        self._check_domain(other)
        return SpectralVelocityField(self.domain, self.coeffs - other.coeffs)

    def __mul__(self, factor: float) -> "SpectralVelocityField":
        return SpectralVelocityField(self.domain, self.coeffs * float(factor))

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralVelocityField":
        return SpectralVelocityField(self.domain, -self.coeffs)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.coeffs)))

    def divergence_residual(self) -> float:
        """max over k of |k.u_k| / (|k| |u_k|); 0 for the zero field"""
        k = self.domain.wavenumbers
        k_mag = np.sqrt(self.domain.k_squared)
        u_mag = np.sqrt(np.sum(np.abs(self.coeffs) ** 2, axis=0))
        active = (k_mag > 0) & (u_mag > 0)
        if not np.any(active):
            return 0.0
        k_dot_u = np.abs(np.sum(k * self.coeffs, axis=0))
        return float(np.max(k_dot_u[active] / (k_mag[active] * u_mag[active])))


class NormTriple(NamedTuple):
    """(||u||_2, ||u||, ||Au||_2)"""

    h_norm: float
    v_norm: float
    a_norm: float

    def squares(self) -> Tuple[float, float, float]:
        return self.h_norm ** 2, self.v_norm ** 2, self.a_norm ** 2


FieldLike = Union[SpectralVelocityField, np.ndarray]


def _coefficients_of(u: FieldLike, domain: Optional[TorusDomain]) -> Tuple[np.ndarray, TorusDomain]:
    if isinstance(u, SpectralVelocityField):
        if domain is not None and domain != u.domain:
            raise ResolutionMismatchError(f"field domain {u.domain} does not match {domain}")
        return u.coeffs, u.domain
    if domain is None:
        raise ValueError("a domain is required for raw coefficient arrays")
    data = np.asarray(u, dtype=np.complex128)
    if data.shape != domain.coeff_shape:
        raise ResolutionMismatchError(
            f"coefficient shape {data.shape} does not match domain shape {domain.coeff_shape}"
        )
    return data, domain


def leray_project(raw: FieldLike, domain: Optional[TorusDomain] = None) -> SpectralVelocityField:
    """
    Project a Hermitian coefficient array onto divergence-free, zero-mean fields.

    u_k <- u_k - k (k.u_k) / |k|^2, u_0 = 0, Nyquist planes zeroed.

    Args:
        raw: coefficient array of shape domain.coeff_shape, or a field
        domain: required when raw is a plain array

    Returns:
        SpectralVelocityField: the projected field
    """
    data, domain = _coefficients_of(raw, domain)
    k = domain.wavenumbers
    k2 = domain.k_squared
    safe_k2 = np.where(k2 == 0, 1.0, k2)
    k_dot_u = np.sum(k * data, axis=0)
    projected = data - k * (k_dot_u / safe_k2)
    projected[(slice(None),) + domain.zero_index] = 0.0
    projected *= domain.nyquist_free
    return SpectralVelocityField(domain, projected)


def stokes_apply(u: SpectralVelocityField) -> SpectralVelocityField:
    """(Au)_k = |k|^2 u_k with |k| in units of 2 pi / L"""
    return SpectralVelocityField(u.domain, u.coeffs * u.domain.k_squared)


def norms(u: SpectralVelocityField) -> NormTriple:
    """H, V and Stokes norms under the vol = L^d convention (module docstring)"""
    domain = u.domain
    power = np.sum(u.coeffs.real ** 2 + u.coeffs.imag ** 2, axis=0)
    k2 = domain.k_squared
    vol = domain.volume
    h_sq = vol * np.sum(power)
    v_sq = vol * np.sum(k2 * power)
    a_sq = vol * np.sum(k2 * k2 * power)
    return NormTriple(float(np.sqrt(h_sq)), float(np.sqrt(v_sq)), float(np.sqrt(a_sq)))


def inner_product(u: SpectralVelocityField, v: SpectralVelocityField) -> float:
    """H inner product vol * Re sum conj(u_k) . v_k"""
    u._check_domain(v)
    return float(u.domain.volume * np.real(np.vdot(u.coeffs, v.coeffs)))


def transform_to_physical(
    u: FieldLike, domain: Optional[TorusDomain] = None, workers: Optional[int] = None
) -> np.ndarray:
    """Real grid values, shape (d, M, ..., M)"""
    data, domain = _coefficients_of(u, domain)
    grid = scipy.fft.ifftn(data, axes=domain.spatial_axes, norm="forward", workers=workers)
    return np.ascontiguousarray(grid.real)


def transform_to_spectral(
    grid: np.ndarray, domain: TorusDomain, workers: Optional[int] = None
) -> np.ndarray:
    """Fourier-series coefficients of a real grid field (not projected)"""
    values = np.asarray(grid, dtype=np.float64)
    if values.shape != domain.coeff_shape:
        raise ResolutionMismatchError(
            f"grid shape {values.shape} does not match domain shape {domain.coeff_shape}"
        )
    return scipy.fft.fftn(values, axes=domain.spatial_axes, norm="forward", workers=workers)


def physical_h_norm(grid: np.ndarray, domain: TorusDomain) -> float:
    """L2 norm by grid quadrature, the physical side of Parseval"""
    return float(np.sqrt(domain.quadrature_weight * np.sum(np.asarray(grid) ** 2)))


def single_mode(
    domain: TorusDomain, wavevector: Sequence[int], amplitude: Sequence[complex]
) -> SpectralVelocityField:
    """Real field carrying one +k/-k pair, projected"""
    index = domain.index_of(wavevector)
    if not any(wavevector):
        raise ValueError("the zero wavevector carries no velocity (zero-mean fields)")
    mirror = domain.index_of([-int(n) for n in wavevector])
    amp = np.asarray(amplitude, dtype=np.complex128)
    if amp.shape != (domain.dimension,):
        raise ValueError(f"amplitude must have {domain.dimension} components")
    raw = np.zeros(domain.coeff_shape, dtype=np.complex128)
    raw[(slice(None),) + index] = amp
    raw[(slice(None),) + mirror] = np.conj(amp)
    return leray_project(raw, domain)


def random_field(
    domain: TorusDomain,
    rng: np.random.Generator,
    h_norm: float = 1.0,
    cutoff: Optional[float] = None,
    slope: float = -2.0,
) -> SpectralVelocityField:
    """
    Random divergence-free field with |u_k| ~ |k|^slope and random phases.

    Args:
        domain: target torus
        rng: numpy Generator; the field is a deterministic function of its state
        h_norm: H-norm of the result
        cutoff: keep modes with every |n_i| < cutoff (default: the 2/3-rule set)
        slope: spectral slope of the coefficient envelope

    Returns:
        SpectralVelocityField: rescaled to the requested H-norm
    """
    if h_norm < 0:
        raise ValueError(f"h_norm must be nonnegative, got {h_norm}")
    if cutoff is None:
        keep = domain.dealias_mask
    else:
        keep = np.all(np.abs(domain.integer_wavenumbers) < cutoff, axis=0)
    noise = rng.standard_normal(domain.coeff_shape)
    raw = transform_to_spectral(noise, domain)
    k_mag = np.sqrt(domain.k_squared)
    active = keep & (k_mag > 0)
    envelope = np.zeros_like(k_mag)
    envelope[active] = k_mag[active] ** slope
    field = leray_project(raw * envelope, domain)
    current = norms(field).h_norm
    if current == 0.0:
        return field
    return field * (h_norm / current)
