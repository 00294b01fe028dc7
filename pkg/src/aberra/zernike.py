"""Zernike modes: ANSI/Noll indexing, unit-RMS evaluation, wavefront synthesis.

Conventions fixed here and relied on everywhere else:

* Normalization is unit RMS over the unit disk (sqrt(n+1) for m = 0,
  sqrt(2(n+1)) otherwise), so an amplitude of ``a`` micrometers contributes a
  wavefront RMS of ``a`` micrometers.
* theta is measured counter-clockwise from the +x axis, with the pupil y axis
  pointing up. m > 0 modes use cos(m theta), m < 0 modes use sin(|m| theta).
* Radial orders are capped at n = 7 (single indices ANSI j <= 35, Noll
  j <= 36).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

MAX_RADIAL_ORDER = 7


class Scheme(str, Enum):
    """Single-index nomenclature for Zernike modes."""

    ANSI = "ansi"
    NOLL = "noll"


def _noll_table(n_max: int) -> dict[int, tuple[int, int]]:
    """Enumerate Noll's ordering: ascending n, then |m| ascending, with the
    sign of m chosen so that even j gets m >= 0 and odd j gets m < 0."""
    table = {}
    j = 1
    for n in range(n_max + 1):
        for m_abs in range(n % 2, n + 1, 2):
            if m_abs == 0:
                table[j] = (n, 0)
                j += 1
            else:
                sign = 1 if j % 2 == 0 else -1
                table[j] = (n, sign * m_abs)
                table[j + 1] = (n, -sign * m_abs)
                j += 2
    return table


_NOLL_NM = _noll_table(MAX_RADIAL_ORDER)
_NOLL_J = {nm: j for j, nm in _NOLL_NM.items()}


def _ansi_nm(j: int) -> tuple[int, int]:
    n = math.ceil((math.sqrt(9 + 8 * j) - 3) / 2)
    return n, 2 * j - n * (n + 2)


def _ansi_j(n: int, m: int) -> int:
    return (n * (n + 2) + m) // 2


@dataclass(frozen=True)
class ModeIndex:
    """A single Zernike mode, consistent under one indexing scheme.

    j is the scheme's single index, (n, m) the radial order and signed
    azimuthal frequency. Instances are only created through the factory
    functions below, which guarantee consistency.
    """

    scheme: Scheme
    j: int
    n: int
    m: int

    def __post_init__(self):
        if self.n < 0 or abs(self.m) > self.n or (self.n - abs(self.m)) % 2 != 0:
            raise ValidationError(f"invalid Zernike orders (n={self.n}, m={self.m})")
        if self.n > MAX_RADIAL_ORDER:
            raise ValidationError(
                f"radial order n={self.n} exceeds the supported cap n={MAX_RADIAL_ORDER}"
            )
        expected = _ansi_j(self.n, self.m) if self.scheme is Scheme.ANSI else _NOLL_J[(self.n, self.m)]
        if self.j != expected:
            raise ValidationError(
                f"index j={self.j} inconsistent with (n={self.n}, m={self.m}) "
                f"under {self.scheme.value}"
            )

    @property
    def nm(self) -> tuple[int, int]:
        return (self.n, self.m)

    def __str__(self):
        return f"{self.scheme.value}:{self.j}(n={self.n},m={self.m})"


def mode_from_single_index(scheme: Scheme | str, j: int) -> ModeIndex:
    """Resolve a single index to its (n, m) pair under the given scheme.

    Round-trips with single_index(). Raises for indices beyond the n = 7 cap
    (ANSI j > 35, Noll j > 36) and for invalid j (Noll starts at 1).
    """
    scheme = Scheme(scheme)
    if scheme is Scheme.ANSI:
        if j < 0:
            raise ValidationError(f"ANSI index must be >= 0, got {j}")
        n, m = _ansi_nm(j)
        if n > MAX_RADIAL_ORDER:
            raise ValidationError(f"ANSI index {j} requires n={n} > {MAX_RADIAL_ORDER}")
    else:
        if j < 1:
            raise ValidationError(f"Noll index must be >= 1, got {j}")
        if j not in _NOLL_NM:
            raise ValidationError(f"Noll index {j} exceeds the supported range (n <= {MAX_RADIAL_ORDER})")
        n, m = _NOLL_NM[j]
    return ModeIndex(scheme, j, n, m)


def mode_from_nm(scheme: Scheme | str, n: int, m: int) -> ModeIndex:
    """Build a mode from (n, m) under the given scheme."""
    scheme = Scheme(scheme)
    if n < 0 or abs(m) > n or (n - abs(m)) % 2 != 0:
        raise ValidationError(f"invalid Zernike orders (n={n}, m={m})")
    if n > MAX_RADIAL_ORDER:
        raise ValidationError(f"radial order n={n} exceeds the supported cap n={MAX_RADIAL_ORDER}")
    j = _ansi_j(n, m) if scheme is Scheme.ANSI else _NOLL_J[(n, m)]
    return ModeIndex(scheme, j, n, m)


def single_index(mode: ModeIndex) -> int:
    """Inverse of mode_from_single_index."""
    return mode.j


def nontrivial_modes(scheme: Scheme | str = Scheme.ANSI) -> tuple[ModeIndex, ...]:
    """The 11 modes with n <= 4 excluding piston, the two tilts, and defocus."""
    scheme = Scheme(scheme)
    modes = []
    for n in range(5):
        for m in range(-n, n + 1, 2):
            if (n, m) in [(0, 0), (1, -1), (1, 1), (2, 0)]:
                continue
            modes.append(mode_from_nm(scheme, n, m))
    return tuple(sorted(modes, key=lambda md: md.j))


@lru_cache(maxsize=256)
def _radial_coefficients(n: int, m_abs: int) -> tuple[tuple[int, float], ...]:
    """(power, coefficient) terms of the radial polynomial R_n^|m|."""
    terms = []
    for s in range((n - m_abs) // 2 + 1):
        c = ((-1) ** s * math.factorial(n - s)
             / (math.factorial(s)
                * math.factorial((n + m_abs) // 2 - s)
                * math.factorial((n - m_abs) // 2 - s)))
        terms.append((n - 2 * s, float(c)))
    return tuple(terms)


def _norm_factor(n: int, m: int) -> float:
    return math.sqrt(n + 1.0) if m == 0 else math.sqrt(2.0 * (n + 1.0))


def evaluate_mode(mode: ModeIndex, rho, theta):
    """Evaluate the unit-RMS Zernike mode at polar pupil coordinates.

    rho must lie in [0, 1]; theta is in radians, counter-clockwise from +x.
    Accepts scalars or arrays (broadcast together).
    """
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(rho < 0.0) or np.any(rho > 1.0):
        raise ValidationError("rho outside the [0, 1] pupil domain")
    radial = np.zeros(np.broadcast(rho, theta).shape, dtype=float)
    for power, coeff in _radial_coefficients(mode.n, abs(mode.m)):
        radial += coeff * rho ** power
    if mode.m > 0:
        angular = np.cos(mode.m * theta)
    elif mode.m < 0:
        angular = np.sin(-mode.m * theta)
    else:
        angular = np.ones_like(theta)
    out = _norm_factor(mode.n, mode.m) * radial * angular
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class AmplitudeVector:
    """Ordered Zernike amplitudes in micrometers RMS wavefront error."""

    modes: tuple[ModeIndex, ...]
    amps: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "amps", tuple(float(a) for a in self.amps))
        if len(self.modes) != len(self.amps):
            raise ValidationError(
                f"{len(self.amps)} amplitudes for {len(self.modes)} modes"
            )
        seen = set()
        for md in self.modes:
            if md.nm in seen:
                raise ValidationError(f"duplicate mode (n={md.n}, m={md.m})")
            seen.add(md.nm)
        if not all(math.isfinite(a) for a in self.amps):
            raise ValidationError("amplitudes must be finite")

    def __len__(self):
        return len(self.modes)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.amps, dtype=float)

    @staticmethod
    def zeros(modes: Iterable[ModeIndex]) -> "AmplitudeVector":
        modes = tuple(modes)
        return AmplitudeVector(modes, (0.0,) * len(modes))

    @staticmethod
    def from_values(modes: Iterable[ModeIndex], values: Sequence[float]) -> "AmplitudeVector":
        return AmplitudeVector(tuple(modes), tuple(values))


@dataclass
class WavefrontMap:
    """Wavefront values (micrometers) over a square grid holding the unit disk.

    values are finite inside the mask and exactly 0 outside it.
    """

    values: np.ndarray
    mask: np.ndarray
    size: int


def unit_disk_grid(size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixel-center (rho, theta, mask) arrays on a size x size grid over [-1, 1]^2."""
    c = (np.arange(size) + 0.5) * (2.0 / size) - 1.0
    x, y = np.meshgrid(c, c)
    rho = np.hypot(x, y)
    theta = np.arctan2(y, x)
    return rho, theta, rho <= 1.0


def wavefront(amplitudes: AmplitudeVector, size: int) -> WavefrontMap:
    """Synthesize the wavefront map sum_k amps[k] * Z_k on a centered disk grid.

    Exactly linear in the amplitude vector.
    """
    if len(amplitudes) == 0:
        raise ValidationError("amplitude vector has no modes")
    if size < 16:
        raise ValidationError(f"wavefront size must be >= 16, got {size}")
    rho, theta, mask = unit_disk_grid(size)
    values = np.zeros_like(rho)
    rho_in = rho[mask]
    theta_in = theta[mask]
    acc = np.zeros_like(rho_in)
    for mode, amp in zip(amplitudes.modes, amplitudes.amps):
        if amp != 0.0:
            acc += amp * evaluate_mode(mode, rho_in, theta_in)
    values[mask] = acc
    return WavefrontMap(values=values, mask=mask, size=size)
