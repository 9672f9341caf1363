import json
import logging
from dataclasses import dataclass
from enum import Enum
from math import factorial
from pathlib import Path

import numpy as np
from scipy import special

from doa.exceptions import DoaIOError, GeometryError

logger = logging.getLogger(__name__)

DEFAULT_GEOMETRY_PATH = Path(__file__).resolve().parent.parent / 'data' / 'em32.json'

# Encoding matrices above this condition number are treated as rank deficient
MAX_CONDITION_NUMBER = 1e6


class Baffle(str, Enum):
    RIGID = 'rigid'
    OPEN = 'open'


@dataclass(frozen=True)
class Direction:
    """
    A direction on the unit sphere in degrees.

    Inclination is measured from the +z pole (0..180). Azimuth wraps modulo
    360; inclination outside [0, 180] is rejected, never clamped.
    """
    azimuth: float
    inclination: float

    def __post_init__(self):
        azimuth = float(self.azimuth)
        inclination = float(self.inclination)
        if not np.isfinite(azimuth) or not np.isfinite(inclination):
            raise GeometryError(f"Non-finite direction ({self.azimuth}, {self.inclination})")
        if inclination < 0.0 or inclination > 180.0:
            raise GeometryError(f"Inclination {inclination} outside [0, 180]")
        azimuth = azimuth % 360.0
        if azimuth >= 360.0:  # -tiny % 360 rounds up to 360
            azimuth = 0.0
        object.__setattr__(self, 'azimuth', azimuth)
        object.__setattr__(self, 'inclination', inclination)

    @classmethod
    def from_elevation(cls, azimuth, elevation):
        return cls(azimuth, 90.0 - float(elevation))

    @property
    def elevation(self):
        return 90.0 - self.inclination

    def __str__(self):
        return f"(az {self.azimuth:.1f}, incl {self.inclination:.1f})"


def unit_vector(direction):
    """Cartesian unit vector (sin θ cos φ, sin θ sin φ, cos θ) for a Direction."""
    theta = np.radians(direction.inclination)
    phi = np.radians(direction.azimuth)
    return np.array([
        np.sin(theta) * np.cos(phi),
        np.sin(theta) * np.sin(phi),
        np.cos(theta),
    ])


def unit_vectors(azimuth_deg, inclination_deg):
    """Vectorized unit_vector over arrays of angles; returns shape (..., 3)."""
    theta = np.radians(np.asarray(inclination_deg, dtype=float))
    phi = np.radians(np.asarray(azimuth_deg, dtype=float))
    return np.stack([
        np.sin(theta) * np.cos(phi),
        np.sin(theta) * np.sin(phi),
        np.cos(theta),
    ], axis=-1)


def vectors_to_angles(vectors):
    """
    Convert (..., 3) vectors to (azimuth, inclination) arrays in degrees.
    Vectors need not be normalized; azimuth is in [0, 360).
    """
    vectors = np.asarray(vectors, dtype=float)
    norms = np.linalg.norm(vectors, axis=-1)
    z = np.clip(vectors[..., 2] / norms, -1.0, 1.0)
    inclination = np.degrees(np.arccos(z))
    azimuth = np.degrees(np.arctan2(vectors[..., 1], vectors[..., 0])) % 360.0
    azimuth = np.where(azimuth >= 360.0, 0.0, azimuth)
    return azimuth, inclination


def direction_from_vector(vector):
    azimuth, inclination = vectors_to_angles(vector)
    return Direction(float(azimuth), float(inclination))


class ShIndexing:
    """Flat indexing of complex SH channels: index = n² + n + m."""

    def __init__(self, order):
        if order < 0:
            raise GeometryError(f"SH order must be >= 0, got {order}")
        self.order = int(order)
        self.channel_count = (self.order + 1) ** 2
        self.degrees = np.array([n for n in range(self.order + 1) for _ in range(2 * n + 1)])
        self.orders = np.array([m for n in range(self.order + 1) for m in range(-n, n + 1)])

    def index(self, n, m):
        if not (0 <= n <= self.order and -n <= m <= n):
            raise IndexError(f"(n={n}, m={m}) outside order {self.order}")
        return n * n + n + m

    def degree_order(self, index):
        return int(self.degrees[index]), int(self.orders[index])

    def __len__(self):
        return self.channel_count


def sh_matrix(azimuth_rad, inclination_rad, order):
    """
    Complex orthonormal spherical harmonics with Condon-Shortley phase.

    Returns an array of shape (len(directions), (order+1)²) whose column
    n² + n + m holds Y_n^m evaluated at each direction.
    """
    azimuth_rad = np.atleast_1d(np.asarray(azimuth_rad, dtype=float))
    inclination_rad = np.atleast_1d(np.asarray(inclination_rad, dtype=float))
    cos_theta = np.cos(inclination_rad)
    Y = np.zeros((azimuth_rad.size, (order + 1) ** 2), dtype=complex)

    for n in range(order + 1):
        for m in range(n + 1):
            norm = np.sqrt((2 * n + 1) / (4 * np.pi) * factorial(n - m) / factorial(n + m))
            # lpmv already includes the Condon-Shortley phase
            positive = norm * special.lpmv(m, n, cos_theta) * np.exp(1j * m * azimuth_rad)
            Y[:, n * n + n + m] = positive
            if m > 0:
                Y[:, n * n + n - m] = (-1) ** m * np.conj(positive)
    return Y


def evaluate_sh_basis(directions, order):
    """SH basis matrix [directions × (N+1)²] for a list of Direction."""
    if order < 0:
        raise GeometryError(f"SH order must be >= 0, got {order}")
    azimuth = np.radians([d.azimuth for d in directions])
    inclination = np.radians([d.inclination for d in directions])
    return sh_matrix(azimuth, inclination, order)


@dataclass(frozen=True)
class ArrayGeometry:
    sensors: tuple
    radius: float
    baffle: Baffle = Baffle.RIGID
    label: str = ''

    def __post_init__(self):
        if not self.sensors:
            raise GeometryError("Geometry has no sensors")
        if not self.radius > 0:
            raise GeometryError(f"Radius must be > 0, got {self.radius}")
        object.__setattr__(self, 'sensors', tuple(self.sensors))
        object.__setattr__(self, 'baffle', Baffle(self.baffle))

        vectors = np.array([unit_vector(d) for d in self.sensors])
        separation = np.linalg.norm(vectors[:, None, :] - vectors[None, :, :], axis=-1)
        np.fill_diagonal(separation, np.inf)
        if np.any(separation < 1e-9):
            first, second = np.argwhere(separation < 1e-9)[0]
            raise GeometryError(f"Duplicate sensor directions at indices {first} and {second}")

    @property
    def sensor_count(self):
        return len(self.sensors)

    def validate_for_order(self, order):
        required = (order + 1) ** 2
        if self.sensor_count < required:
            raise GeometryError(
                f"insufficient sensors: {self.sensor_count} sensors cannot support "
                f"SH order {order} ({required} required)"
            )

    def sh_basis(self, order):
        return evaluate_sh_basis(self.sensors, order)


def load_geometry(path=None, order=3):
    """
    Load an ArrayGeometry from a JSON file:
        {label, radius_m, baffle, sensors: [{az_deg, incl_deg}, ...]}
    """
    path = Path(path) if path else DEFAULT_GEOMETRY_PATH
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise DoaIOError(f"Geometry file not found: {path}")
    except OSError as e:
        raise DoaIOError(f"Could not read geometry file {path}: {e}")
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise GeometryError(f"Could not parse geometry file {path}: {e}")

    if not isinstance(raw, dict):
        raise GeometryError(f"Geometry file {path} must hold a JSON object")

    try:
        sensors = [Direction(s['az_deg'], s['incl_deg']) for s in raw['sensors']]
        geometry = ArrayGeometry(
            sensors=tuple(sensors),
            radius=float(raw['radius_m']),
            baffle=Baffle(raw.get('baffle', 'rigid')),
            label=str(raw.get('label', path.stem)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise GeometryError(f"Invalid geometry file {path}: {e}")

    geometry.validate_for_order(order)
    logger.info(f"Loaded geometry '{geometry.label}': {geometry.sensor_count} sensors, "
                f"radius {geometry.radius} m, {geometry.baffle.value} baffle")
    return geometry
