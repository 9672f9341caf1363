import logging
from dataclasses import dataclass

import numpy as np
from scipy import special

from doa.exceptions import ChannelMismatchError, GeometryError, SignalError
from doa.utils.geometry import MAX_CONDITION_NUMBER, Baffle, ShIndexing

logger = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0
MAX_GAIN_DB = 20.0


@dataclass(frozen=True)
class ShCoefficients:
    """SH-domain STFT coefficients, shape ((N+1)², frames, bins)."""
    coeffs: np.ndarray
    order: int
    frame_times: np.ndarray
    bin_freqs: np.ndarray
    hop_seconds: float
    bin_hz: float

    @property
    def frame_count(self):
        return self.coeffs.shape[1]

    def with_coeffs(self, coeffs):
        return ShCoefficients(coeffs, self.order, self.frame_times, self.bin_freqs,
                              self.hop_seconds, self.bin_hz)


class ShEncoder:
    """
    Spherical Fourier transform for one array geometry.

    The pseudo-inverse of the sensor SH matrix is computed once here and
    reused for every TF bin.
    """

    def __init__(self, geometry, order):
        geometry.validate_for_order(order)
        self.geometry = geometry
        self.order = order
        self.basis = geometry.sh_basis(order)
        self.condition_number = np.linalg.cond(self.basis)
        if not np.isfinite(self.condition_number) or self.condition_number > MAX_CONDITION_NUMBER:
            raise GeometryError(
                f"Encoding matrix for '{geometry.label}' is rank deficient "
                f"(condition number {self.condition_number:.3g})"
            )
        self.pinv = np.linalg.pinv(self.basis)
        logger.debug(f"Encoder for '{geometry.label}' order {order}: "
                     f"condition number {self.condition_number:.3f}")

    def encode(self, tf):
        if tf.coeffs.shape[0] != self.geometry.sensor_count:
            raise ChannelMismatchError(
                f"Recording has {tf.coeffs.shape[0]} channels but geometry "
                f"'{self.geometry.label}' has {self.geometry.sensor_count} sensors"
            )
        coeffs = np.tensordot(self.pinv, tf.coeffs, axes=(1, 0))
        return ShCoefficients(coeffs, self.order, tf.frame_times, tf.bin_freqs,
                              tf.hop_seconds, tf.bin_hz)


def encode(tf, geometry, order):
    """Uncompensated SH coefficients: pinv(Y) · microphone vector per TF bin."""
    return ShEncoder(geometry, order).encode(tf)


def spherical_hankel2(n, x, derivative=False):
    return (special.spherical_jn(n, x, derivative=derivative)
            - 1j * special.spherical_yn(n, x, derivative=derivative))


def mode_strength(n, k, r, baffle=Baffle.RIGID):
    """
    Mode strength b_n(kr) of a unit plane wave on a sphere of radius r.

    Open sphere: 4π iⁿ j_n(kr). Rigid sphere:
    4π iⁿ [j_n − (j_n′ / h_n′) h_n] with h = h⁽²⁾, evaluated here through the
    Wronskian j_n h_n′ − j_n′ h_n = −i / x², i.e. 4π iⁿ⁻¹ / (x² h_n′(x)).
    The kr = 0 limits are 4π for n = 0 and 0 otherwise.
    """
    if n < 0:
        raise ValueError(f"Degree must be >= 0, got {n}")
    k = np.asarray(k, dtype=float)
    if np.any(k < 0) or not r > 0:
        raise ValueError("Mode strength needs k >= 0 and r > 0")
    x = np.atleast_1d(k * r)
    b = np.zeros(x.shape, dtype=complex)
    at_zero = x == 0
    b[at_zero] = 4 * np.pi if n == 0 else 0.0

    xs = x[~at_zero]
    if Baffle(baffle) is Baffle.OPEN:
        b[~at_zero] = 4 * np.pi * 1j ** n * special.spherical_jn(n, xs)
    else:
        b[~at_zero] = 4 * np.pi * 1j ** (n - 1) / (xs ** 2 * spherical_hankel2(n, xs, derivative=True))
    return b if k.ndim else b[0]


@dataclass(frozen=True)
class ModeStrengthProfile:
    """b_n(k r) per degree and bin, with the gain cap used when inverting."""
    values: np.ndarray  # (N+1, bins)
    radius: float = 0.042
    speed_of_sound: float = SPEED_OF_SOUND
    max_gain_db: float = MAX_GAIN_DB

    @classmethod
    def for_bins(cls, bin_freqs, order, radius, baffle=Baffle.RIGID,
                 speed_of_sound=SPEED_OF_SOUND, max_gain_db=MAX_GAIN_DB):
        k = 2 * np.pi * np.asarray(bin_freqs, dtype=float) / speed_of_sound
        values = np.array([np.atleast_1d(mode_strength(n, k, radius, baffle)) for n in range(order + 1)])
        return cls(values, radius, speed_of_sound, max_gain_db)

    @classmethod
    def unity(cls, order, n_bins, max_gain_db=MAX_GAIN_DB):
        return cls(np.ones((order + 1, n_bins), dtype=complex), max_gain_db=max_gain_db)

    @property
    def floor(self):
        return 10.0 ** (-self.max_gain_db / 20.0)

    def multipliers(self):
        """
        1 / b_n with |b_n| floored so |gain| never exceeds the cap; the
        phase of b_n is always removed exactly.
        """
        magnitude = np.maximum(np.abs(self.values), self.floor)
        return np.exp(-1j * np.angle(self.values)) / magnitude


def compensate(sh, profile):
    """Divide every degree-n coefficient at each bin by the regularized b_n."""
    multipliers = profile.multipliers()
    if multipliers.shape[0] < sh.order + 1 or multipliers.shape[1] != sh.coeffs.shape[2]:
        raise SignalError(
            f"Mode-strength profile shape {multipliers.shape} does not match "
            f"order {sh.order} with {sh.coeffs.shape[2]} bins"
        )
    clamped = np.abs(profile.values[:sh.order + 1]) < profile.floor
    if clamped.any():
        logger.debug(f"Gain cap of {profile.max_gain_db} dB active on {int(clamped.sum())} (degree, bin) pairs")
    degrees = ShIndexing(sh.order).degrees
    return sh.with_coeffs(sh.coeffs * multipliers[degrees][:, None, :])
