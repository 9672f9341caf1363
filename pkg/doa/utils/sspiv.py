import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from doa.exceptions import ConfigError, DoaIOError, SubspaceError

logger = logging.getLogger(__name__)

# Region centers per worker task; fixed so output never depends on thread count
CHUNK_FRAMES = 256
MIN_DIPOLE_NORM = 1e-12
# Regions whose principal eigenvalue holds less of the trace than this are no-signal
MIN_EIGEN_RATIO = 0.6

# Degree-1 complex SH coefficients (m = -1, 0, 1) to Cartesian dipole (x, y, z).
# A plane wave from Ω has coefficients ∝ conj(Y_1^m(Ω)); this maps them to
# sqrt(3/4π) · (sin θ cos φ, sin θ sin φ, cos θ).
DIPOLE_TRANSFORM = np.array([
    [1 / np.sqrt(2), 0, -1 / np.sqrt(2)],
    [-1j / np.sqrt(2), 0, -1j / np.sqrt(2)],
    [0, 1, 0],
], dtype=complex)


@dataclass(frozen=True)
class SmoothingParams:
    time_span_ms: float = 16.0
    freq_span_hz: float = 350.0
    f_min_hz: float = 800.0
    f_max_hz: float = 3500.0
    min_band_bins: int = 2
    eigen_weighting: bool = False
    min_eigen_ratio: float = MIN_EIGEN_RATIO

    def __post_init__(self):
        if not self.f_min_hz < self.f_max_hz:
            raise ConfigError(f"f_min ({self.f_min_hz}) must be below f_max ({self.f_max_hz})")
        if not (self.time_span_ms > 0 and self.freq_span_hz > 0):
            raise ConfigError("Covariance spans must be > 0")
        if self.min_band_bins < 1:
            raise ConfigError("min_band_bins must be >= 1")
        if not 0.0 <= self.min_eigen_ratio < 1.0:
            raise ConfigError(f"min_eigen_ratio must be in [0, 1), got {self.min_eigen_ratio}")


def region_shape(hop_seconds, bin_hz, params):
    """(L frames, K bins) per covariance region; (16, 2) at the defaults for 48 kHz."""
    frames = max(1, int(round(params.time_span_ms / (hop_seconds * 1000.0))))
    bins = max(params.min_band_bins, int(round(params.freq_span_hz / bin_hz)))
    return frames, bins


def band_layout(bin_freqs, bin_hz, params):
    """
    Non-overlapping groups of K consecutive bin positions tiling
    [f_min, f_max]; an incomplete trailing group is dropped.
    """
    _, bins_per_band = region_shape(1.0, bin_hz, params)
    inside = np.flatnonzero((bin_freqs >= params.f_min_hz) & (bin_freqs <= params.f_max_hz))
    n_bands = inside.size // bins_per_band
    return [inside[b * bins_per_band:(b + 1) * bins_per_band] for b in range(n_bands)]


@dataclass(frozen=True)
class ShCovariance:
    matrix: np.ndarray
    frame: int
    band: int

    def is_hermitian(self, tol=1e-12):
        scale = max(np.abs(self.matrix).max(), 1.0)
        return np.allclose(self.matrix, self.matrix.conj().T, rtol=0, atol=tol * scale)

    def is_psd(self, tol=1e-9):
        eigenvalues = np.linalg.eigvalsh(self.matrix)
        return eigenvalues.min() >= -tol * max(np.real(np.trace(self.matrix)), 0.0)


def covariance(sh, frame, band, params):
    """
    Time/frequency-smoothed SH covariance for the region centered at frame
    over the given band. Returns None when fewer than L frames surround the
    center (the region is skipped).
    """
    n_frames, n_bins = region_shape(sh.hop_seconds, sh.bin_hz, params)
    bands = band_layout(sh.bin_freqs, sh.bin_hz, params)
    if not 0 <= band < len(bands):
        raise ConfigError(f"Band {band} outside [f_min, f_max] ({len(bands)} bands)")
    start = frame - n_frames // 2
    if start < 0 or start + n_frames > sh.frame_count:
        return None
    block = sh.coeffs[:, start:start + n_frames, bands[band]].reshape(sh.coeffs.shape[0], -1)
    matrix = block @ block.conj().T / (n_frames * n_bins)
    return ShCovariance(matrix, frame, band)


def _normalize_phase(vectors):
    """Rotate each eigenvector so its zeroth-order component is real and >= 0."""
    leading = vectors[..., 0]
    magnitude = np.abs(leading)
    phase = np.where(magnitude > 0, np.conj(leading) / np.where(magnitude > 0, magnitude, 1.0), 1.0)
    return vectors * phase[..., None]


def principal_subspace(R):
    """Principal unit eigenvector and λ₁ / trace of a covariance matrix."""
    matrix = R.matrix if isinstance(R, ShCovariance) else np.asarray(R)
    if not np.all(np.isfinite(matrix)):
        raise SubspaceError("Covariance matrix has non-finite entries")
    eigenvalues, eigenvectors = np.linalg.eigh(matrix)
    trace = float(np.real(np.trace(matrix)))
    ratio = float(eigenvalues[-1] / trace) if trace > 0 else 0.0
    return _normalize_phase(eigenvectors[:, -1]), ratio


def piv_from_vector(u):
    """
    Pseudointensity of an SH vector: Re{conj(u₀₀) · T · u₁}, normalized.
    Returns None when there is no dipole energy.
    """
    u = np.asarray(u)
    intensity = np.real(np.conj(u[0]) * (DIPOLE_TRANSFORM @ u[1:4]))
    norm = np.linalg.norm(intensity)
    if norm < MIN_DIPOLE_NORM:
        return None
    return intensity / norm


@dataclass(frozen=True)
class PivField:
    """One vote per (frame, band) region, ordered by frame then band."""
    frames: np.ndarray
    bands: np.ndarray
    directions: np.ndarray  # (votes, 3) unit vectors
    weights: np.ndarray
    frame_times: np.ndarray  # seconds, per vote
    band_centers: np.ndarray  # Hz, per vote

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros((0, 3)),
                   np.zeros(0), np.zeros(0), np.zeros(0))

    def __len__(self):
        return self.frames.size

    def to_frame(self):
        return pd.DataFrame({
            'frame_time_s': self.frame_times,
            'band_center_hz': self.band_centers,
            'x': self.directions[:, 0],
            'y': self.directions[:, 1],
            'z': self.directions[:, 2],
            'weight': self.weights,
        })

    def write_csv(self, path):
        try:
            self.to_frame().to_csv(path, index=False, float_format='%.9f')
        except OSError as e:
            raise DoaIOError(f"Could not write votes to {path}: {e}")


def _field_chunk(coeffs, bands, n_frames, centers, params):
    """Votes for a contiguous block of region centers."""
    start = centers[0] - n_frames // 2
    stop = centers[-1] - n_frames // 2 + n_frames
    n_sh = coeffs.shape[0]
    block = coeffs[:, start:stop][:, :, np.concatenate(bands)]
    block = block.reshape(n_sh, stop - start, len(bands), -1)

    # Per-frame band outer products, then summed over L frames
    outer = np.einsum('qfbk,pfbk->fbqp', block, block.conj())
    summed = sliding_window_view(outer, n_frames, axis=0).sum(axis=-1)
    matrices = summed / (n_frames * block.shape[-1])

    if not np.all(np.isfinite(matrices)):
        raise SubspaceError("Covariance matrices have non-finite entries")
    eigenvalues, eigenvectors = np.linalg.eigh(matrices)
    vectors = _normalize_phase(eigenvectors[..., -1])
    traces = np.real(np.trace(matrices, axis1=-2, axis2=-1))
    ratios = np.divide(eigenvalues[..., -1], traces, out=np.zeros_like(traces), where=traces > 0)

    intensity = np.real(np.conj(vectors[..., :1]) * (vectors[..., 1:4] @ DIPOLE_TRANSFORM.T))
    norms = np.linalg.norm(intensity, axis=-1)
    keep = (norms >= MIN_DIPOLE_NORM) & (traces > 0) & (ratios >= params.min_eigen_ratio)

    frame_index, band_index = np.nonzero(keep)
    directions = intensity[keep] / norms[keep][:, None]
    weights = ratios[keep] if params.eigen_weighting else np.ones(directions.shape[0])
    return centers[frame_index], band_index, directions, weights


def compute_sspiv_field(sh, params, workers=1):
    """
    SSPIV for every region: covariance, principal eigenvector, pseudointensity.

    Regions slide one frame at a time and tile [f_min, f_max] in K-bin bands.
    Regions without enough surrounding frames, without dipole energy, or
    whose principal eigenvalue carries less than min_eigen_ratio of the
    covariance trace (no dominant direction: sensor noise alone, or several
    sources at similar power) cast no vote. Blocks of regions run on a thread pool and are merged in frame
    order, so the result does not depend on the number of workers.
    """
    n_frames, n_bins = region_shape(sh.hop_seconds, sh.bin_hz, params)
    bands = band_layout(sh.bin_freqs, sh.bin_hz, params)
    first, last = n_frames // 2, sh.frame_count - n_frames + n_frames // 2
    if not bands or last < first:
        logger.warning(f"No complete covariance regions: {sh.frame_count} frames, {len(bands)} bands")
        return PivField.empty()

    centers = np.arange(first, last + 1)
    chunks = [centers[i:i + CHUNK_FRAMES] for i in range(0, centers.size, CHUNK_FRAMES)]
    logger.info(f"SSPIV: {centers.size} usable frames x {len(bands)} bands "
                f"(L={n_frames}, K={n_bins}), {max(1, workers)} workers")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda c: _field_chunk(sh.coeffs, bands, n_frames, c, params), chunks))

    frames = np.concatenate([r[0] for r in results])
    band_ids = np.concatenate([r[1] for r in results])
    directions = np.concatenate([r[2] for r in results]).reshape(-1, 3)
    weights = np.concatenate([r[3] for r in results])
    band_centers = np.array([sh.bin_freqs[b].mean() for b in bands])

    skipped = centers.size * len(bands) - frames.size
    if skipped:
        logger.debug(f"{skipped} regions without dipole energy or a dominant direction cast no vote")
    logger.info(f"SSPIV field: {frames.size} votes")
    return PivField(frames, band_ids, directions, weights,
                    sh.frame_times[frames] if frames.size else np.zeros(0),
                    band_centers[band_ids] if frames.size else np.zeros(0))
