import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from doa.exceptions import ConfigError, DoaIOError
from doa.utils.geometry import Direction, vectors_to_angles

logger = logging.getLogger(__name__)

KERNEL_SUPPORT_SIGMAS = 3.0


def grid_shape(az_bin_deg, incl_bin_deg):
    n_az = int(round(360.0 / az_bin_deg))
    n_incl = int(round(180.0 / incl_bin_deg))
    if n_az < 1 or n_incl < 1 or not np.isclose(n_az * az_bin_deg, 360.0) \
            or not np.isclose(n_incl * incl_bin_deg, 180.0):
        raise ConfigError(f"Bin widths {az_bin_deg}/{incl_bin_deg} must divide 360/180")
    return n_az, n_incl


@dataclass(frozen=True)
class SphericalHistogram:
    """Vote counts on a regular azimuth × inclination grid, indexed [az, incl]."""
    grid: np.ndarray
    total_votes: int = 0
    az_bin_deg: float = 2.0
    incl_bin_deg: float = 2.0
    smoothed: bool = False

    @property
    def az_centers(self):
        return (np.arange(self.grid.shape[0]) + 0.5) * self.az_bin_deg

    @property
    def incl_centers(self):
        return (np.arange(self.grid.shape[1]) + 0.5) * self.incl_bin_deg

    def cell_direction(self, az_index, incl_index):
        return Direction(self.az_centers[az_index], self.incl_centers[incl_index])

    def scaled(self, factor):
        return SphericalHistogram(self.grid * factor, self.total_votes,
                                  self.az_bin_deg, self.incl_bin_deg, self.smoothed)


@dataclass(frozen=True)
class PeakParams:
    max_peaks: int = 10
    beta: float = 2.0
    kernel_sigma: float = 4.0
    single_source_mode: bool = False

    def __post_init__(self):
        if self.max_peaks < 1:
            raise ConfigError(f"max_peaks must be >= 1, got {self.max_peaks}")
        if not self.beta > 1:
            raise ConfigError(f"beta must be > 1, got {self.beta}")
        if not self.kernel_sigma > 0:
            raise ConfigError(f"Kernel sigma must be > 0, got {self.kernel_sigma}")


@dataclass(frozen=True)
class DoaEstimate:
    direction: Direction
    peak_height: float
    rank: int
    cell: tuple = field(default=(0, 0), compare=False)


def build_histogram(votes, az_bin_deg=2.0, incl_bin_deg=2.0):
    """Bin each vote's direction by floor(az / width), floor(incl / width), adding its weight."""
    n_az, n_incl = grid_shape(az_bin_deg, incl_bin_deg)
    grid = np.zeros((n_az, n_incl))
    if len(votes):
        azimuth, inclination = vectors_to_angles(votes.directions)
        az_index = np.floor(azimuth / az_bin_deg).astype(int) % n_az
        incl_index = np.minimum(np.floor(inclination / incl_bin_deg).astype(int), n_incl - 1)
        np.add.at(grid, (az_index, incl_index), votes.weights)
    return SphericalHistogram(grid, len(votes), az_bin_deg, incl_bin_deg)


class HistogramSmoother:
    """
    Gaussian smoothing in great-circle angle between bin centers.

    Each output cell is the kernel-weighted average of all cells within
    3 sigma, each input cell also weighted by its solid angle (sin of its
    center inclination) so the shrinking cells near the poles do not pull
    mass away from the cell a vote landed in. Because the grid is regular in
    azimuth the weights depend only on (output row, input row, azimuth
    offset), so one table per output row is built here and reused for every
    histogram.
    """

    def __init__(self, sigma_deg=4.0, az_bin_deg=2.0, incl_bin_deg=2.0):
        if not sigma_deg > 0:
            raise ConfigError(f"Kernel sigma must be > 0, got {sigma_deg}")
        self.sigma_deg = sigma_deg
        self.az_bin_deg = az_bin_deg
        self.incl_bin_deg = incl_bin_deg
        self.n_az, self.n_incl = grid_shape(az_bin_deg, incl_bin_deg)

        incl = np.radians((np.arange(self.n_incl) + 0.5) * incl_bin_deg)
        offsets = np.arange(self.n_az)
        cos_offset = np.cos(np.radians(offsets * az_bin_deg))
        cos_angle = (np.cos(incl)[:, None, None] * np.cos(incl)[None, :, None]
                     + np.sin(incl)[:, None, None] * np.sin(incl)[None, :, None] * cos_offset[None, None, :])
        angle = np.degrees(np.arccos(np.clip(cos_angle, -1.0, 1.0)))
        weights = np.exp(-angle ** 2 / (2 * sigma_deg ** 2))
        weights[angle > KERNEL_SUPPORT_SIGMAS * sigma_deg + 1e-9] = 0.0

        solid_angle = np.sin(incl)
        self.rows = []
        for i in range(self.n_incl):
            in_rows, az_offsets = np.nonzero(weights[i])
            w = weights[i, in_rows, az_offsets] * solid_angle[in_rows]
            self.rows.append((in_rows, az_offsets, w / w.sum()))

    def smooth(self, histogram):
        grid = histogram.grid
        if grid.shape != (self.n_az, self.n_incl):
            raise ConfigError(f"Histogram shape {grid.shape} does not match smoother "
                              f"({self.n_az}, {self.n_incl})")
        out = np.empty_like(grid, dtype=float)
        az = np.arange(self.n_az)[:, None]
        for i, (in_rows, az_offsets, w) in enumerate(self.rows):
            gathered = grid[(az + az_offsets[None, :]) % self.n_az, in_rows[None, :]]
            out[:, i] = gathered @ w
        return SphericalHistogram(out, histogram.total_votes, histogram.az_bin_deg,
                                  histogram.incl_bin_deg, smoothed=True)


def smooth(histogram, sigma_deg=4.0):
    return HistogramSmoother(sigma_deg, histogram.az_bin_deg, histogram.incl_bin_deg).smooth(histogram)


def local_maxima(grid):
    """
    Cells >= all 8 neighbors (azimuth wraps, pole rows use the neighbors
    they have) with positive height, as (az_index, incl_index) arrays.
    """
    padded = np.pad(grid, ((0, 0), (1, 1)), constant_values=-np.inf)
    is_max = grid > 0
    for d_az in (-1, 0, 1):
        shifted = np.roll(padded, d_az, axis=0)
        for d_incl in (-1, 0, 1):
            if d_az == 0 and d_incl == 0:
                continue
            is_max &= grid >= shifted[:, 1 + d_incl:1 + d_incl + grid.shape[1]]
    return np.nonzero(is_max)


def pick_peaks(histogram, params):
    """
    Top max_peaks local maxima, pruned to those higher than beta times the
    lowest of them. If none pass (all within a factor beta of each other) or
    fewer than two maxima exist, every candidate is kept.
    """
    grid = histogram.grid
    az_index, incl_index = local_maxima(grid)
    if az_index.size == 0:
        logger.warning("Histogram has no peaks")
        return []

    heights = grid[az_index, incl_index]
    order = np.lexsort((az_index, incl_index, -heights))[:params.max_peaks]
    candidates = [(int(az_index[k]), int(incl_index[k]), float(heights[k])) for k in order]

    if params.single_source_mode:
        kept = candidates[:1]
    elif len(candidates) < 2:
        kept = candidates
    else:
        threshold = params.beta * candidates[-1][2]
        kept = [c for c in candidates if c[2] > threshold]
        if not kept:
            logger.debug(f"All {len(candidates)} peaks within a factor {params.beta}; keeping all")
            kept = candidates

    logger.info(f"Picked {len(kept)} of {len(candidates)} candidate peaks")
    return [
        DoaEstimate(histogram.cell_direction(a, i), height, rank, cell=(a, i))
        for rank, (a, i, height) in enumerate(kept, start=1)
    ]


def histogram_frame(raw, smoothed):
    az, incl = np.meshgrid(raw.az_centers, raw.incl_centers, indexing='ij')
    return pd.DataFrame({
        'az_center': az.ravel(),
        'incl_center': incl.ravel(),
        'raw': raw.grid.ravel(),
        'smoothed': smoothed.grid.ravel(),
    })


def write_histogram_csv(path, raw, smoothed):
    try:
        histogram_frame(raw, smoothed).to_csv(path, index=False, float_format='%.9g')
    except OSError as e:
        raise DoaIOError(f"Could not write histogram to {path}: {e}")


def write_histogram_pgm(path, histogram, estimates=()):
    """
    Binary PGM, one row per inclination bin and one column per azimuth bin;
    picked peaks are drawn at full intensity.
    """
    grid = histogram.grid.T
    peak = grid.max()
    image = np.zeros(grid.shape, dtype=np.uint8) if peak <= 0 else \
        np.round(grid / peak * 254).astype(np.uint8)
    for estimate in estimates:
        az_index, incl_index = estimate.cell
        image[incl_index, az_index] = 255
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode('ascii')
    try:
        with open(path, 'wb') as handle:
            handle.write(header + image.tobytes())
    except OSError as e:
        raise DoaIOError(f"Could not write histogram image to {path}: {e}")
