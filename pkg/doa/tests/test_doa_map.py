import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from doa.exceptions import ConfigError
from doa.utils.doa_map import (
    HistogramSmoother,
    PeakParams,
    SphericalHistogram,
    build_histogram,
    local_maxima,
    pick_peaks,
    smooth,
    write_histogram_csv,
    write_histogram_pgm,
)
from doa.utils.evaluation import combined_error
from doa.utils.geometry import Direction, unit_vectors
from doa.utils.sspiv import PivField


def votes_at(azimuths, inclinations, weights=None):
    directions = unit_vectors(np.asarray(azimuths, dtype=float), np.asarray(inclinations, dtype=float))
    directions = directions.reshape(-1, 3)
    n = directions.shape[0]
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    return PivField(np.arange(n), np.zeros(n, dtype=int), directions, weights, np.zeros(n), np.zeros(n))


def histogram_with(cells):
    grid = np.zeros((180, 90))
    for (a, i), height in cells.items():
        grid[a, i] = height
    return SphericalHistogram(grid, len(cells))


class HistogramTests(SimpleTestCase):
    def test_mass_conservation(self):
        rng = np.random.default_rng(0)
        v = rng.standard_normal((500, 3))
        v /= np.linalg.norm(v, axis=1)[:, None]
        votes = PivField(np.arange(500), np.zeros(500, dtype=int), v, np.ones(500), np.zeros(500), np.zeros(500))
        histogram = build_histogram(votes)
        self.assertEqual(histogram.grid.shape, (180, 90))
        self.assertAlmostEqual(histogram.grid.sum(), 500.0)
        self.assertEqual(histogram.total_votes, 500)

    def test_binning(self):
        histogram = build_histogram(votes_at([1.0, 359.0], [89.0, 179.0]))
        self.assertEqual(histogram.grid[0, 44], 1.0)
        self.assertEqual(histogram.grid[179, 89], 1.0)

    def test_weights_are_added(self):
        histogram = build_histogram(votes_at([1.0, 1.5], [89.0, 89.5], weights=[0.25, 0.5]))
        self.assertAlmostEqual(histogram.grid[0, 44], 0.75)

    def test_uniform_votes_follow_cell_solid_angle(self):
        rng = np.random.default_rng(5)
        n = 1_000_000
        v = rng.standard_normal((n, 3))
        v /= np.linalg.norm(v, axis=1)[:, None]
        votes = PivField(np.arange(n), np.zeros(n, dtype=int), v, np.ones(n), np.zeros(n), np.zeros(n))
        histogram = build_histogram(votes)

        # a 2-degree row holds the share sin(1 deg) * sin(center) of the sphere
        rows = np.arange(15, 75)
        expected = n * np.sin(np.radians(1.0)) * np.sin(np.radians(histogram.incl_centers[rows]))
        np.testing.assert_allclose(histogram.grid[:, rows].sum(axis=0), expected, rtol=0.05)
        self.assertLess(histogram.grid[:, 0].sum(), histogram.grid[:, 44].sum() / 20)

    def test_bin_widths_must_divide_the_sphere(self):
        with self.assertRaises(ConfigError):
            build_histogram(votes_at([0.0], [90.0]), az_bin_deg=7.0)


class SmoothingTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(1)
        self.raw = SphericalHistogram(rng.poisson(2.0, (180, 90)).astype(float), 1)
        self.smoother = HistogramSmoother(4.0)

    def test_bounded_by_input_range(self):
        out = self.smoother.smooth(self.raw)
        self.assertTrue(out.smoothed)
        self.assertLessEqual(out.grid.max(), self.raw.grid.max() + 1e-12)
        self.assertGreaterEqual(out.grid.min(), self.raw.grid.min() - 1e-12)

    def test_constant_grid_is_unchanged(self):
        out = self.smoother.smooth(SphericalHistogram(np.full((180, 90), 3.0)))
        np.testing.assert_allclose(out.grid, 3.0, atol=1e-12)

    def test_azimuth_shift_equivariance(self):
        shifted = SphericalHistogram(np.roll(self.raw.grid, 17, axis=0))
        np.testing.assert_allclose(
            self.smoother.smooth(shifted).grid,
            np.roll(self.smoother.smooth(self.raw).grid, 17, axis=0),
            atol=1e-12,
        )

    def test_kernel_follows_great_circle_distance(self):
        out = smooth(histogram_with({(0, 44): 1.0}), 4.0)
        distance = combined_error(Direction(1, 89), Direction(5, 89))
        self.assertAlmostEqual(out.grid[2, 44] / out.grid[0, 44], np.exp(-distance ** 2 / 32.0), places=9)
        self.assertEqual(out.grid[30, 44], 0.0)

    def test_near_pole_spreads_over_all_azimuths(self):
        out = smooth(histogram_with({(3, 1): 1.0}), 4.0)
        self.assertTrue(np.all(out.grid[:, 0] > 0))
        self.assertTrue(np.all(np.isfinite(out.grid)))

    def test_vote_near_pole_keeps_its_cell(self):
        # a vote at inclination 2 degrees lands in row 1
        histogram = build_histogram(votes_at([37.0], [2.0]))
        out = self.smoother.smooth(histogram)
        self.assertEqual(np.unravel_index(np.argmax(out.grid), out.grid.shape), (18, 1))
        az_index, incl_index = local_maxima(out.grid)
        self.assertEqual(list(zip(az_index.tolist(), incl_index.tolist())), [(18, 1)])

    def test_polar_rows_keep_single_votes_in_place(self):
        for row in range(8):
            out = self.smoother.smooth(histogram_with({(18, row): 1.0}))
            self.assertEqual(np.unravel_index(np.argmax(out.grid), out.grid.shape), (18, row), row)
            south = self.smoother.smooth(histogram_with({(18, 89 - row): 1.0}))
            self.assertEqual(np.unravel_index(np.argmax(south.grid), south.grid.shape), (18, 89 - row), row)

    def test_shape_mismatch(self):
        with self.assertRaises(ConfigError):
            HistogramSmoother(4.0, az_bin_deg=4.0).smooth(self.raw)


class PeakTests(SimpleTestCase):
    BLOBS = {(10, 20): 100.0, (60, 45): 80.0, (120, 70): 60.0, (150, 30): 9.0}
    NOISE = {(30, 10): 5.0, (40, 60): 4.9, (80, 80): 4.8, (100, 5): 4.7, (130, 50): 4.6, (170, 85): 4.6}

    def test_beta_pruning(self):
        estimates = pick_peaks(histogram_with({**self.BLOBS, **self.NOISE}), PeakParams())
        self.assertEqual([e.peak_height for e in estimates], [100.0, 80.0, 60.0])
        self.assertEqual([e.rank for e in estimates], [1, 2, 3])
        self.assertEqual(estimates[0].direction, Direction(21, 41))

    def test_all_within_beta_keeps_everything(self):
        estimates = pick_peaks(histogram_with({(10, 20): 10.0, (60, 45): 8.0, (120, 70): 6.0}), PeakParams())
        self.assertEqual(len(estimates), 3)

    def test_single_candidate(self):
        self.assertEqual(len(pick_peaks(histogram_with({(10, 20): 1.0}), PeakParams())), 1)

    def test_single_source_mode(self):
        estimates = pick_peaks(histogram_with(self.BLOBS), PeakParams(single_source_mode=True))
        self.assertEqual(len(estimates), 1)
        self.assertEqual(estimates[0].peak_height, 100.0)

    def test_max_peaks_limits_candidates(self):
        estimates = pick_peaks(histogram_with({**self.BLOBS, **self.NOISE}), PeakParams(max_peaks=3))
        # none of the top three clears 2 x 60, so all three are kept
        self.assertEqual([e.peak_height for e in estimates], [100.0, 80.0, 60.0])

    def test_empty_histogram(self):
        self.assertEqual(pick_peaks(histogram_with({}), PeakParams()), [])

    def test_plateau_tie_break_prefers_lower_inclination(self):
        estimates = pick_peaks(histogram_with({(50, 40): 5.0, (50, 41): 5.0}), PeakParams())
        self.assertEqual(estimates[0].cell, (50, 40))
        self.assertEqual(estimates[1].cell, (50, 41))

    def test_azimuth_wraps_for_neighbors(self):
        grid = histogram_with({(179, 30): 3.0, (0, 30): 4.0}).grid
        az_index, incl_index = local_maxima(grid)
        self.assertEqual(list(zip(az_index.tolist(), incl_index.tolist())), [(0, 30)])

    def test_invalid_beta(self):
        with self.assertRaises(ConfigError):
            PeakParams(beta=1.0)


class OutputTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.raw = histogram_with({(10, 20): 4.0})
        self.smoothed = smooth(self.raw, 4.0)

    def test_pgm_marks_peaks(self):
        path = Path(self.tmp.name) / 'h.pgm'
        estimates = pick_peaks(self.smoothed, PeakParams())
        write_histogram_pgm(path, self.smoothed, estimates)
        data = path.read_bytes()
        header = b'P5\n180 90\n255\n'
        self.assertTrue(data.startswith(header))
        pixels = np.frombuffer(data[len(header):], dtype=np.uint8).reshape(90, 180)
        self.assertEqual(pixels[20, 10], 255)
        self.assertLessEqual(pixels[21, 10], 254)

    def test_csv_columns(self):
        path = Path(self.tmp.name) / 'h.csv'
        write_histogram_csv(path, self.raw, self.smoothed)
        frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), ['az_center', 'incl_center', 'raw', 'smoothed'])
        self.assertEqual(len(frame), 180 * 90)
        self.assertAlmostEqual(frame['raw'].sum(), 4.0)
