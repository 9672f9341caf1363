import tempfile
from itertools import permutations
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from doa.exceptions import DoaIOError
from doa.utils.evaluation import (
    MatchedPair,
    MetricsReport,
    azimuth_error,
    combined_error,
    format_table,
    match_sources,
    read_estimates_csv,
    read_truth_csv,
    report_frame,
    summarize,
)
from doa.utils.geometry import Direction


def random_directions(rng, n):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1)[:, None]
    return [Direction(np.degrees(np.arctan2(y, x)), np.degrees(np.arccos(z))) for x, y, z in v]


def pairs_from_rows(rows, first_id=1):
    return [MatchedPair(first_id + i, i, az, el, combined) for i, (az, el, combined) in enumerate(rows)]


class ErrorMetricTests(SimpleTestCase):
    def test_azimuth_error(self):
        self.assertEqual(azimuth_error(350, 10), 20)
        self.assertEqual(azimuth_error(42.5, 42.5), 0)
        self.assertEqual(azimuth_error(0, 180), 180)
        self.assertEqual(azimuth_error(-90, 270), 0)

    def test_combined_error(self):
        self.assertEqual(combined_error(Direction(10, 20), Direction(10, 20)), 0.0)
        self.assertAlmostEqual(combined_error(Direction(0, 90), Direction(90, 90)), 90.0)

    def test_combined_error_is_a_metric(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            a, b, c = random_directions(rng, 3)
            self.assertAlmostEqual(combined_error(a, b), combined_error(b, a), places=12)
            self.assertLessEqual(combined_error(a, c), combined_error(a, b) + combined_error(b, c) + 1e-9)
            self.assertGreater(combined_error(a, b), 0.0)

    def test_equator_combined_equals_azimuth_error(self):
        for az in (3.0, 47.5, 179.0):
            self.assertAlmostEqual(combined_error(Direction(0, 90), Direction(az, 90)),
                                   azimuth_error(0, az), delta=1e-9)

    def test_reported_single_source_rows_are_consistent(self):
        # (azimuth error, elevation error, combined) rows of the single static source task;
        # each must be reachable for some true elevation.
        rows = [(10.5, 2.5, 10.8), (5.7, 4.1, 6.9), (9.5, 2.2, 9.7)]
        elevations = np.arange(0.0, 45.0, 0.01)
        for az_err, el_err, combined in rows:
            gaps = [
                abs(combined_error(Direction.from_elevation(0, el),
                                   Direction.from_elevation(az_err, el + el_err)) - combined)
                for el in elevations
            ]
            self.assertLess(min(gaps), 0.1)


class MatchingTests(SimpleTestCase):
    def test_permutation_invariance(self):
        truth = [Direction(0, 90), Direction(90, 45), Direction(200, 120)]
        report = match_sources([truth[2], truth[0], truth[1]], truth)
        self.assertEqual(len(report.pairs), 3)
        self.assertEqual(report.misses, [])
        self.assertEqual(report.false_alarms, [])
        for pair in report.pairs:
            self.assertAlmostEqual(pair.combined_deg, 0.0, places=6)

    def test_one_estimate_two_truths(self):
        truth = [Direction(0, 90), Direction(120, 60)]
        report = match_sources([Direction(5, 88)], truth)
        self.assertEqual([p.source_id for p in report.pairs], [1])
        self.assertEqual(report.misses, [2])
        self.assertEqual(report.truth_count, 2)

    def test_gate_turns_far_pair_into_miss_and_false_alarm(self):
        report = match_sources([Direction(30, 90)], [Direction(0, 90)], gate_deg=20)
        self.assertEqual(report.pairs, [])
        self.assertEqual(report.misses, [1])
        self.assertEqual(report.false_alarms, [0])

    # B sits about 15 degrees from truth 1 and 25 from truth 2; pairing A-1, B-2
    # has the lower total but loses B-2 to the gate
    GATE_TRAP_TRUTH = [Direction.from_elevation(0, 0), Direction.from_elevation(15, 0)]
    GATE_TRAP_ESTIMATES = [Direction.from_elevation(0, 0), Direction.from_elevation(-5.83, 13.8)]

    def test_gate_does_not_cost_matches(self):
        (a, b), (t1, t2) = self.GATE_TRAP_ESTIMATES, self.GATE_TRAP_TRUTH
        self.assertLess(combined_error(b, t1), 20.0)
        self.assertGreater(combined_error(b, t2), 20.0)
        self.assertLess(combined_error(a, t1) + combined_error(b, t2), combined_error(a, t2) + combined_error(b, t1))

        report = match_sources(self.GATE_TRAP_ESTIMATES, self.GATE_TRAP_TRUTH)
        self.assertEqual(len(report.pairs), 2)
        self.assertEqual(report.misses, [])
        self.assertEqual(report.false_alarms, [])
        self.assertEqual({(p.estimate_index, p.source_id) for p in report.pairs}, {(0, 2), (1, 1)})

    def test_gate_does_not_cost_matches_with_assignment_solver(self):
        others = [Direction(60 * k, 120) for k in range(1, 6)]
        report = match_sources(self.GATE_TRAP_ESTIMATES + others, self.GATE_TRAP_TRUTH + others)
        self.assertEqual(len(report.pairs), 7)
        self.assertEqual(report.misses, [])
        self.assertEqual(report.false_alarms, [])

    def test_optimal_beats_greedy_near_swap(self):
        truth = [Direction(0, 90), Direction(8, 90)]
        estimates = [Direction(5, 90), Direction(13, 90)]
        report = match_sources(estimates, truth)
        total = sum(p.combined_deg for p in report.pairs)
        self.assertAlmostEqual(total, 10.0, places=9)
        # greedy takes the 3 degree pair first and is left with 13
        greedy = combined_error(estimates[0], truth[1]) + combined_error(estimates[1], truth[0])
        self.assertAlmostEqual(greedy, 16.0, places=9)
        self.assertLess(total, greedy)

    def test_assignment_is_optimal_against_exhaustive_search(self):
        rng = np.random.default_rng(5)
        for n in range(1, 6):
            for _ in range(4):
                truth = random_directions(rng, n)
                estimates = random_directions(rng, n)
                report = match_sources(estimates, truth, gate_deg=180.0)
                best = min(
                    sum(combined_error(estimates[e], truth[t]) for e, t in enumerate(perm))
                    for perm in permutations(range(n))
                )
                self.assertAlmostEqual(sum(p.combined_deg for p in report.pairs), best, places=9)

    def test_large_problem_uses_assignment_solver(self):
        rng = np.random.default_rng(6)
        truth = random_directions(rng, 8)
        estimates = random_directions(rng, 8)
        report = match_sources(estimates, truth, gate_deg=180.0)
        cost = np.array([[combined_error(e, t) for t in truth] for e in estimates])
        best = min(cost[np.arange(8), list(perm)].sum() for perm in permutations(range(8)))
        self.assertAlmostEqual(sum(p.combined_deg for p in report.pairs), best, places=9)


class SummaryTests(SimpleTestCase):
    def test_single_source_task_average(self):
        reports = [MetricsReport(pairs_from_rows([row])) for row in
                   [(10.5, 2.5, 10.8), (5.7, 4.1, 6.9), (9.5, 2.2, 9.7)]]
        averages = summarize(reports)['averages']
        self.assertAlmostEqual(averages['azimuth'], 8.6, delta=0.05)
        self.assertAlmostEqual(averages['elevation'], 2.9, delta=0.05)
        self.assertAlmostEqual(averages['combined'], 9.13, delta=0.01)
        self.assertAlmostEqual(averages['combined'], 9.2, delta=0.1)

    def test_multi_source_task_average_skips_misses(self):
        reports = [
            MetricsReport(pairs_from_rows([(7.1, 3.5, 8.5)]), misses=[2]),
            MetricsReport(pairs_from_rows([(8.8, 1.7, 8.9), (6.6, 3.5, 7.5), (5.8, 2.4, 6.3), (6.8, 4.9, 8.4)])),
            MetricsReport(pairs_from_rows([(19.2, 0.9, 19.2), (6.0, 2.2, 6.4), (10.7, 2.6, 10.9)])),
        ]
        summary = summarize(reports)
        self.assertAlmostEqual(summary['averages']['azimuth'], 8.9, delta=0.05)
        self.assertAlmostEqual(summary['averages']['elevation'], 2.7, delta=0.05)
        self.assertAlmostEqual(summary['averages']['combined'], 9.5, delta=0.05)
        self.assertEqual(summary['misses'], 1)
        self.assertEqual(summary['matched'], 8)

    def test_single_report_average_is_itself(self):
        report = MetricsReport(pairs_from_rows([(4.0, 1.0, 4.2)]))
        self.assertEqual(summarize([report])['averages'], report.averages)

    def test_all_misses(self):
        summary = summarize([MetricsReport(misses=[1, 2])])
        self.assertIsNone(summary['averages'])
        self.assertEqual(summary['misses'], 2)

    def test_table_renders_misses(self):
        report = MetricsReport(pairs_from_rows([(7.1, 3.5, 8.5)]), misses=[2])
        table = format_table([report])
        lines = table.splitlines()
        self.assertIn('---', lines[2])
        self.assertIn('8.5', lines[1])
        self.assertTrue(lines[3].lstrip().startswith('Avg'))
        frame = report_frame([report])
        self.assertEqual(len(frame), 3)
        self.assertTrue(np.isnan(frame['combined_deg'].iloc[1]))


class CsvReadingTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def write(self, name, text):
        path = self.dir / name
        path.write_text(text)
        return path

    def test_truth_file(self):
        path = self.write('truth.csv', 'source_id,az_deg,el_deg,onset_s,offset_s\n3,10,20,0,1\n5,200,-10,0,1\n')
        ids, truth = read_truth_csv(path)
        self.assertEqual(ids, [3, 5])
        self.assertEqual(truth[1], Direction(200, 100))

    def test_estimates_header_sets_convention(self):
        path = self.write('est.csv', '# format_version=1 elevation_convention=inclination\n'
                                     'rank,az_deg,el_deg,peak_height\n2,5,30,1.0\n1,10,60,2.0\n')
        self.assertEqual(read_estimates_csv(path), [Direction(10, 60), Direction(5, 30)])
        self.assertEqual(read_estimates_csv(path, 'elevation')[0], Direction(10, 30))

    def test_malformed_files(self):
        with self.assertRaises(DoaIOError):
            read_truth_csv(self.write('a.csv', 'source_id,az_deg\n1,2\n'))
        with self.assertRaises(DoaIOError):
            read_truth_csv(self.write('b.csv', 'source_id,az_deg,el_deg\n1,abc,3\n'))
        with self.assertRaises(DoaIOError):
            read_truth_csv(self.write('c.csv', 'source_id,az_deg,el_deg\n1,0,120\n'))
        with self.assertRaises(DoaIOError):
            read_estimates_csv(self.dir / 'absent.csv')
