from django.db import IntegrityError, transaction
from django.test import TestCase

from doa.models import EstimationRun, SourceEstimate
from doa.tests.scenes import alternating_pair, em32
from doa.utils.geometry import Direction
from doa.utils.pipeline import PipelineConfig, estimate_doas


class EstimationRunTests(TestCase):
    @classmethod
    def setUpTestData(cls):
        cls.recording = alternating_pair(Direction(30, 80), Direction(150, 110))
        cls.config = PipelineConfig()
        cls.result = estimate_doas(cls.recording.signal, em32(), cls.config)

    def setUp(self):
        self.run = EstimationRun.objects.record(
            self.recording.signal, self.config, self.result, label='pair', path='/data/pair.wav'
        )

    def test_record(self):
        self.assertEqual(self.run.estimates.count(), len(self.result.estimates))
        self.assertEqual(self.run.vote_count, len(self.result.votes))
        self.assertAlmostEqual(self.run.duration_s, 0.6)
        self.assertEqual(self.run.config, self.config.snapshot())
        self.assertEqual(self.run.recording_path, '/data/pair.wav')

    def test_directions_follow_rank(self):
        stored = EstimationRun.objects.get(pk=self.run.pk)
        self.assertEqual(stored.directions(), [e.direction for e in self.result.estimates])
        self.assertEqual([e.rank for e in stored.estimates.all()], list(range(1, len(self.result.estimates) + 1)))

    def test_duplicate_rank_rejected(self):
        with self.assertRaises(IntegrityError):
            with transaction.atomic():
                SourceEstimate.objects.create(run=self.run, rank=1, azimuth=0.0, inclination=90.0, peak_height=1.0)

    def test_delete_cascades(self):
        self.run.delete()
        self.assertEqual(SourceEstimate.objects.count(), 0)

    def test_latest_first(self):
        later = EstimationRun.objects.record(self.recording.signal, self.config, self.result, label='again')
        self.assertEqual(EstimationRun.objects.first(), later)
        self.assertIn('pair', str(self.run))
