import logging

from django.db import models, transaction

from doa.utils.geometry import Direction

logger = logging.getLogger(__name__)


class EstimationRunManager(models.Manager):
    """Custom manager for EstimationRun with a method to persist pipeline results"""

    def record(self, recording, config, result, label='', path=''):
        """
        Create a run for a MultichannelSignal and one SourceEstimate per DOA
        estimate in a single transaction.
        """
        with transaction.atomic():
            run = self.create(
                recording_path=str(path),
                label=label,
                config=config.snapshot(),
                sample_rate=float(recording.sample_rate),
                duration_s=float(recording.duration),
                vote_count=len(result.votes),
            )
            SourceEstimate.objects.bulk_create([
                SourceEstimate(
                    run=run,
                    rank=estimate.rank,
                    azimuth=estimate.direction.azimuth,
                    inclination=estimate.direction.inclination,
                    peak_height=estimate.peak_height,
                )
                for estimate in result.estimates
            ])
        logger.info(f"Stored run {run.pk} with {len(result.estimates)} estimates")
        return run


class EstimationRun(models.Model):
    # One execution of the estimation chain on a recording
    recording_path = models.CharField(
        max_length=500,
        blank=True,
        help_text="Path of the analysed WAV file"
    )
    label = models.CharField(
        max_length=200,
        blank=True,
        db_index=True,
        help_text="Free-form label, e.g. recording or task name"
    )
    config = models.JSONField(
        default=dict,
        help_text="Snapshot of the pipeline configuration used"
    )
    sample_rate = models.FloatField(help_text="Sample rate of the recording in Hz")
    duration_s = models.FloatField(help_text="Recording duration in seconds")
    vote_count = models.IntegerField(
        default=0,
        help_text="Number of pseudointensity votes cast"
    )
    created = models.DateTimeField(auto_now_add=True)

    objects = EstimationRunManager()

    class Meta:
        ordering = ['-created', '-id']

    def directions(self):
        return [estimate.direction for estimate in self.estimates.order_by('rank')]

    def __str__(self):
        name = self.label or self.recording_path or f"run {self.pk}"
        return f"{name} ({self.estimates.count()} sources)"


class SourceEstimate(models.Model):
    run = models.ForeignKey(
        EstimationRun,
        on_delete=models.CASCADE,
        related_name='estimates'
    )
    rank = models.PositiveIntegerField(help_text="1 = highest smoothed-histogram peak")
    azimuth = models.FloatField(help_text="Degrees in [0, 360)")
    inclination = models.FloatField(help_text="Degrees from the +z pole")
    peak_height = models.FloatField()

    class Meta:
        ordering = ['rank']
        constraints = [
            models.UniqueConstraint(fields=['run', 'rank'], name='unique_rank_per_run'),
        ]

    @property
    def direction(self):
        return Direction(self.azimuth, self.inclination)

    def __str__(self):
        return f"#{self.rank} {self.direction}"
