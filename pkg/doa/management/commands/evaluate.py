import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from doa.exceptions import DoaError
from doa.utils.evaluation import (
    CONVENTIONS,
    DEFAULT_GATE_DEG,
    ELEVATION,
    format_table,
    match_sources,
    read_estimates_csv,
    read_truth_csv,
    write_report_csv,
)

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Scores estimates against ground truth: azimuth, elevation and combined errors'

    def add_arguments(self, parser):
        parser.add_argument('est', help='Estimates CSV')
        parser.add_argument('truth', help='Ground truth CSV')
        parser.add_argument(
            '--pair',
            nargs=2,
            action='append',
            default=[],
            metavar=('EST', 'TRUTH'),
            help='Further recording to include (repeatable)'
        )
        parser.add_argument('--out', help='Write the report CSV here')
        parser.add_argument(
            '--gate',
            type=float,
            default=DEFAULT_GATE_DEG,
            help='Association gate in degrees'
        )
        parser.add_argument(
            '--elevation-convention',
            choices=CONVENTIONS,
            default=None,
            help='How el_deg is read in estimate files (default: their header); truth files are always elevation'
        )

    def handle(self, *args, **options):
        pairs = [(options['est'], options['truth'])] + [tuple(p) for p in options['pair']]
        convention = options['elevation_convention']
        try:
            reports = []
            for est_path, truth_path in pairs:
                estimates = read_estimates_csv(est_path, convention)
                source_ids, truth = read_truth_csv(truth_path, ELEVATION)
                report = match_sources(estimates, truth, options['gate'], source_ids)
                report.label = Path(est_path).stem
                reports.append(report)
            if options['out']:
                write_report_csv(options['out'], reports)
        except DoaError as e:
            logger.error(f"Evaluation failed: {str(e)}")
            raise CommandError(str(e), returncode=e.exit_code)

        self.stdout.write(format_table(reports))
