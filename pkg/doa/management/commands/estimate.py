import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from doa.exceptions import DoaError
from doa.models import EstimationRun
from doa.utils.doa_map import write_histogram_csv, write_histogram_pgm
from doa.utils.evaluation import CONVENTIONS, ELEVATION
from doa.utils.geometry import load_geometry
from doa.utils.pipeline import PipelineConfig, estimate_doas, estimates_text, write_estimates_csv
from doa.utils.tf_transform import read_wav

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Estimates source directions in a spherical-array WAV recording'

    def add_arguments(self, parser):
        parser.add_argument('wav', nargs='?', help='Multichannel WAV recording')
        parser.add_argument('--out', help='Estimates CSV (stdout if omitted)')
        parser.add_argument('--config', help='key=value pipeline config file')
        parser.add_argument(
            '--set',
            action='append',
            default=[],
            metavar='KEY=VALUE',
            help='Override a single config value (repeatable)'
        )
        parser.add_argument('--geometry', help='Array geometry JSON (overrides config)')
        parser.add_argument(
            '--threads',
            type=int,
            default=None,
            help='Worker threads (default: DOA_WORKERS)'
        )
        parser.add_argument(
            '--single-source',
            action='store_true',
            help='Report only the highest peak'
        )
        parser.add_argument(
            '--dump-histogram',
            metavar='PREFIX',
            help='Write PREFIX.csv (raw and smoothed) and PREFIX.pgm'
        )
        parser.add_argument('--votes', help='Write the per-region vote CSV here')
        parser.add_argument(
            '--print-config',
            action='store_true',
            help='Print the effective configuration and exit'
        )
        parser.add_argument(
            '--elevation-convention',
            choices=CONVENTIONS,
            default=ELEVATION,
            help='Report el_deg as elevation (90 - inclination) or inclination'
        )
        parser.add_argument('--store', action='store_true', help='Persist the run in the database')
        parser.add_argument('--label', default='', help='Label for a stored run')

    def handle(self, *args, **options):
        try:
            config = self.build_config(options)
            if options['print_config']:
                self.stdout.write(config.to_text(), ending='')
                return
            if not options['wav']:
                raise CommandError("A WAV file is required unless --print-config is given", returncode=2)
            self.run(config, options)
        except DoaError as e:
            logger.error(f"Estimation failed: {str(e)}")
            raise CommandError(str(e), returncode=e.exit_code)

    def build_config(self, options):
        """Defaults, then config file, then command-line flags."""
        config = PipelineConfig()
        if options['config']:
            config = PipelineConfig.from_file(options['config'])
        flags = list(options['set'])
        if options['geometry']:
            flags.append(f"geometry={options['geometry']}")
        if options['single_source']:
            flags.append('single_source_mode=true')
        return config.with_overrides(flags) if flags else config

    def run(self, config, options):
        workers = options['threads'] or settings.DOA_WORKERS
        geometry = load_geometry(config.geometry or settings.DOA_GEOMETRY_PATH, config.sh_order)
        signal = read_wav(options['wav'])

        result = estimate_doas(signal, geometry, config, workers=workers)
        convention = options['elevation_convention']
        if options['out']:
            write_estimates_csv(options['out'], result.estimates, convention)
            logger.info(f"Wrote {len(result.estimates)} estimates to {options['out']}")
        else:
            self.stdout.write(estimates_text(result.estimates, convention), ending='')

        if options['dump_histogram']:
            prefix = options['dump_histogram']
            write_histogram_csv(f"{prefix}.csv", result.raw_histogram, result.smoothed_histogram)
            write_histogram_pgm(f"{prefix}.pgm", result.smoothed_histogram, result.estimates)
        if options['votes']:
            result.votes.write_csv(options['votes'])
        if options['store']:
            label = options['label'] or Path(options['wav']).stem
            run = EstimationRun.objects.record(signal, config, result, label=label, path=options['wav'])
            logger.info(f"Stored as run {run.pk}")
