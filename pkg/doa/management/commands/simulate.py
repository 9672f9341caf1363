import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from doa.exceptions import DoaError
from doa.utils.geometry import load_geometry
from doa.utils.simulator import load_scene, simulate, write_truth_csv
from doa.utils.tf_transform import write_wav

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Renders a JSON scene on the array as a 32-bit float WAV plus ground truth CSV'

    def add_arguments(self, parser):
        parser.add_argument('scene', help='JSON scene description')
        parser.add_argument('--out', required=True, help='Output WAV path')
        parser.add_argument('--truth', help='Ground truth CSV (default: <out>_truth.csv)')
        parser.add_argument('--geometry', help='Array geometry JSON (default: DOA_GEOMETRY_PATH)')
        parser.add_argument('--order', type=int, default=3, help='SH truncation order of the synthesis')

    def handle(self, *args, **options):
        out = Path(options['out'])
        truth_path = options['truth'] or out.with_name(f"{out.stem}_truth.csv")
        try:
            scene = load_scene(options['scene'])
            geometry = load_geometry(options['geometry'] or settings.DOA_GEOMETRY_PATH, order=0)
            recording = simulate(scene, geometry, options['order'])
            write_wav(out, recording.signal)
            write_truth_csv(truth_path, recording.truth)
        except DoaError as e:
            logger.error(f"Simulation failed: {str(e)}")
            raise CommandError(str(e), returncode=e.exit_code)

        logger.info(f"Wrote {out} and {truth_path}")
