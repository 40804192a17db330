from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import ValidationError

from episodes.exceptions import HpanError

from ..serializers import load_run_config


class PipelineCommand(BaseCommand):
    """Turns pipeline and validation errors into ``CommandError("<module>: <message>")``."""

    def add_run_arguments(self, parser):
        parser.add_argument('--config', help="Flat JSON file of RunConfig fields")
        parser.add_argument('--seed', type=int, help="Seed for synthesis, initialisation and clustering")
        parser.add_argument('--jobs', type=int, default=settings.HPAN_JOBS, help="Episodes run in parallel")
        parser.add_argument('--out', dest='output_dir', help="Output directory")

    def run_config(self, options, **overrides):
        return load_run_config(options.get('config'), seed=options.get('seed'),
                               output_dir=options.get('output_dir'), **overrides)

    def execute(self, *args, **options):
        try:
            return super().execute(*args, **options)
        except HpanError as exc:
            raise CommandError(f"{exc.module}: {exc}") from exc
        except ValidationError as exc:
            raise CommandError(f"config: {exc.detail}") from exc
