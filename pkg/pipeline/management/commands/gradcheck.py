from django.core.management.base import CommandError

from verify.gradcheck import EXCLUDED, checked_loss_report
from verify.gradients import TOLERANCE

from ..base import PipelineCommand


class Command(PipelineCommand):
    help = "Compare every analytic gradient against central finite differences"

    def add_arguments(self, parser):
        self.add_run_arguments(parser)
        parser.add_argument('--tolerance', type=float, default=TOLERANCE)

    def handle(self, *args, **options):
        cfg = self.run_config(options)
        report = checked_loss_report(seed=cfg.seed, tolerance=options['tolerance'], jobs=options['jobs'])
        self.stdout.write(f"loss at check point: {report.total:.6f}")
        for group, (passed, error) in report.grad_check.items():
            style = self.style.SUCCESS if passed else self.style.ERROR
            self.stdout.write(style(f"{group}: {error:.3e}"))
        self.stdout.write(f"excluded: {', '.join(EXCLUDED)}")
        if report.failed_groups:
            raise CommandError(f"verify: gradient check failed for {', '.join(report.failed_groups)}")
