from django.core.management.base import CommandError

from verify.selftest import run_selftest

from ..base import PipelineCommand


class Command(PipelineCommand):
    help = "Re-run the oracle-based acceptance checks"

    def handle(self, *args, **options):
        results = run_selftest()
        for result in results:
            style = self.style.SUCCESS if result.passed else self.style.ERROR
            self.stdout.write(style(f"{'PASS' if result.passed else 'FAIL'} {result.name}: {result.detail}"))
        failed = [result.name for result in results if not result.passed]
        if failed:
            raise CommandError(f"verify: selftest failed for {', '.join(failed)}")
