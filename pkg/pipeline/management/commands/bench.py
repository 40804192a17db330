from verify.benchmark import GRIDS, REPETITIONS, bench_grid, run_benchmark, write_bench_csv

from ..base import PipelineCommand


class Command(PipelineCommand):
    help = "Time factored against full-rank co-attention over a grid of K, T and N_p"

    def add_arguments(self, parser):
        self.add_run_arguments(parser)
        parser.add_argument('--grid', choices=GRIDS, default='all')
        parser.add_argument('--repetitions', type=int, default=REPETITIONS)

    def handle(self, *args, **options):
        cfg = self.run_config(options)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        rows = run_benchmark(bench_grid(options['grid']), repetitions=options['repetitions'], seed=cfg.seed,
                             jobs=options['jobs'])
        path = cfg.output_dir / 'bench.csv'
        write_bench_csv(path, rows)
        for row in rows:
            full = 'skipped' if row.skipped else f"{row.ns_full / 1e6:.2f} ms"
            self.stdout.write(f"{row.config.name}: {row.ns_factored / 1e6:.2f} ms ({row.fps:.1f} FPS), full {full}")
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(rows)} rows to {path}"))
