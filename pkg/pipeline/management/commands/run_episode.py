from pipeline.runner import run_episodes

from ..base import PipelineCommand


class Command(PipelineCommand):
    help = "Segment the query frames of a stored or synthetic episode"

    def add_arguments(self, parser):
        self.add_run_arguments(parser)
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument('--synth', action='store_true', help="Synthesise the episode from the seed")
        source.add_argument('--episode', help="Directory holding episode.json and its tensors")
        parser.add_argument('--baseline', action='store_true', default=None,
                            help="Disable prototype enhancement and self-attention")
        parser.add_argument('--episodes', type=int, dest='n_episodes', help="Synthetic episodes to run")
        parser.add_argument('--separation', type=float, help="Synthetic foreground/background separation")

    def handle(self, *args, **options):
        cfg = self.run_config(options, episode_dir=options['episode'], baseline=options['baseline'],
                              n_episodes=options['n_episodes'], separation=options['separation'])
        for result in run_episodes(cfg, jobs=options['jobs']):
            line = f"{result.name}: {len(result.masks)} masks in {result.output_dir}"
            if result.evaluation is not None:
                line += (f", J={result.evaluation.j_mean:.4f} F={result.evaluation.f_mean:.4f}"
                         f", pseudo-mask J={result.pseudo_evaluation.j_mean:.4f}")
            self.stdout.write(self.style.SUCCESS(line))
