from django.core.management.base import CommandError

from episodes.synthesis import synth_episode
from segmentation.training import loss_reduction, train_demo

from ..base import PipelineCommand


class Command(PipelineCommand):
    help = "Train every parameter on synthetic episodes by plain gradient descent"

    def add_arguments(self, parser):
        self.add_run_arguments(parser)
        parser.add_argument('--steps', type=int)
        parser.add_argument('--lr', type=float)
        parser.add_argument('--lambda-proto', type=float, dest='lambda_proto')
        parser.add_argument('--max-grad-norm', type=float, dest='max_grad_norm')
        parser.add_argument('--episodes', type=int, dest='n_episodes')
        parser.add_argument('--baseline', action='store_true', default=None)
        parser.add_argument('--require-reduction', type=float, dest='min_loss_reduction',
                            help="Fail unless the total loss drops by at least this fraction (default 0.5)")

    def handle(self, *args, **options):
        cfg = self.run_config(options, steps=options['steps'], lr=options['lr'],
                              lambda_proto=options['lambda_proto'], max_grad_norm=options['max_grad_norm'],
                              n_episodes=options['n_episodes'], baseline=options['baseline'],
                              min_loss_reduction=options['min_loss_reduction'])
        episodes = [synth_episode(cfg.synth_config(), cfg.seed + offset) for offset in range(cfg.n_episodes)]
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        path = cfg.output_dir / 'trajectory.csv'
        reports = train_demo(episodes, cfg.steps, lr=cfg.lr, seed=cfg.seed, options=cfg.network_options(),
                             weights=cfg.loss_weights(), channels=cfg.channels, max_grad_norm=cfg.max_grad_norm,
                             jobs=options['jobs'], trajectory_path=path)
        reduction = loss_reduction(reports)
        self.stdout.write(f"total loss {reports[0].total:.6f} -> {reports[-1].total:.6f} "
                          f"({reduction:.1%} lower), prototype cosine {reports[-1].mean_cosine:.4f}")
        if reduction < cfg.min_loss_reduction:
            raise CommandError(f"seg_head: loss fell by {reduction:.1%}, below the required "
                               f"{cfg.min_loss_reduction:.0%} (trajectory in {path})")
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(reports)} steps to {path}"))
