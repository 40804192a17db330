from metrics.evaluation import evaluate_dirs

from ..base import PipelineCommand


class Command(PipelineCommand):
    help = "Per-frame J and F of predicted masks against ground truth, as frame,j,f CSV"

    def add_arguments(self, parser):
        parser.add_argument('pred_dir')
        parser.add_argument('gt_dir')
        parser.add_argument('--tolerance', type=int, help="Boundary tolerance in pixels")

    def handle(self, *args, **options):
        result = evaluate_dirs(options['pred_dir'], options['gt_dir'], options['tolerance'])
        self.stdout.write('frame,j,f')
        for frame, (j, f) in enumerate(zip(result.j_per_frame, result.f_per_frame)):
            self.stdout.write(f'{frame},{j:.9g},{f:.9g}')
