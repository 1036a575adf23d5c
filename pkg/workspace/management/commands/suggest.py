from symbolic.fitting import suggest_symbolic
from workspace.management.base import KanCommand, parse_edge, parse_names


class Command(KanCommand):
    help = 'Rank symbolic candidates for one edge'

    def add_command_arguments(self, parser):
        parser.add_argument('--edge', required=True, help="Edge written 'layer,from,to'")
        parser.add_argument('--top-k', type=int, default=5, help='Candidates to list (default: 5)')
        parser.add_argument('--library', help='Comma-separated primitive names to try')

    def run(self, *args, **options):
        dataset = self.load_dataset()
        model = self.load_model()
        ranked = suggest_symbolic(model, parse_edge(options['edge']), parse_names(options['library']) or None,
                                  options['top_k'], X=dataset.train_inputs)
        self.stdout.write('function\tr2\ta\tb\tc\td')
        for fit in ranked:
            self.stdout.write('\t'.join([fit.name, f'{fit.r2:.6f}'] + [f'{v:.6g}' for v in fit.affine]))
