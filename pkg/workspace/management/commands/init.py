from networks.models import MultKanModel
from workspace.management.base import KanCommand, parse_names, parse_width


class Command(KanCommand):
    help = 'Create a randomly initialized network and commit it as the first version'

    def add_command_arguments(self, parser):
        parser.add_argument('width', help="Width spec, e.g. '2,3:2,1' (a:m = add and mult nodes)")
        parser.add_argument('--grid', type=int, help='Grid intervals per edge')
        parser.add_argument('--order', type=int, help='Spline order')
        parser.add_argument('--arity', type=int, default=2, help='Multiplication arity (default: 2)')
        parser.add_argument('--names', help='Comma-separated input names')
        parser.add_argument('--sparse', action='store_true', help='Start with sparse connections')

    def run(self, *args, **options):
        model = MultKanModel.create(
            parse_width(options['width']), grid=options['grid'], order=options['order'],
            seed=options['seed'], sparse=options['sparse'], mult_arity=options['arity'],
            input_names=parse_names(options['names']),
        )
        self.stdout.write(f'Created network of width {model.width}')
        self.record(model, 'init')
