from kanpiler.compiler import compile_to_kan
from networks.editing import perturb
from workspace.management.base import KanCommand, parse_names
from workspace.tasks import infer_input_names


class Command(KanCommand):
    help = 'Compile formula text into a symbolic network'

    def add_command_arguments(self, parser):
        parser.add_argument('formula', help="Formula text; separate outputs with ';'")
        parser.add_argument('--names', help='Comma-separated input names (default: in order of appearance)')
        parser.add_argument('--grid', type=int, help='Grid intervals of the spline branches')
        parser.add_argument('--order', type=int, help='Spline order of the spline branches')
        parser.add_argument('--perturb', type=float, default=0.0,
                            help='Wake every edge with spline noise of this size so training can refit it')

    def run(self, *args, **options):
        names = parse_names(options['names']) or infer_input_names(options['formula'])
        model = compile_to_kan(options['formula'], names, options['grid'], options['order'])
        if options['perturb']:
            model = perturb(model, options['perturb'], seed=options['seed'])
        self.stdout.write(f'Compiled into width {model.width}')
        self.record(model, f"compile {options['formula']}")
