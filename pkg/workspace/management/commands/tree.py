from modularity.functions import FunctionHandle
from modularity.tree import tree_convert
from workspace.diagrams import save_dot
from workspace.management.base import KanCommand, parse_interval, parse_names
from workspace.tasks import infer_input_names


class Command(KanCommand):
    help = "Print the modularity tree of a formula or of the network's first output"

    def add_command_arguments(self, parser):
        parser.add_argument('--formula', help='Test this formula instead of the network')
        parser.add_argument('--names', help='Comma-separated input names of --formula')
        parser.add_argument('--domain', help="Probe box 'lo,hi' for every variable")
        parser.add_argument('--output', type=int, default=0, help='Network output to test (default: 0)')
        parser.add_argument('--dot', help='Also write the tree as DOT to this path')

    def run(self, *args, **options):
        domain = parse_interval(options['domain']) if options['domain'] else None
        if options['formula']:
            names = parse_names(options['names']) or infer_input_names(options['formula'])
            f = FunctionHandle.from_formula(options['formula'], names, domain)
        else:
            model = self.load_model()
            f = FunctionHandle.from_model(model, options['output'],
                                          None if domain is None else [domain] * model.n_inputs)
        root = tree_convert(f, self.test_config())
        self.stdout.write(root.to_box(f.names))
        if options['dot']:
            save_dot(root.to_dot(f.names), options['dot'])
