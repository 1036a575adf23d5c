from attribution.pruning import prune, prune_inputs
from attribution.scores import compute_attribution
from workspace.management.base import KanCommand, parse_names


class Command(KanCommand):
    help = 'Prune weak edges and hidden nodes, or inputs, and commit the result'

    def add_command_arguments(self, parser):
        parser.add_argument('--inputs', action='store_true', help='Prune inputs instead of hidden nodes')
        parser.add_argument('--keep', help='Comma-separated inputs to keep (with --inputs)')
        parser.add_argument('--threshold', type=float, help='Input score threshold (with --inputs)')
        parser.add_argument('--node-threshold', type=float, help='Hidden node score threshold')
        parser.add_argument('--edge-threshold', type=float, help='Edge score threshold')

    def run(self, *args, **options):
        dataset = self.load_dataset()
        source = self.load_model()
        scores = compute_attribution(source, dataset.train_inputs)
        if options['inputs']:
            model, retained = prune_inputs(source, scores, parse_names(options['keep']) or None,
                                           options['threshold'])
            self.stdout.write(f"Retained inputs: {', '.join(retained)}")
            label = f"prune inputs {','.join(retained)}"
        else:
            model = prune(source, scores, options['node_threshold'], options['edge_threshold'])
            self.stdout.write(f'Width is now {model.width}')
            label = 'prune'
        self.record(model, label, source)
