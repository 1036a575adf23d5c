from modularity.swapping import auto_swap
from workspace.management.base import KanCommand


class Command(KanCommand):
    help = 'Reorder hidden neurons to shorten connections and commit the result'

    def add_command_arguments(self, parser):
        parser.add_argument('--max-sweeps', type=int, default=100, help='Sweep limit (default: 100)')

    def run(self, *args, **options):
        dataset = self.load_dataset()
        source = self.load_model()
        model, orders, trace = auto_swap(source, dataset.train_inputs, max_sweeps=options['max_sweeps'])
        for level, order in enumerate(orders[1:-1], start=1):
            self.stdout.write(f"Level {level}: {' '.join(str(k) for k in order)}")
        self.stdout.write(f'Connection cost {trace[0]:.4g} -> {trace[-1]:.4g}')
        self.record(model, 'swap', source)
