from workspace.datasets import save_dataset
from workspace.management.base import KanCommand, parse_interval, parse_names
from workspace.tasks import BUILTIN_TASKS, builtin_task, gen_dataset


class Command(KanCommand):
    help = 'Generate a dataset from a built-in task or formula text'

    def add_command_arguments(self, parser):
        parser.add_argument('task', help=f"One of {', '.join(BUILTIN_TASKS)}, or formula text")
        parser.add_argument('--samples', type=int, default=1000, help='Sample count (default: 1000)')
        parser.add_argument('--noise', type=float, default=0.0, help='Gaussian label noise')
        parser.add_argument('--domain', help="Input box 'lo,hi' applied to every input")
        parser.add_argument('--names', help='Comma-separated input names')
        parser.add_argument('--out', help='CSV path (default: --data, else the workspace)')
        parser.add_argument('--test-fraction', type=float, help='Share of test samples (default: 0.2)')

    def run(self, *args, **options):
        spec = builtin_task(
            options['task'], n_samples=options['samples'], seed=options['seed'], noise=options['noise'],
            domain=parse_interval(options['domain']) if options['domain'] else None,
            input_names=parse_names(options['names']) or None,
            test_fraction=options['test_fraction'],
        )
        dataset = gen_dataset(spec)
        path = options['out'] or options['data']
        if not path:
            self.workspace.ensure()
            path = self.workspace.dataset_path('data')
        save_dataset(dataset, path)
        self.stdout.write(self.style.SUCCESS(
            f"✓ Wrote {spec.n_samples} samples ({', '.join(dataset.input_names)} -> "
            f"{', '.join(dataset.output_names)}) to {path}"
        ))
