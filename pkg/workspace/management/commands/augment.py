from django.core.management.base import CommandError

from workspace.datasets import save_dataset
from workspace.management.base import USAGE_EXIT_CODE, KanCommand
from workspace.tasks import AUXILIARY_VARIABLES, augment_input


class Command(KanCommand):
    help = 'Append auxiliary input columns computed from formulas'

    def add_command_arguments(self, parser):
        parser.add_argument('columns', nargs='*', help="Auxiliary columns written 'name=formula'")
        parser.add_argument('--task', choices=sorted(AUXILIARY_VARIABLES),
                            help='Use the auxiliary variables of a built-in task')
        parser.add_argument('--out', help='CSV path (default: overwrite --data)')

    def run(self, *args, **options):
        dataset = self.load_dataset()
        aux = list(AUXILIARY_VARIABLES.get(options['task'], []))
        for item in options['columns']:
            name, sep, text = item.partition('=')
            if not sep or not name.strip():
                raise CommandError(f"Auxiliary column must be written 'name=formula', got '{item}'",
                                   returncode=USAGE_EXIT_CODE)
            aux.append((name.strip(), text.strip()))
        augmented = augment_input(dataset, aux)
        path = options['out'] or options['data']
        save_dataset(augmented, path)
        self.stdout.write(self.style.SUCCESS(
            f"✓ Inputs are now {', '.join(augmented.input_names)}; wrote {path}"
        ))
