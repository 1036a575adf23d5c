from workspace.diagrams import model_to_dot, save_dot
from workspace.management.base import KanCommand


class Command(KanCommand):
    help = 'Export the network diagram as DOT'

    def add_command_arguments(self, parser):
        parser.add_argument('--out', help='DOT path (default: print to stdout)')

    def run(self, *args, **options):
        model = self.load_model()
        dot = model_to_dot(model, self.probe_inputs())
        if options['out']:
            save_dot(dot, options['out'])
            self.stdout.write(self.style.SUCCESS(f"✓ Wrote diagram to {options['out']}"))
        else:
            self.stdout.write(dot.source)
