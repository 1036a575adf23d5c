from symbolic.formula import extract_formula, formula_text
from workspace.management.base import KanCommand, parse_names


class Command(KanCommand):
    help = 'Print the closed-form formula of a fully symbolic network'

    def add_command_arguments(self, parser):
        parser.add_argument('--names', help='Comma-separated names to use for the inputs')
        parser.add_argument('--digits', type=int, help='Significant digits of the coefficients')

    def run(self, *args, **options):
        model = self.load_model()
        trees = extract_formula(model, parse_names(options['names']) or None, options['digits'],
                                self.probe_inputs())
        self.stdout.write(formula_text(trees))
