from django.core.management.base import CommandError

from symbolic.fixing import auto_symbolic, fix_symbolic, set_edge_zero
from workspace.management.base import USAGE_EXIT_CODE, KanCommand, parse_edge, parse_names


class Command(KanCommand):
    help = 'Fix one edge (or every spline edge) to a symbolic function and commit the result'

    def add_command_arguments(self, parser):
        parser.add_argument('--edge', help="Edge written 'layer,from,to'")
        parser.add_argument('--fn', help='Library function for --edge')
        parser.add_argument('--zero', action='store_true', help='Set --edge to zero')
        parser.add_argument('--no-fit', action='store_true', help='Keep the identity affine for --fn')
        parser.add_argument('--auto', action='store_true', help='Fix every spline edge to its best match')
        parser.add_argument('--r2-floor', type=float, help='Minimum r2 accepted by --auto')
        parser.add_argument('--library', help='Comma-separated primitive names for --auto')

    def run(self, *args, **options):
        source = self.load_model()
        X = self.probe_inputs()
        if options['auto']:
            model, report = auto_symbolic(source, parse_names(options['library']) or None,
                                          options['r2_floor'], X)
            for entry in report.entries:
                status = entry.name if entry.resolved else 'unresolved'
                self.stdout.write(f'{entry.edge}\t{status}\t{entry.r2:.4f}')
            label = f'auto-symbolic {len(report.resolved)} edges'
        elif options['edge'] and (options['fn'] or options['zero']):
            edge = parse_edge(options['edge'])
            if options['zero']:
                model = set_edge_zero(source, edge)
                label = f"zero {options['edge']}"
            else:
                model = fix_symbolic(source, edge, options['fn'], fit_affine=not options['no_fit'], X=X)
                label = f"fix {options['edge']} {options['fn']}"
        else:
            raise CommandError('Pass --auto, or --edge with --fn or --zero', returncode=USAGE_EXIT_CODE)
        self.record(model, label, source)
