from django.core.management.base import CommandError

from networks.serializers import save_model
from workspace.management.base import USAGE_EXIT_CODE, KanCommand


class Command(KanCommand):
    help = 'List network versions or rewind to one'

    def add_command_arguments(self, parser):
        parser.add_argument('action', choices=['list', 'rewind'])
        parser.add_argument('target', nargs='?', help='Version to rewind to, e.g. 0.1')

    def run(self, *args, **options):
        store = self.store
        if options['action'] == 'list':
            tree = store.render()
            self.stdout.write(tree or 'No versions yet')
            return
        if not options['target']:
            raise CommandError('rewind needs a target version', returncode=USAGE_EXIT_CODE)
        model, version = store.rewind(options['target'])
        if options['model']:
            save_model(model, options['model'])
        self.stdout.write(self.style.SUCCESS(f"✓ Restored {options['target']} as version {version}"))
