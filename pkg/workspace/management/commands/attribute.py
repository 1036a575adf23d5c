from attribution.scores import compute_attribution, scores_to_csv
from workspace.management.base import KanCommand


class Command(KanCommand):
    help = 'Print input attribution scores of the network on --data'

    def add_command_arguments(self, parser):
        parser.add_argument('--csv', help='Also write node and edge scores to this CSV path')

    def run(self, *args, **options):
        dataset = self.load_dataset()
        model = self.load_model()
        scores = compute_attribution(model, dataset.train_inputs)
        for name, score in scores.ranked_inputs():
            self.stdout.write(f'{name}\t{score:.6g}')
        if options['csv']:
            scores_to_csv(scores, options['csv'])
            self.stdout.write(self.style.SUCCESS(f"✓ Wrote scores to {options['csv']}"))
