import numpy as np

from training.trainer import train
from workspace.conserved import VECTOR_FIELDS, train_conserved
from workspace.management.base import KanCommand


class Command(KanCommand):
    help = 'Train the network on --data and commit the result'

    def add_command_arguments(self, parser):
        parser.add_argument('--steps', type=int, help='Optimizer steps')
        parser.add_argument('--optimizer', help='adam or lbfgs')
        parser.add_argument('--lr', type=float, help='Learning rate')
        parser.add_argument('--lambda-l1', type=float, help='L1 penalty weight')
        parser.add_argument('--lambda-entropy', type=float, help='Entropy penalty weight')
        parser.add_argument('--batch-size', type=int, help='Mini-batch size (default: full batch)')
        parser.add_argument('--conserved', choices=sorted(VECTOR_FIELDS),
                            help='Learn a conserved quantity of this vector field; labels are ignored')
        parser.add_argument('--log', help='Write the per-step log to this CSV path')

    def run(self, *args, **options):
        dataset = self.load_dataset()
        config = self.train_config(
            steps=options['steps'], optimizer=options['optimizer'], learning_rate=options['lr'],
            lambda_l1=options['lambda_l1'], lambda_entropy=options['lambda_entropy'],
            batch_size=options['batch_size'],
        )
        source = self.load_model()
        model = source.copy()
        if options['conserved']:
            states = np.vstack([dataset.train_inputs, dataset.test_inputs])
            log = train_conserved(model, options['conserved'], states, config)
            label = f"train {config.steps} steps conserved {options['conserved']}"
        else:
            log = train(model, dataset, config)
            label = f'train {config.steps} steps'
        if options['log']:
            log.to_csv(options['log'])
        final = log.final
        if final:
            self.stdout.write(f"Final train loss {final['train_loss']:.4e}, test loss {final['test_loss']:.4e}")
        self.record(model, label, source)
