"""
Dataset files.

A dataset is a CSV file whose header lists the input names followed by the
output names. Train rows come first, then test rows; every value is written
with ``repr`` so a file reloads to the same floats.
"""

import csv
import logging

import numpy as np
from rest_framework import serializers

from kanscope.exceptions import KanIOError
from training.trainer import Dataset

logger = logging.getLogger(__name__)


class DatasetHeaderSerializer(serializers.Serializer):
    """Serializer for the header row of a dataset file."""

    columns = serializers.ListField(child=serializers.CharField(), min_length=2)
    n_outputs = serializers.IntegerField(min_value=1)

    def validate(self, data):
        columns = data['columns']
        if len(set(columns)) != len(columns):
            raise serializers.ValidationError('Column names must be unique')
        if data['n_outputs'] >= len(columns):
            raise serializers.ValidationError(
                f"{data['n_outputs']} output column(s) leave no inputs among {len(columns)} columns"
            )
        return data


def save_dataset(dataset, path):
    X = np.vstack([dataset.train_inputs, dataset.test_inputs])
    Y = np.vstack([dataset.train_labels, dataset.test_labels])
    try:
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle)
            writer.writerow(list(dataset.input_names) + list(dataset.output_names))
            for inputs, labels in zip(X, Y):
                writer.writerow([repr(float(v)) for v in inputs] + [repr(float(v)) for v in labels])
    except OSError as exc:
        raise KanIOError(f'Cannot write dataset to {path}: {exc}') from exc
    logger.info(f'Saved {len(X)} samples to {path}')


def load_dataset(path, n_outputs=1, test_fraction=0.2, seed=0):
    """Read a dataset file and split it into train and test parts."""
    try:
        with open(path, newline='') as handle:
            rows = list(csv.reader(handle))
    except OSError as exc:
        raise KanIOError(f'Cannot read dataset from {path}: {exc}') from exc
    if not rows:
        raise serializers.ValidationError(f'{path} has no header row')
    serializer = DatasetHeaderSerializer(data={'columns': rows[0], 'n_outputs': n_outputs})
    serializer.is_valid(raise_exception=True)
    columns = serializer.validated_data['columns']
    try:
        values = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=float)
    except ValueError as exc:
        raise serializers.ValidationError(f'{path} holds a non-numeric value: {exc}') from exc
    values = values.reshape(-1, len(columns))
    n_inputs = len(columns) - n_outputs
    return Dataset.split(values[:, :n_inputs], values[:, n_inputs:], test_fraction, seed,
                         columns[:n_inputs], columns[n_inputs:])
