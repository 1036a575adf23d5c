"""
Model file format.

A model document is JSON: the width spec, arities, input names, spline order
and one entry per edge carrying its knots, coefficients, scales, mask, mode,
symbolic descriptor and frozen flag. Floats are written with ``repr`` so a
save/load cycle reproduces every parameter bit for bit.
"""

import json
import logging

import numpy as np
from rest_framework import serializers

from kanscope.exceptions import KanIOError
from symbolic.library import LIBRARY
from .layers import KanLayer
from .models import MultKanModel

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class SymbolicSerializer(serializers.Serializer):
    """
    Symbolic descriptor of an edge.

    The edge computes ``c * f(a * x + b) + d`` for the named primitive.
    """

    name = serializers.ChoiceField(choices=sorted(LIBRARY))
    a = serializers.FloatField()
    b = serializers.FloatField()
    c = serializers.FloatField()
    d = serializers.FloatField()


class EdgeSerializer(serializers.Serializer):
    """Serializer for a single edge function."""

    i = serializers.IntegerField(min_value=0)
    j = serializers.IntegerField(min_value=0)
    knots = serializers.ListField(child=serializers.FloatField(), min_length=2)
    coef = serializers.ListField(child=serializers.FloatField(), min_length=1)
    scale_base = serializers.FloatField()
    scale_sp = serializers.FloatField()
    mask = serializers.IntegerField(min_value=0, max_value=1)
    mode = serializers.ChoiceField(choices=['spline', 'symbolic', 'both'])
    symbolic = SymbolicSerializer(allow_null=True)
    frozen = serializers.BooleanField()
    fresh = serializers.BooleanField(default=False)

    def validate(self, data):
        if data['mode'] != 'spline' and data['symbolic'] is None:
            raise serializers.ValidationError('Symbolic edges need a symbolic descriptor')
        return data


class LayerSerializer(serializers.Serializer):
    """Serializer for one KAN layer as a list of edges."""

    n_in = serializers.IntegerField(min_value=1)
    n_out = serializers.IntegerField(min_value=1)
    edges = EdgeSerializer(many=True)

    def validate(self, data):
        seen = {(edge['i'], edge['j']) for edge in data['edges']}
        expected = {(i, j) for i in range(data['n_in']) for j in range(data['n_out'])}
        if seen != expected or len(data['edges']) != len(expected):
            raise serializers.ValidationError('Every (i, j) edge must appear exactly once')
        if len({len(edge['coef']) for edge in data['edges']}) != 1:
            raise serializers.ValidationError('All edges of a layer share one coefficient count')
        return data


class ModelDocumentSerializer(serializers.Serializer):
    """
    Serializer for a whole network document.

    Validates the structure of a model file before it is turned back into a
    ``MultKanModel``; shape mismatches surface as validation errors.
    """

    format_version = serializers.ChoiceField(choices=[FORMAT_VERSION])
    width = serializers.ListField(
        child=serializers.ListField(child=serializers.IntegerField(min_value=0), min_length=2, max_length=2),
        min_length=2,
    )
    arities = serializers.ListField(child=serializers.ListField(child=serializers.IntegerField(min_value=2)))
    input_names = serializers.ListField(child=serializers.CharField())
    order = serializers.IntegerField(min_value=0)
    use_base = serializers.BooleanField()
    layers = LayerSerializer(many=True)

    def validate(self, data):
        if len(data['arities']) != len(data['width']):
            raise serializers.ValidationError('One arity list per level is required')
        if len(data['layers']) != len(data['width']) - 1:
            raise serializers.ValidationError('Layer count does not match the width spec')
        for layer in data['layers']:
            for edge in layer['edges']:
                if len(edge['knots']) != len(edge['coef']) + data['order'] + 1:
                    raise serializers.ValidationError(
                        f"Edge ({edge['i']},{edge['j']}) has {len(edge['knots'])} knots "
                        f"for {len(edge['coef'])} coefficients"
                    )
        return data


def dump_model(model):
    """Plain-data document for ``model``."""
    layers = []
    for layer in model.layers:
        modes = layer.modes()
        edges = []
        for i in range(layer.n_in):
            for j in range(layer.n_out):
                symbolic = None
                if layer.symbolic[i, j] > 0:
                    a, b, c, d = (float(v) for v in layer.affine[i, j])
                    symbolic = {'name': str(layer.fn_names[i, j]), 'a': a, 'b': b, 'c': c, 'd': d}
                edges.append({
                    'i': i,
                    'j': j,
                    'knots': [float(v) for v in layer.knots[i, j]],
                    'coef': [float(v) for v in layer.coef[i, j]],
                    'scale_base': float(layer.scale_base[i, j]),
                    'scale_sp': float(layer.scale_sp[i, j]),
                    'mask': int(layer.mask[i, j]),
                    'mode': str(modes[i, j]),
                    'symbolic': symbolic,
                    'frozen': bool(layer.frozen[i, j]),
                    'fresh': bool(layer.fresh[i, j]),
                })
        layers.append({'n_in': layer.n_in, 'n_out': layer.n_out, 'edges': edges})
    return {
        'format_version': FORMAT_VERSION,
        'width': [list(level) for level in model.width],
        'arities': [list(row) for row in model.arities],
        'input_names': list(model.input_names),
        'order': model.order,
        'use_base': model.use_base,
        'layers': layers,
    }


def dumps_model(model):
    return json.dumps(dump_model(model), sort_keys=True, indent=1)


def build_model(document):
    """Validate a document and rebuild the network it describes."""
    serializer = ModelDocumentSerializer(data=document)
    serializer.is_valid(raise_exception=True)
    data = serializer.validated_data
    # validated floats are rebuilt from the raw document to keep every bit
    layers = []
    for raw in document['layers']:
        n_in, n_out = raw['n_in'], raw['n_out']
        n_basis = len(raw['edges'][0]['coef'])
        n_knots = len(raw['edges'][0]['knots'])
        layer = KanLayer.blank(n_in, n_out, max(n_basis - data['order'], 1), data['order'])
        layer.knots = np.empty((n_in, n_out, n_knots))
        layer.coef = np.empty((n_in, n_out, n_basis))
        for edge in raw['edges']:
            i, j = edge['i'], edge['j']
            layer.knots[i, j] = edge['knots']
            layer.coef[i, j] = edge['coef']
            layer.scale_base[i, j] = edge['scale_base']
            layer.scale_sp[i, j] = edge['scale_sp']
            layer.mask[i, j] = edge['mask']
            layer.numeric[i, j] = 0.0 if edge['mode'] == 'symbolic' else 1.0
            layer.symbolic[i, j] = 0.0 if edge['mode'] == 'spline' else 1.0
            if edge['symbolic'] is not None:
                sym = edge['symbolic']
                layer.fn_names[i, j] = sym['name']
                layer.affine[i, j] = (sym['a'], sym['b'], sym['c'], sym['d'])
            layer.frozen[i, j] = edge['frozen']
            layer.fresh[i, j] = edge.get('fresh', False)
        layers.append(layer)
    return MultKanModel(
        width=[tuple(level) for level in data['width']],
        arities=[list(row) for row in data['arities']],
        layers=layers,
        input_names=list(data['input_names']),
        order=data['order'],
        use_base=data['use_base'],
    )


def loads_model(text):
    return build_model(json.loads(text))


def save_model(model, path):
    try:
        with open(path, 'w') as handle:
            handle.write(dumps_model(model))
    except OSError as exc:
        raise KanIOError(f'Cannot write model to {path}: {exc}') from exc
    logger.info(f'Saved network to {path}')


def load_model(path):
    try:
        with open(path) as handle:
            text = handle.read()
    except OSError as exc:
        raise KanIOError(f'Cannot read model from {path}: {exc}') from exc
    try:
        return loads_model(text)
    except json.JSONDecodeError as exc:
        raise serializers.ValidationError(f'{path} is not valid JSON: {exc}') from exc
