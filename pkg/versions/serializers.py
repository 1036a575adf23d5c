from rest_framework import serializers

from kanscope.exceptions import UnknownVersionError
from .identifiers import VersionId


class VersionField(serializers.Field):
    """``major.minor`` text in documents, ``VersionId`` in validated data."""

    def to_internal_value(self, data):
        try:
            return VersionId.parse(data)
        except UnknownVersionError as exc:
            raise serializers.ValidationError(str(exc)) from exc

    def to_representation(self, value):
        return str(value)


class JournalEntrySerializer(serializers.Serializer):
    """Serializer for one line of the checkpoint journal."""

    event = serializers.ChoiceField(choices=['commit', 'rewind'])
    version = VersionField()
    parent = VersionField(allow_null=True)
    op = serializers.CharField(allow_blank=True)
    snapshot = serializers.CharField()
    timestamp = serializers.DateTimeField()

    def validate(self, data):
        if data['parent'] is None and data['version'] != VersionId(0, 0):
            raise serializers.ValidationError('Only version 0.0 may lack a parent')
        if data['event'] == 'rewind' and data['parent'] is None:
            raise serializers.ValidationError('A rewind must name the version it restored')
        return data
