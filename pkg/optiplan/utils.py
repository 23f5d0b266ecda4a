from __future__ import annotations
import dataclasses
import json
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Union

import numpy as np
import pandas as pd

from optiplan import OptiplanException

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"

NETWORK_SCHEMA = 'optiplan-net-1'
SCENARIO_SCHEMA = 'optiplan-scen-1'
TRAFFIC_SCHEMA = 'optiplan-traffic-1'
MODEL_SCHEMA = 'optiplan-model-1'
PLAN_SCHEMA = 'optiplan-plan-1'
FORECAST_SCHEMA = 'optiplan-forecast-1'
EVAL_SCHEMA = 'optiplan-eval-1'
IMPORTANCE_SCHEMA = 'optiplan-importance-1'
RUN_SCHEMA = 'optiplan-run-1'

DOCUMENT_CLASSES_BY_SCHEMA: Dict[str, Any] = {}


class SchemaError(OptiplanException):
    pass


def document_class(schema: str) -> Callable:
    """
    Register a class as the reader of documents tagged with `schema`.
    The class must provide a `from_document(dict)` classmethod.
    """
    def decorator(cls):
        cls.SCHEMA = schema
        DOCUMENT_CLASSES_BY_SCHEMA[schema] = cls
        return cls
    return decorator


def parse_timestamp(value: Union[str, pd.Timestamp]) -> pd.Timestamp:
    ts = pd.Timestamp(value)
    if ts.tzinfo is None:
        return ts.tz_localize('UTC')
    return ts.tz_convert('UTC')


def format_timestamp(ts: pd.Timestamp) -> str:
    return parse_timestamp(ts).strftime(TIMESTAMP_FORMAT)


def _plain(value: Any) -> Any:
    if value is None or isinstance(value, (str, bool, int, float)):
        return value
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, pd.Timestamp):
        return format_timestamp(value)
    if isinstance(value, DocumentMaker):
        return value.root
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = sorted(value) if isinstance(value, (set, frozenset)) else value
        return [_plain(v) for v in items]
    return str(value)


class DocumentMaker:
    """
    Fluent builder of versioned JSON documents.

        DocumentMaker(PLAN_SCHEMA).add('mode', 4).add({'tails': 640, 'regens': 110}).encode()
    """
    _root: dict

    def __init__(self, schema: str = None, parent: DocumentMaker = None, key: str = None, **kw):
        if schema:
            self._root = {'schema': schema}
            self._root.update({k: _plain(v) for k, v in kw.items()})
            assert parent is None, "The `parent` argument should not be passed apart with schema"
        elif parent is not None and key is not None:
            self._root = {k: _plain(v) for k, v in kw.items()}
            parent.root[key] = self._root
        else:
            self._root = {k: _plain(v) for k, v in kw.items()}

    @property
    def root(self) -> dict:
        return self._root

    def add(self, key: Union[dict, str], value: Optional[Any] = None) -> DocumentMaker:
        for key, value in key.items() if isinstance(key, dict) else [(key, value,)]:
            self._root[key] = _plain(value)
        return self

    def append(self, key: str, value: Any) -> DocumentMaker:
        self._root.setdefault(key, []).append(_plain(value))
        return self

    def encode(self) -> str:
        return json.dumps(self._root, indent=2, allow_nan=False) + '\n'

    def write(self, path: Union[str, Path]):
        Path(path).write_text(self.encode(), encoding='utf-8')


def read_document(source: Union[str, Path, dict], expected_schema: str = None) -> dict:
    if isinstance(source, dict):
        document = source
    else:
        try:
            document = json.loads(Path(source).read_text(encoding='utf-8'))
        except json.JSONDecodeError as err:
            raise SchemaError('%s is not valid JSON: %s' % (source, err))
    if not isinstance(document, dict):
        raise SchemaError('Document root must be an object')
    schema = document.get('schema')
    if expected_schema is not None and schema != expected_schema:
        raise SchemaError('Expected schema %r, got %r' % (expected_schema, schema))
    return document


def translate_to_object(source: Union[str, Path, dict], expected_schema: str = None):
    document = read_document(source, expected_schema)
    cls = DOCUMENT_CLASSES_BY_SCHEMA.get(document.get('schema'))
    if cls is None:
        raise SchemaError('Unsupported document schema %r' % document.get('schema'))
    return cls.from_document(document)
