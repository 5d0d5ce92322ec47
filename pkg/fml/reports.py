"""
Writing and reading the artifacts of a run.

JSON documents are written with `repr`-exact floats, so a number read back
is the number that was computed; infinities and NaNs, which JSON lacks, are
written as the strings `"inf"`, `"-inf"` and `"nan"`. CSV tables use the same
number formatting and an empty cell for missing values.

Every document read back is checked against a small schema (the keys it
must carry) before anything is computed from it.
"""

import csv
import json
import math
import os
import unicodedata
from os import path


__all__ = ('InvariantViolation', 'SCHEMAS', 'check_document', 'load_document', 'write_json', 'write_csv',
           'write_witness', 'witness_path', 'ensure_directory', 'format_number', 'plain')


class InvariantViolation(RuntimeError):
    """
    A computed result broke an invariant. `witness` says where.
    """

    def __init__(self, message: str, witness: dict = None):
        super().__init__(message)
        self.witness = witness or {}


# The keys each kind of document must have.
SCHEMAS = {
    'system': ('space', 'alpha', 'constants', 'spec'),
    'measure': ('system', 'rho', 'n0', 'depth', 'weights'),
    'validation': ('passed', 'axioms', 'fitted'),
    'classification': ('family', 'membership', 'prediction'),
    'doubling': ('sampling', 'max_ratio', 'fitted_constants'),
    'fat-thin': ('rho', 'verdict', 'levels'),
}


def check_document(doc, kind: str) -> dict:
    """
    Raise `ValueError` unless `doc` is a mapping with every key the schema
    of `kind` asks for.
    """
    try:
        keys = SCHEMAS[kind]
    except KeyError:
        raise ValueError("Unknown document kind: {}".format(kind))
    if not isinstance(doc, dict):
        raise ValueError("A {} document must be a JSON object, got {}".format(kind, type(doc).__name__))
    missing = [k for k in keys if k not in doc]
    if missing:
        raise ValueError("The {} document is missing {}".format(kind, ", ".join(missing)))
    return doc


def load_document(file_path: str, kind: str) -> dict:
    """Read a JSON document and check it against its schema."""
    try:
        with open(file_path, encoding="utf8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError("{} is not valid JSON: {}".format(file_path, e))
    except OSError as e:
        raise ValueError("Can't read {}: {}".format(file_path, e))
    if kind == 'system' and isinstance(doc, dict) and 'space' not in doc and 'system' in doc:
        # Measure documents carry their system.
        doc = doc['system']
    return check_document(doc, kind)


# === Number formatting ===

def format_number(value) -> str:
    """Round-trip decimal text for a number, `''` for `None`."""
    if value is None:
        return ''
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return repr(value)
    return str(value)


def plain(value):
    """
    A copy of `value` that `json` can write strictly: tuples become lists,
    non-finite floats become strings.
    """
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return format_number(value)
    if hasattr(value, 'item') and not isinstance(value, (str, bytes)):
        # numpy scalars
        return plain(value.item())
    return value


# === Files ===

def remove_control_chars(s: str) -> str:
    # The unicode category for control characters starts with 'C'
    return ''.join(c for c in s if not unicodedata.category(c).startswith('C'))


def ensure_directory(directory: str) -> str:
    """
    Sanitize directory string and ensure that the destination directory exists.
    """
    directory = remove_control_chars(directory) or '.'
    if not os.path.isdir(directory):
        os.makedirs(directory)
    return directory


def _prepare(file_path: str) -> str:
    file_path = remove_control_chars(file_path)
    ensure_directory(path.dirname(file_path) or '.')
    return file_path


def write_json(doc: dict, file_path: str) -> str:
    file_path = _prepare(file_path)
    with open(file_path, "w", encoding="utf8") as f:
        json.dump(plain(doc), f, indent=2, allow_nan=False)
        f.write("\n")
    return file_path


def write_csv(columns, rows, file_path: str) -> str:
    """One header line, then one line per row, numbers written round-trip."""
    file_path = _prepare(file_path)
    with open(file_path, "w", encoding="utf8", newline='') as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_number(v) if not isinstance(v, (list, tuple)) else
                             " ".join(format_number(x) for x in v) for v in row])
    return file_path


def witness_path(out: str) -> str:
    root, ext = path.splitext(out)
    return (root if ext == '.json' else out) + '.witness.json'


def write_witness(error: InvariantViolation, out: str) -> str:
    return write_json({"error": str(error), "witness": error.witness}, witness_path(out))
