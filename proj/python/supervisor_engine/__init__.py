"""Python bindings for the supervisor engine.

JSON-valued calls return parsed Python objects.
"""

import json

from . import _core
from ._core import MemoryStore, classify, detect_modality, route, token_cost

__all__ = [
    "MemoryStore",
    "classify",
    "cli",
    "compare",
    "default_workload_spec",
    "detect_modality",
    "generate_workload",
    "route",
    "run_policy",
    "token_cost",
]


def _text(obj):
    return obj if isinstance(obj, str) else json.dumps(obj)


def cli(*args, stdin=""):
    """Run supervisord with the given arguments. Returns (code, stdout, stderr)."""
    return _core.run_cli([str(a) for a in args], stdin)


def default_workload_spec():
    return json.loads(_core.default_workload_spec())


def generate_workload(spec):
    return json.loads(_core.generate_workload(_text(spec)))


def run_policy(workload, policy="centralized", **config):
    """Accepts a workload or a workload spec (dict or JSON text)."""
    return json.loads(_core.run_policy(_text(workload), policy, **config))


def compare(baseline, candidate):
    return json.loads(_core.compare(_text(baseline), _text(candidate)))
