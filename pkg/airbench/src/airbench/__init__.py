"""Thin bindings over the ``air`` command line for training pipelines.

This package holds zero numeric logic: every value is produced by the main
engine, reached exclusively through its public CLI and file formats (AIRM
binary maps, JSON, CSV).  Typical use::

    import airbench

    with airbench.open_corpus("path/to/corpus") as h:
        steps = h.b_aire(attention_array, "q00001")
        targets = h.b_targets("q00001")
        rho = h.b_metrics(map_a, map_b, "spearman")

Handles are not shareable across threads; open one handle per thread.
"""

from .bindings import (
    BindingsError,
    BoundHandle,
    EngineError,
    UsageError,
    b_aire,
    b_metrics,
    b_targets,
    open_corpus,
)

__version__ = "0.1.0"
__all__ = [
    "open_corpus",
    "b_aire",
    "b_targets",
    "b_metrics",
    "BoundHandle",
    "BindingsError",
    "EngineError",
    "UsageError",
]
