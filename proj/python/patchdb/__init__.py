"""Embeddable engine for storing, indexing, and querying image patches.

The heavy lifting lives in the compiled ``_core`` extension; this package
re-exports its JSON-driven entry points.  Plan files and bench configs use
the same schema as the ``patchdb`` command-line tool.
"""

from ._core import (
    __version__,
    collection_patches,
    collection_stats,
    gen_scene,
    run_bench,
    run_etl,
    run_query,
    store_stats,
)

__all__ = [
    "__version__",
    "collection_patches",
    "collection_stats",
    "gen_scene",
    "run_bench",
    "run_etl",
    "run_query",
    "store_stats",
]
