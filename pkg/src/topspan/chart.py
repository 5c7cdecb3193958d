"""CKY kernel selection: compiled extension when importable, else pure Python.

Set ``TOPSPAN_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import chart_py

BACKEND = "python"
decode_table = chart_py.decode_table
decode_split = chart_py.decode_split

if os.environ.get("TOPSPAN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _chart
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        decode_table = _chart.decode_table
        decode_split = _chart.decode_split
