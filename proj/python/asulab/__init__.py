"""Attention-smoothing unlearning laboratory (Python front end)."""

try:
    from ._asu import *  # noqa: F401,F403  (installed wheel layout)
    from ._asu import __doc__ as _doc
except ImportError:  # pragma: no cover - in-tree builds put _asu on sys.path
    from _asu import *  # noqa: F401,F403
    from _asu import __doc__ as _doc

__doc__ = _doc
