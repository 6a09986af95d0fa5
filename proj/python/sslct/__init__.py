try:
    from ._core import *  # noqa: F401,F403  installed layout
    from ._core import __version__  # noqa: F401
except ImportError:  # build-tree layout: _core.so directly on sys.path
    from _core import *  # noqa: F401,F403
    from _core import __version__  # noqa: F401
