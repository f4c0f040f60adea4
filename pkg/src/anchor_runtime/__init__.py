"""
Publish-subscribe bus, shared memory-mapped records and a closed-loop runtime.
"""

try:
    from importlib.metadata import PackageNotFoundError
    from importlib.metadata import version
except ImportError:  # pragma: no cover
    from importlib_metadata import PackageNotFoundError  # type: ignore
    from importlib_metadata import version  # type: ignore


try:
    __version__ = version("anchor-runtime")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "unknown"

__all__ = ("__version__",)
