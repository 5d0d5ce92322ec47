from .main import *  # noqa

__all__ = ("run", "RunConfig")
