from .config import RuntimeSettings

__all__ = ['RuntimeSettings']
