from app.config import VERSION

__version__ = VERSION
