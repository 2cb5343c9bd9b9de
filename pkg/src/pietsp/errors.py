class PietspError(Exception):
    """Base class for every error this package raises deliberately."""
