"""Exception types shared across the package."""


class MprError(Exception):
    """Base class for all package errors."""


class InputError(MprError, ValueError):
    """Malformed or invalid user input (schema, samples, flags, configs)."""


class GuardError(MprError, RuntimeError):
    """A computation was refused because it exceeds an exactness guard."""
