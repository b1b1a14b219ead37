"""Exception types shared across modules."""


class TrajforgeError(Exception):
    pass


class NonFiniteValue(TrajforgeError, ValueError):
    pass


class ShapeMismatch(TrajforgeError, ValueError):
    pass
