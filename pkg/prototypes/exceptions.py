from episodes.exceptions import HpanError, ShapeError


class PrototypeError(HpanError):
    module = 'pgam'


class EmptyForegroundError(PrototypeError):
    """A support image or query episode has no pixel to cluster or compare."""

    def __init__(self, index, message):
        self.index = index
        super().__init__(message)


class ClusteringError(PrototypeError, ValueError):
    pass


class PrototypeShapeError(PrototypeError, ShapeError):
    module = 'pgam'
