from episodes.exceptions import ShapeError


class MetricsShapeError(ShapeError):
    module = 'metrics'
