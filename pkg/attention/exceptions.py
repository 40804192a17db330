from episodes.exceptions import ShapeError


class AttentionShapeError(ShapeError):
    module = 'bpam'
