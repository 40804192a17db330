from episodes.exceptions import HpanError, ShapeError


class SegmentationError(HpanError):
    module = 'seg_head'


class LossShapeError(SegmentationError, ShapeError):
    module = 'seg_head'


class LossDomainError(SegmentationError, ValueError):
    pass


class NonFiniteLossError(SegmentationError):
    def __init__(self, step, report):
        self.step = step
        self.report = report
        super().__init__(f"Loss became non-finite at step {step} (total={report.total})")
