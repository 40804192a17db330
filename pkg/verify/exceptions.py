from episodes.exceptions import HpanError


class VerifyError(HpanError):
    module = 'verify'


class GuardExceededError(VerifyError):
    """The full-rank oracle would need more MACs than the configured guard allows."""

    def __init__(self, predicted, limit):
        self.predicted = predicted
        self.limit = limit
        self.reduction = predicted / limit
        super().__init__(
            f"Full attention needs {predicted:.3g} MACs, above the guard of {limit:.3g}; "
            f"shrink K*HW*T*HW by at least {self.reduction:.1f}x"
        )


class NonFiniteEvaluationError(VerifyError):
    def __init__(self, index, value):
        self.index = index
        super().__init__(f"Function is not finite ({value}) when perturbing coordinate {index}")


class GradientCheckError(VerifyError):
    def __init__(self, failures, report=None):
        self.failures = dict(failures)
        self.report = dict(report or failures)
        listed = ', '.join(f"{name} ({error:.3g})" for name, error in self.failures.items())
        super().__init__(f"Gradient check failed for {listed}")
