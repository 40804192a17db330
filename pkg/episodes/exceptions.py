class HpanError(Exception):
    """Base of every error raised by the pipeline apps.

    ``module`` names the pipeline stage so command-line messages read
    ``episode_core: bad magic ...``.
    """

    module = 'hpan'


class InvariantError(HpanError, ValueError):
    module = 'episode_core'


class ShapeError(HpanError, ValueError):
    module = 'episode_core'


class ConfigError(HpanError, ValueError):
    module = 'episode_core'


class TensorIOError(HpanError, OSError):
    module = 'episode_core'

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class TensorFormatError(HpanError):
    module = 'episode_core'


class BadMagicError(TensorFormatError):
    pass


class UnsupportedFormatError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class NonFiniteError(TensorFormatError, InvariantError):
    pass
