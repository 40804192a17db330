from episodes.exceptions import ConfigError


class RunConfigError(ConfigError):
    module = 'cli'
