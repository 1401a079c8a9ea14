"""Exception hierarchy shared by every weatherbias module."""


class WeatherBiasError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(WeatherBiasError):
    """Invalid configuration, class set mismatch or bad parameter."""


class ParseError(WeatherBiasError):
    """Malformed annotation document.

    ``offset`` is the byte offset of the failure when known, ``record`` the
    index of the offending object/annotation for record-level errors.
    """

    def __init__(self, message, offset=None, record=None):
        super().__init__(message)
        self.offset = offset
        self.record = record


class VersionError(WeatherBiasError):
    """File carries an unexpected magic header or schema version."""


class ChecksumError(WeatherBiasError):
    """Checkpoint payload does not match its trailing checksum."""


class ImageFormatError(WeatherBiasError):
    """Unsupported or truncated image file."""


class GenerationError(WeatherBiasError):
    """Scene generator could not place objects after bounded retries."""


class EncodingError(WeatherBiasError):
    """Box cannot be encoded relative to an anchor."""


class ContractError(WeatherBiasError):
    """Shape or length contract violated by the caller."""


class TrainingError(WeatherBiasError):
    """Non-finite loss during training or gradient evaluation."""

    def __init__(self, message, step=None, image_index=None):
        super().__init__(message)
        self.step = step
        self.image_index = image_index


class CorruptionError(WeatherBiasError):
    """One or more images failed during dataset corruption."""

    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = list(failures)


class EvaluationError(WeatherBiasError):
    """Evaluation is undefined for the given inputs."""


class StageError(WeatherBiasError):
    """A pipeline stage failed or a dependency is missing.

    ``outcome`` carries the results of the stages completed before the
    failure, when raised by the experiment runner.
    """

    def __init__(self, message, outcome=None):
        super().__init__(message)
        self.outcome = outcome
