"""Exception types.

Every error carries a short machine-readable ``code`` so the CLI can print
``error[CODE]: message`` on a single line.
"""


class TerecError(Exception):
    code = "E_TEREC"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def oneline(self) -> str:
        text = " ".join(self.message.split())
        return f"error[{self.code}]: {text}"


class ShapeError(TerecError, ValueError):
    code = "E_SHAPE"


class NonFiniteError(TerecError, FloatingPointError):
    code = "E_NONFINITE"


class DataFormatError(TerecError, ValueError):
    code = "E_DATA"


class SamplingError(TerecError, RuntimeError):
    code = "E_SAMPLING"


class ConfigError(TerecError, ValueError):
    code = "E_CONFIG"


class CheckpointError(TerecError, ValueError):
    code = "E_CHECKPOINT"


class CheckpointVersionError(CheckpointError):
    code = "E_CHECKPOINT_VERSION"


class TensorExtentError(CheckpointError):
    code = "E_TENSOR_EXTENT"


class UnknownIdError(TerecError, KeyError):
    code = "E_UNKNOWN_ID"

    def __str__(self) -> str:
        return self.message
