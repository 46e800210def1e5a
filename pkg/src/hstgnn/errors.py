"""Exception hierarchy shared by all subpackages."""


class HstGnnError(Exception):
    """Base class; the CLI turns these into one-line error records."""

    kind = "error"


class ShapeError(HstGnnError, ValueError):
    kind = "shape"


class RegistrationError(HstGnnError, KeyError):
    kind = "registration"

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class NonFiniteGradientError(HstGnnError, FloatingPointError):
    kind = "nonfinite_grad"


class GradCheckError(HstGnnError):
    kind = "gradcheck"


class ConfigError(HstGnnError, ValueError):
    kind = "config"


class SampleParseError(HstGnnError, ValueError):
    kind = "parse"


class VocabularyError(HstGnnError, ValueError):
    kind = "vocab"


class CheckpointError(HstGnnError, ValueError):
    kind = "checkpoint"


class GuardError(HstGnnError, ValueError):
    kind = "guard"
