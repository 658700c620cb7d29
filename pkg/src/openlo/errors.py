class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key when known."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.message = message
        self.field = field


class TrainingDiverged(RuntimeError):
    """Inner-loop training produced a non-finite loss, update or parameter."""
