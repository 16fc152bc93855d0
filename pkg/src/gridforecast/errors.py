"""Exception types raised across the package."""


class GridForecastError(Exception):
    """Base class for all package errors."""


class ConfigError(GridForecastError, ValueError):
    pass


class ParseError(GridForecastError, ValueError):
    def __init__(self, line, message="malformed annotation row"):
        self.line = line
        super().__init__(f"line {line}: {message}")


class MissingSceneError(GridForecastError, KeyError):
    def __init__(self, scene_id):
        self.scene_id = scene_id
        super().__init__(f"no image registered for scene {scene_id!r}")

    def __str__(self):
        return self.args[0]


class SpecError(GridForecastError, ValueError):
    pass


class ShapeError(GridForecastError, ValueError):
    pass


class LengthMismatchError(GridForecastError, ValueError):
    pass


class PaletteError(GridForecastError, ValueError):
    pass
