"""
errors.py — Error categories
------------------------------
Every failure the CLI reports maps to one of these. The category string is
what the user sees (`error [config]: ...`), the exit code is what scripts see.
"""


class SimulationError(Exception):
    category = "simulation"
    exit_code = 1


class ConfigError(SimulationError):
    category = "config"
    exit_code = 2


class AssetNotFoundError(SimulationError, FileNotFoundError):
    category = "asset"
    exit_code = 3

    def __init__(self, path, what: str = "asset"):
        self.path = str(path)
        super().__init__(f"{what} not found: {self.path}")


class MeshFormatError(SimulationError):
    category = "mesh-format"
    exit_code = 4

    def __init__(self, path, message: str, line: int | None = None, offset: int | None = None):
        self.path = str(path)
        self.line = line
        self.offset = offset
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif offset is not None:
            where = f" (byte offset {offset})"
        super().__init__(f"{self.path}{where}: {message}")


class SensorRangeError(SimulationError, ValueError):
    category = "sensor-range"
    exit_code = 5


class ResolutionMismatchError(SimulationError, ValueError):
    category = "resolution"
    exit_code = 6


class ReportWriteError(SimulationError, OSError):
    category = "io"
    exit_code = 7

    def __init__(self, path, reason: str):
        self.path = str(path)
        super().__init__(f"cannot write {self.path}: {reason}")
