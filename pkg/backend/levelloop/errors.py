class LevelLoopError(Exception):
    """Base class for every error raised by the engine."""


class GeometryError(LevelLoopError):
    pass


class SwallowedPoint(GeometryError):
    def __init__(self, point: complex, step_index: int):
        super().__init__(f"point {point} swallowed at slit {step_index}")
        self.point = point
        self.step_index = step_index


class ResolutionTooCoarse(GeometryError):
    pass


class ViewpointOutside(GeometryError):
    pass


class AmbiguousWinding(GeometryError):
    def __init__(self, winding: float):
        super().__init__(f"winding number {winding:.3f} is not within 0.1 of +1 or -1")
        self.winding = winding


class DriverError(LevelLoopError):
    pass


class HeightOutOfRange(DriverError, ValueError):
    def __init__(self, height):
        super().__init__(f"height {height} outside the open interval (-1, 1)")
        self.height = height


class ThresholdNotReached(DriverError):
    def __init__(self, capacity: float, cap: float):
        super().__init__(f"continuation threshold not reached by capacity {capacity:.3f} (cap {cap})")
        self.capacity = capacity
        self.cap = cap


class SequenceError(LevelLoopError):
    pass


class LedgerError(SequenceError):
    pass


class TargetsTooClose(SequenceError):
    pass


class LatticeError(LevelLoopError):
    pass


class SizeTooLarge(LatticeError):
    pass


class NoLoopFound(LatticeError):
    pass


class HarnessError(LevelLoopError):
    pass


class ConfigError(HarnessError):
    pass


class SampleTooSmall(HarnessError):
    def __init__(self, size: int, minimum: int = 30):
        super().__init__(f"sample of size {size} below the minimum {minimum}")
        self.size = size
