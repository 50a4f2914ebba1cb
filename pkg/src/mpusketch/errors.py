class MpuError(Exception):
    """Base class for library errors."""


class SlotRangeError(MpuError, ValueError):
    pass


class IncompatibleSketchError(MpuError, ValueError):
    pass


class SketchFormatError(MpuError, ValueError):
    pass


class MemoryCapError(MpuError, ValueError):
    def __init__(self, needed: int, cap: int):
        super().__init__(f"counter memory {needed} bytes exceeds cap {cap} bytes")
        self.needed = needed
        self.cap = cap


class InfeasibleSpecError(MpuError, ValueError):
    pass


class TraceFormatError(MpuError, ValueError):
    pass
