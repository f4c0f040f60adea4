import typing as t

import enum


class ExitCode(enum.IntEnum):
    OK = 0
    USAGE = 1
    CONFIG = 2
    RUNTIME = 3
    VERIFICATION = 4


class AnchorError(Exception):
    exit_code: t.ClassVar[ExitCode] = ExitCode.RUNTIME


class ConfigError(AnchorError):
    exit_code = ExitCode.CONFIG


class VerificationMismatch(AnchorError):
    exit_code = ExitCode.VERIFICATION

    def __init__(self, message: str, *, index: t.Optional[int] = None) -> None:
        super().__init__(message)
        self.index = index


# Wire protocol.
class ProtocolError(AnchorError):
    pass


class MalformedTopic(ProtocolError):
    pass


class PatternInvalid(ProtocolError):
    pass


class MalformedEnvelope(ProtocolError):
    pass


class PayloadTooLarge(ProtocolError):
    pass


class FrameTooLarge(ProtocolError):
    pass


class BadMagic(ProtocolError):
    pass


class UnknownTag(ProtocolError):
    pass


class LengthMismatch(ProtocolError):
    pass


class Truncated(ProtocolError):
    def __init__(self, bytes_needed: int) -> None:
        super().__init__(f"Need {bytes_needed} more bytes")
        self.bytes_needed = bytes_needed


# Canonical Records.
class RecordError(AnchorError):
    pass


class IoFailure(RecordError):
    pass


class SchemaInvalid(RecordError):
    pass


class RegionBadMagic(RecordError):
    pass


class VersionUnsupported(RecordError):
    pass


class RoleViolation(RecordError):
    pass


class ArityMismatch(RecordError):
    pass


class ContendedTimeout(RecordError):
    pass


class UnknownGroup(RecordError):
    pass


class NameCollision(RecordError):
    pass


class LogCorrupt(RecordError):
    pass


# Bus.
class BusError(AnchorError):
    pass


class VersionMismatch(BusError):
    pass


class SendBackpressure(BusError):
    pass


class TargetDown(BusError):
    pass


# Closed-loop demo.
class DemoError(AnchorError):
    pass


class StaleSnapshot(DemoError):
    pass


class ExecutionFailure(DemoError):
    pass


# Bench.
class BenchError(AnchorError):
    pass


class EmptySamples(BenchError):
    pass


class RateUnachievable(BenchError):
    def __init__(self, target_rate: float, achieved_rate: float) -> None:
        super().__init__(
            f"Achieved {achieved_rate:.1f} msg/s, below 95% of {target_rate:.1f} msg/s"
        )
        self.target_rate = target_rate
        self.achieved_rate = achieved_rate


class HarnessFault(BenchError):
    pass
