class StreamJoinError(Exception):
    pass


class ConfigError(StreamJoinError):
    """Invalid run configuration; message names the offending field."""


class ProtocolError(StreamJoinError):
    """A node violated the fixed communication contract."""


class SlotViolation(ProtocolError):
    """A tuple batch was sent outside the fixed (epoch, slot, slave) order."""


class MetricsError(StreamJoinError):
    """Measurement pipeline fault, e.g. an empty measurement window."""
