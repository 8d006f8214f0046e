"""Exception hierarchy shared by the sampling engine."""


class PdmpError(Exception):
    """Base class for all errors raised by pdmpbnn."""


class ModelError(PdmpError):
    """Invalid model specification, dimension mismatch or non-finite energy."""


class ThinningError(PdmpError):
    """Event-time simulation failed (non-finite rate, iteration cap)."""


class SamplingError(PdmpError):
    """A chain failed; carries the event index and process clock."""

    def __init__(self, message, event_index=None, clock=None):
        super().__init__(message)
        self.event_index = event_index
        self.clock = clock

    def __str__(self):
        msg = super().__str__()
        if self.event_index is not None:
            msg = f"{msg} (event {self.event_index}, clock {self.clock:.6g})"
        return msg


class ConfigError(PdmpError):
    """Run configuration failed validation; ``problems`` lists (field, message)."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{k}: {m}" for k, m in self.problems))


class DiagnosticError(PdmpError):
    """Input to a diagnostic is degenerate (constant chain, empty input, bad shape)."""
