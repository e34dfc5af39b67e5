"""Exception hierarchy shared across the package.

Every domain error derives from :class:`CarbonFlowError` so callers (and the
CLI) can distinguish domain failures (exit code 1) from usage errors (exit
code 2) without matching on message text.
"""

from __future__ import annotations


class CarbonFlowError(Exception):
    """Base class for all domain errors raised by this package."""


class InvalidNetwork(CarbonFlowError):
    """A solver was handed a network that fails structural validation."""

    def __init__(self, report):
        self.report = report
        lines = "; ".join(v.message for v in report.violations)
        super().__init__(f"network fails validation: {lines}")


class UnknownId(CarbonFlowError):
    """A snapshot, contract or perturbation references an id not in the network."""


class SingularSystem(CarbonFlowError):
    """A linear system has no unique solution (disconnected or degenerate)."""


class BalanceInfeasible(CarbonFlowError):
    """Slack absorption cannot restore power balance within generator limits."""


class ZeroThroughflowNode(CarbonFlowError):
    """A node has zero power inflow; its intensity is defined as zero.

    Non-fatal: the tracing solver flags such nodes on the solution instead of
    raising, so this class mostly serves as a marker for callers that want to
    escalate the flag themselves.
    """


class InfeasibleContract(CarbonFlowError):
    """A bilateral contract exceeds source output, sink demand or deliverability."""


class ZeroGeneration(CarbonFlowError):
    """Average emission factor is undefined: no generation in the chosen area."""


class MixedMethods(CarbonFlowError):
    """Refusal to aggregate reports produced under different accounting methods."""


class Infeasible(CarbonFlowError):
    """An optimization problem has no feasible point."""


class UnboundedProblem(CarbonFlowError):
    """An optimization problem is unbounded below."""


class ZeroDelta(CarbonFlowError):
    """A consequential query was asked with a zero perturbation size."""


class NotConverged(CarbonFlowError):
    """Successive linearization hit its iteration limit.

    Carries the best iterate found and the full iteration log so callers can
    inspect how close the procedure got.
    """

    def __init__(self, message, best=None, log=()):
        super().__init__(message)
        self.best = best
        self.log = tuple(log)


class CapacityViolated(CarbonFlowError):
    """A storage step would push stored energy outside [0, capacity]."""


class PowerLimitViolated(CarbonFlowError):
    """A storage step exceeds the unit's charge/discharge power limit."""


class InfeasibleSchedule(CarbonFlowError):
    """A storage schedule cannot be realized over the horizon."""


class ParseError(CarbonFlowError):
    """An input file is not syntactically valid (JSON/CSV level)."""


class SchemaError(CarbonFlowError):
    """An input file parses but violates the grid schema.

    ``locations`` is a list of (json_pointer, message) pairs.
    """

    def __init__(self, locations):
        self.locations = tuple(locations)
        detail = "; ".join(f"{ptr}: {msg}" for ptr, msg in self.locations)
        super().__init__(f"schema violation: {detail}")


class ValidationFailed(CarbonFlowError):
    """A parsed grid fails semantic network validation."""

    def __init__(self, report):
        self.report = report
        lines = "; ".join(v.message for v in report.violations)
        super().__init__(f"grid validation failed: {lines}")


class UnknownColumn(CarbonFlowError):
    """A time-series column references an unknown kind or id."""


class NegativeLoad(CarbonFlowError):
    """A time-series row carries a negative load value."""
