"""Exception hierarchy. Each class maps onto one CLI exit status."""


class NetcashError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(NetcashError):
    """Bad user input: context syntax, schema mismatch, unparseable cells, tampered reports."""


class DataIOError(NetcashError):
    """A file could not be read or written."""


class SearchError(NetcashError):
    """The search could not produce a single successful trial."""

    def __init__(self, message, reasons=None):
        super().__init__(message)
        self.reasons = dict(reasons or {})


class InfeasibleError(NetcashError):
    """Raised when the feasibility verdict blocks a run without override."""

    def __init__(self, report):
        super().__init__(f"dataset judged infeasible: {report.rationale}")
        self.report = report
