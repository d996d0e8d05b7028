"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ContractViolation -> 1,
MalformedInput -> 2. NumericFailure signals a non-finite value inside
numeric code and also exits 1.
"""


class ContractViolation(Exception):
    """A caller broke a documented precondition or invariant."""


class MalformedInput(Exception):
    """An input file or stream does not match its documented format."""


class NumericFailure(Exception):
    """A numeric computation produced non-finite values."""
