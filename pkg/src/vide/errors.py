"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the CLI can report
failures without parsing messages.
"""


class VideError(Exception):
    code = "error"


class ContractViolation(VideError, ValueError):
    """An argument does not satisfy an operation's preconditions."""

    code = "contract_violation"


class InvalidParameter(VideError, ValueError):
    code = "invalid_parameter"


class EvaluationError(VideError, ArithmeticError):
    """A user-supplied evaluator returned a non-finite value."""

    code = "evaluation_error"

    def __init__(self, message, t=None, tau=None):
        if t is not None:
            where = f"t={t:.17g}" if tau is None else f"(t, tau)=({t:.17g}, {tau:.17g})"
            message = f"{message} at {where}"
        super().__init__(message)
        self.t = t
        self.tau = tau


class DivergenceError(VideError, ArithmeticError):
    code = "divergence"


class PreconditionError(VideError, ValueError):
    code = "precondition"


class ConfigError(VideError):
    code = "config_error"


class ConfigParseError(ConfigError):
    code = "parse_error"

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


class UnknownBuiltin(ConfigError, KeyError):
    code = "unknown_builtin"

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DimensionMismatch(ConfigError, ContractViolation):
    code = "dimension_mismatch"


class InvalidConfig(ConfigError, ValueError):
    code = "invalid_config"
