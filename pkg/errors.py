"""Exception hierarchy shared by every ecoplex module."""


class EcoplexError(Exception):
    """Base class for all ecoplex failures."""


class InputError(EcoplexError):
    """Bad input data, bad usage or unreadable artifacts (CLI exit code 2)."""


class ComputationError(EcoplexError):
    """Numerical failure on a well-formed input (CLI exit code 1)."""


class TradeFormatError(InputError):
    pass


class DuplicateKeyError(InputError):
    def __init__(self, key, rows):
        self.key = key
        self.rows = rows
        year, country, product = key
        super().__init__(
            f"Duplicate key (year={year}, country={country}, product={product}) at rows {rows}"
        )


class InvalidValueError(InputError):
    def __init__(self, problems):
        # problems: list of (row_index, raw_value, reason)
        self.problems = problems
        shown = "; ".join(f"row {idx}: {reason} ({raw!r})" for idx, raw, reason in problems[:10])
        more = f" (+{len(problems) - 10} more)" if len(problems) > 10 else ""
        super().__init__(f"Rejected {len(problems)} row(s): {shown}{more}")


class EmptyYearError(InputError):
    def __init__(self, year, reason="no trade recorded"):
        self.year = year
        super().__init__(f"Year {year}: {reason}")


class PreconditionError(InputError):
    def __init__(self, message, pair=None):
        self.pair = pair
        super().__init__(message)


class UnusableInstanceError(ComputationError):
    pass


class ConnectivityError(ComputationError):
    def __init__(self, component_sizes):
        self.component_sizes = component_sizes
        super().__init__(
            f"Specialization graph is disconnected ({len(component_sizes)} components: "
            f"{component_sizes}); use the 'component' prune policy to keep the largest one"
        )


class ContractViolation(ComputationError):
    pass


class ConvergenceError(ComputationError):
    def __init__(self, residual, iterations):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"Truncated SVD did not converge in {iterations} iterations (residual {residual:.3e})"
        )


class OracleSizeError(ComputationError):
    pass


class DegeneracyError(ComputationError):
    def __init__(self, message, sigma2=None):
        self.sigma2 = sigma2
        super().__init__(message)


class DegenerateFitError(ComputationError):
    def __init__(self, component, variance, weight):
        self.component = component
        self.variance = variance
        self.weight = weight
        super().__init__(
            f"GMM component {component} collapsed (variance {variance:.3e}, weight {weight:.3e})"
        )


class UndefinedPartitionError(ComputationError):
    pass
