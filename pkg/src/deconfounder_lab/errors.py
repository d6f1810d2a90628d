"""Exception hierarchy shared by every module."""


class LabError(Exception):
    """Base class for all errors raised by this package."""


class InvalidSpec(LabError):
    pass


class CyclicGraph(InvalidSpec):
    pass


class RoleViolation(InvalidSpec):
    def __init__(self, node: str, rule: str):
        super().__init__(f"{node}: {rule}")
        self.node = node
        self.rule = rule


class NotLinearGaussian(LabError):
    pass


class NotDiscrete(LabError):
    pass


class SingularConditioningBlock(LabError):
    pass


class SupportTooLarge(LabError):
    pass


class InvalidQuery(LabError):
    pass


class EmptySample(LabError):
    pass


class NotAStochasticMatrix(LabError):
    pass


class NoSolution(LabError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class DegeneratePartition(LabError):
    pass


class UnsolvedKernel(LabError):
    pass


class RankDeficientCrossCovariance(LabError):
    pass


class NotIdentifiable(LabError):
    """Raised when a completeness or existence diagnostic fails."""

    def __init__(self, message: str, reports: dict):
        super().__init__(message)
        self.reports = reports


class KTooLarge(LabError):
    pass


class Underdetermined(LabError):
    pass


class RankDeficientDesign(LabError):
    def __init__(self, message: str, null_space: list[dict[str, float]]):
        super().__init__(message)
        self.null_space = null_space


class IncompatibleModels(LabError):
    pass


class WrongViewProvenance(LabError):
    pass


class DegenerateDirection(LabError):
    pass


class NotBinary(LabError):
    pass


class InsufficientData(LabError):
    pass


class ConfigError(LabError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class MissingMethod(LabError):
    pass


class CellFailure(LabError):
    def __init__(self, cell: str, cause: Exception):
        super().__init__(f"cell {cell}: {type(cause).__name__}: {cause}")
        self.cell = cell
        self.cause = cause
