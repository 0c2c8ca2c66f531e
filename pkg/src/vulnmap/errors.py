"""Exception hierarchy shared across the pipeline."""


class VulnmapError(Exception):
    """Base class for all errors raised by vulnmap."""


class InputError(VulnmapError, ValueError):
    """Malformed or missing input. The CLI maps these to exit code 2."""


class EmptyInput(InputError):
    pass


class DuplicateId(InputError):
    pass


class KTooLarge(VulnmapError, ValueError):
    pass


class DegeneratePolygon(InputError):
    pass


class MalformedRow(InputError):
    def __init__(self, path, row, message):
        self.path = str(path)
        self.row = row
        super().__init__(f"{self.path}: row {row}: {message}")


class DanglingEdge(InputError):
    pass


class NonPositiveLength(InputError):
    pass


class EmptyGraph(VulnmapError, ValueError):
    pass


class UnknownNode(VulnmapError, KeyError):
    pass


class NoDonorInDepartment(VulnmapError):
    def __init__(self, department):
        self.department = department
        super().__init__(f"no reachable donor radio in department {department!r}")


class OutOfRangeValue(InputError):
    pass


class ShapeMismatch(VulnmapError, ValueError):
    pass


class DivergedLoss(VulnmapError, ArithmeticError):
    pass


class DomainError(VulnmapError, ValueError):
    pass


class LengthMismatch(VulnmapError, ValueError):
    pass


class ZeroVariance(VulnmapError, ValueError):
    pass


class ConstantColumn(VulnmapError, ValueError):
    pass


class FitDiverged(VulnmapError, ArithmeticError):
    pass


class TooFewRadios(VulnmapError, ValueError):
    pass
