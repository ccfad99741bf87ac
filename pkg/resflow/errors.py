import enum
from typing import Optional


class ExitStatus(enum.IntEnum):
    OK = 0
    VERIFICATION_FAILED = 1
    CONFIG_ERROR = 2
    SCHEDULE_INFEASIBLE = 3


class ResflowError(Exception):
    """
    Base error for every failure the CLI reports.
    Carries the process exit code alongside a human-readable detail.
    """
    exit_code: ExitStatus = ExitStatus.VERIFICATION_FAILED

    def __init__(self, detail: str, exit_code: Optional[ExitStatus] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


class InputError(ResflowError, ValueError):
    exit_code = ExitStatus.CONFIG_ERROR


class ConfigError(ResflowError):
    exit_code = ExitStatus.CONFIG_ERROR


class CertificationError(ResflowError):
    exit_code = ExitStatus.CONFIG_ERROR

    def __init__(self, detail: str, report=None):
        super().__init__(detail)
        self.report = report


class ScheduleError(ResflowError):
    exit_code = ExitStatus.SCHEDULE_INFEASIBLE


class LipschitzCertificateError(ScheduleError):
    def __init__(self, bound: float, block_index: Optional[int] = None):
        where = f"block {block_index}" if block_index is not None else "block"
        super().__init__(f"Lipschitz certificate of {where} is {bound:.6g}, exceeding 1/2.")
        self.bound = bound
        self.block_index = block_index

    def at_block(self, block_index: int) -> "LipschitzCertificateError":
        return LipschitzCertificateError(self.bound, block_index)


class NumericError(ResflowError):
    exit_code = ExitStatus.VERIFICATION_FAILED


class VerificationError(ResflowError):
    exit_code = ExitStatus.VERIFICATION_FAILED


def dimension_mismatch(expected: int, got: int, what: str = "point") -> InputError:
    return InputError(f"Dimension mismatch: {what} has dimension {got}, expected {expected}.")
