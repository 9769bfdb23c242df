from typing import Optional


class DyadError(Exception):
    pass


class ShapeMismatchError(DyadError, ValueError):
    pass


class DimensionMismatchError(ShapeMismatchError):
    def __init__(self, message: str, axis: Optional[str] = None):
        super().__init__(message)
        self.axis: Optional[str] = axis


class PrecisionMismatchError(DyadError, TypeError):
    pass


class DivisibilityError(DyadError, ValueError):
    def __init__(self, f_out: int, f_in: int, n_dyad: int):
        self.f_out: int = f_out
        self.f_in: int = f_in
        self.n_dyad: int = n_dyad
        self.suggested_f_out: int = -(-f_out // n_dyad) * n_dyad
        self.suggested_f_in: int = -(-f_in // n_dyad) * n_dyad

        hints = []
        if self.suggested_f_out != f_out:
            hints.append(f"pad f_out {f_out} -> {self.suggested_f_out}")
        if self.suggested_f_in != f_in:
            hints.append(f"pad f_in {f_in} -> {self.suggested_f_in}")
        super().__init__(
            f"Dimensions ({f_out}, {f_in}) are not divisible by n_dyad={n_dyad}; "
            + ", ".join(hints)
            + " (zero padding is never applied automatically)"
        )

    @property
    def suggested_dims(self) -> (int, int):
        return self.suggested_f_out, self.suggested_f_in


class IdxFormatError(DyadError, ValueError):
    pass


class EmptyDatasetError(DyadError, ValueError):
    pass


class CheckpointFormatError(DyadError, ValueError):
    pass


class CheckpointVersionError(CheckpointFormatError):
    def __init__(self, found: int, expected: int):
        self.found: int = found
        self.expected: int = expected
        super().__init__(
            f"Checkpoint version {found} cannot be read by this reader (version {expected})"
        )


class TrainingDivergedError(DyadError, ArithmeticError):
    pass
