"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Bad or inconsistent configuration (unknown keys, degenerate sizes, ...)."""


class SingularMatrixError(RuntimeError):
    """LU factorization hit a pivot below tolerance.

    Attributes
    ----------
    pivot_index : column index of the failing pivot
    batch_index : which system in a batched solve failed (None if unbatched)
    """

    def __init__(self, pivot_index, batch_index=None, magnitude=None):
        self.pivot_index = pivot_index
        self.batch_index = batch_index
        self.magnitude = magnitude
        where = f"pivot {pivot_index}"
        if batch_index is not None:
            where += f", batch element {batch_index}"
        super().__init__(f"matrix singular to tolerance ({where}, |pivot|={magnitude})")


class DivergenceError(RuntimeError):
    """Non-finite value produced while iterating a step operator."""

    def __init__(self, iteration=None, stage=None, context=""):
        self.iteration = iteration
        self.stage = stage
        msg = "non-finite value during step"
        if iteration is not None:
            msg += f" (iteration {iteration}"
            if stage is not None:
                msg += f", stage {stage}"
            msg += ")"
        if context:
            msg += f": {context}"
        super().__init__(msg)


class ConvergenceFailure(RuntimeError):
    """Exact implicit solve did not reach tolerance within the iteration budget."""

    def __init__(self, residual, max_iters):
        self.residual = residual
        self.max_iters = max_iters
        super().__init__(
            f"implicit solve not converged after {max_iters} iterations "
            f"(residual {residual:.3e})"
        )


class OracleFailure(RuntimeError):
    """A numerical oracle (e.g. the linear IMDE solve) failed to converge."""
