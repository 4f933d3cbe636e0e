import typing as t


# General exception of the pipeline
class DensityOcpError(Exception):
    exit_code = 1

    def __init__(self, message: str = 'Pipeline error'):
        super().__init__(message)
        self.message = message


# Invalid experiment config
class ConfigValidationError(DensityOcpError):
    exit_code = 2

    def __init__(self, errors: t.Dict[str, t.List[str]]):
        self.errors = errors
        lines = [f'{field_path}: {"; ".join(messages)}' for field_path, messages in sorted(errors.items())]
        super().__init__('Config validation failed\n' + '\n'.join(lines))


# Bad input data (degenerate box, mismatched datasets, wrong labels)
class DataError(DensityOcpError):
    exit_code = 2


# Missing or corrupt artifact files
class ArtifactError(DensityOcpError):
    exit_code = 2


# Closed-loop state escaped the divergence bound
class DivergenceError(DensityOcpError):
    exit_code = 4

    def __init__(self, escape_time: float, bound: float):
        self.escape_time = escape_time
        self.bound = bound
        super().__init__(f'Trajectory diverged at t={escape_time:.6g} (|x| > {bound:g})')


# General solver exception
class SolverError(DensityOcpError):
    exit_code = 3


# Equality system inconsistent or no strictly feasible point
class InfeasibleProblemError(SolverError):
    def __init__(self, certificate: t.Dict[str, float]):
        self.certificate = certificate
        details = ', '.join(f'{key}={value:.3g}' for key, value in sorted(certificate.items()))
        super().__init__(f'Problem is infeasible ({details})')


# Iteration limit reached before the KKT tolerance
class ConvergenceError(SolverError):
    def __init__(self, what: str, iterations: int, residuals: t.Dict[str, float], row: t.Optional[int] = None):
        self.iterations = iterations
        self.residuals = residuals
        self.row = row
        details = ', '.join(f'{key}={value:.3g}' for key, value in sorted(residuals.items()))
        where = f' (worst row {row})' if row is not None else ''
        super().__init__(f'{what} did not converge after {iterations} iterations{where}: {details}')


# Density coefficients vanish everywhere
class DegenerateDensityError(SolverError):
    pass


# Invariant suite failure
class InvariantError(DensityOcpError):
    exit_code = 4

    def __init__(self, failures: t.List[t.Dict[str, t.Any]]):
        self.failures = failures
        names = ', '.join(failure['check'] for failure in failures)
        super().__init__(f'{len(failures)} invariant check(s) failed: {names}')
