"""Central numeric tolerances."""

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class NumericPolicy:
    structural_tol: float = 1e-10
    solver_tol: float = 1e-9
    hermitian_tol: float = 1e-12
    # probabilities below q_floor count as "never occurs"
    q_floor: float = 1e-12
    deriv_floor: float = 1e-9
    # Lyapunov: eigenvalue sums below this are treated as zero
    support_tol: float = 1e-12
    support_rhs_tol: float = 1e-10
    fd_step: float = 1e-4
    fd_tol: float = 1e-6
    dim_cap: int = 64
    cond_max: float = 1e10
    sld_cond_max: float = 1e8
    penalty: float = 1e6

    def as_dict(self):
        return asdict(self)


DEFAULT_POLICY = NumericPolicy()
