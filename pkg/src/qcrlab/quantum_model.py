"""States, measurements and parametric state models.

Outcome sets are finite; the dominating measure for likelihoods is counting
measure.  Built-in models are available through :func:`make_model`.
"""

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import (
    CapacityError,
    DimensionError,
    InvalidOperator,
    ModelError,
    PartitionError,
)
from .matrix_core import I2, PAULIS, SX, SY, as_matrix, hermiticity_defect, tensor
from .policy import DEFAULT_POLICY


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """Validated density matrix (Hermitian, PSD, unit trace)."""

    matrix: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.matrix)
        for v in density_violations(A):
            raise InvalidOperator(f"not a density operator: {v.axiom} (deviation {v.magnitude:.3e})")
        A = A.copy()
        A.setflags(write=False)
        object.__setattr__(self, "matrix", A)

    @property
    def dim(self):
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class Violation:
    axiom: str
    magnitude: float
    detail: str = ""


def density_violations(A, tol=DEFAULT_POLICY.structural_tol):
    A = as_matrix(A)
    if A.shape[0] != A.shape[1]:
        return [Violation("square", float("inf"), f"shape {A.shape}")]
    out = []
    herm = hermiticity_defect(A)
    if herm > tol:
        out.append(Violation("hermitian", herm))
    lam = np.linalg.eigvalsh(0.5 * (A + A.conj().T))
    if lam[0] < -tol:
        out.append(Violation("positive", float(-lam[0])))
    tr = abs(np.trace(A) - 1.0)
    if tr > tol:
        out.append(Violation("unit-trace", float(tr)))
    return out


class Povm:
    """Finite POVM: labeled positive operators.

    Construction only checks shapes; use :func:`validate_povm` for the axioms.
    """

    def __init__(self, elements, labels: Optional[Sequence[str]] = None):
        mats = [as_matrix(e) for e in elements]
        if len({m.shape for m in mats}) > 1:
            raise DimensionError("POVM elements must all have the same shape")
        E = np.array(mats, dtype=complex)
        if E.ndim != 3 or E.shape[1] != E.shape[2] or len(E) == 0:
            raise DimensionError("POVM elements must be a nonempty list of square matrices of one size")
        if labels is None:
            labels = [str(k) for k in range(len(E))]
        labels = tuple(str(s) for s in labels)
        if len(labels) != len(E):
            raise DimensionError("one label per element required")
        E.setflags(write=False)
        self.elements = E
        self.labels = labels

    @property
    def dim(self):
        return self.elements.shape[1]

    def __len__(self):
        return len(self.labels)

    def index(self, label):
        try:
            return self._index[label]
        except AttributeError:
            self._index = {s: k for k, s in enumerate(self.labels)}
            return self._index[label]

    def __repr__(self):
        return f"Povm(dim={self.dim}, outcomes={len(self)})"


def validate_povm(p: Povm, tol=DEFAULT_POLICY.structural_tol):
    """List of violated POVM axioms with their numeric deviations (empty when valid)."""
    report = []
    if len(set(p.labels)) != len(p.labels):
        dup = sorted({s for s in p.labels if p.labels.count(s) > 1})
        report.append(Violation("unique-labels", float(len(p.labels) - len(set(p.labels))), ",".join(dup)))
    for label, E in zip(p.labels, p.elements):
        herm = hermiticity_defect(E)
        if herm > tol:
            report.append(Violation("hermitian", herm, label))
        lam = np.linalg.eigvalsh(0.5 * (E + E.conj().T))
        if lam[0] < -tol:
            report.append(Violation("positive", float(-lam[0]), label))
    dev = float(np.max(np.abs(p.elements.sum(axis=0) - np.eye(p.dim))))
    if dev > tol:
        report.append(Violation("completeness", dev))
    return report


def outcome_distribution(rho, p: Povm, tol=DEFAULT_POLICY.structural_tol):
    """Born-rule probabilities ``q_k = tr(rho E_k)``."""
    A = rho.matrix if isinstance(rho, DensityOperator) else as_matrix(rho)
    if A.shape[0] != p.dim:
        raise DimensionError(f"state dim {A.shape[0]} != POVM dim {p.dim}")
    q = np.einsum("ij,kji->k", A, p.elements).real
    if q.min() < -tol:
        raise InvalidOperator(f"negative probability {q.min():.3e}")
    q = np.clip(q, 0.0, None)
    s = q.sum()
    if abs(s - 1.0) > tol:
        raise InvalidOperator(f"probabilities sum to {s!r}")
    return q / s


def tensor_povm(ps: Sequence[Povm]) -> Povm:
    """Product measurement; outcomes are the Cartesian product, labels joined with '⊗'."""
    ps = list(ps)
    elements, labels = [], []
    for combo in itertools.product(*(range(len(p)) for p in ps)):
        elements.append(tensor(*(p.elements[k] for p, k in zip(ps, combo))))
        labels.append("⊗".join(p.labels[k] for p, k in zip(ps, combo)))
    return Povm(elements, labels)


def coarse_grain(p: Povm, partition) -> Povm:
    """Merge outcomes; ``partition`` maps each label to a group name."""
    groups = {}
    for label, E in zip(p.labels, p.elements):
        if label not in partition:
            raise PartitionError(f"label {label!r} not covered by partition")
        g = str(partition[label])
        groups[g] = groups[g] + E if g in groups else E.copy()
    return Povm(list(groups.values()), list(groups))


def projective_povm(vectors, labels=None) -> Povm:
    V = np.asarray(vectors, dtype=complex)
    return Povm([np.outer(v, v.conj()) for v in V], labels)


def basis_povm(d: int) -> Povm:
    return projective_povm(np.eye(d), [str(k) for k in range(d)])


def pauli6_povm() -> Povm:
    """Six-outcome qubit POVM ``{(I ± σ_a)/6}``."""
    elements, labels = [], []
    for name, s in zip("xyz", PAULIS):
        for sign, tag in ((1, "+"), (-1, "-")):
            elements.append((I2 + sign * s) / 6)
            labels.append(f"{name}{tag}")
    return Povm(elements, labels)


def trivial_povm(d: int) -> Povm:
    return Povm([np.eye(d)], ["1"])


@dataclass(frozen=True, eq=False)
class ParameterDomain:
    """Box ``lower <= theta <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionError("lower and upper must be vectors of equal length")
        if not np.all(lo < hi):
            raise InvalidOperator("ParameterDomain needs lower < upper componentwise")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InvalidOperator("ParameterDomain must be bounded")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def m(self):
        return self.lower.shape[0]

    @property
    def K(self):
        """``sup ||theta||`` over the box (attained at a corner)."""
        return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def diameter(self):
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, theta, tol=0.0):
        t = np.asarray(theta, dtype=float)
        return t.shape == self.lower.shape and bool(np.all(t >= self.lower - tol) and np.all(t <= self.upper + tol))

    def clip(self, theta):
        return np.minimum(np.maximum(np.asarray(theta, dtype=float), self.lower), self.upper)


@dataclass(frozen=True, eq=False)
class FeatureForm:
    """Linear-in-features representation ``rho(theta) = sum_j f_j(theta) B_j``.

    ``kind`` selects the per-copy feature map (see :mod:`qcrlab.kernels`);
    ``power`` is the number of tensor copies.  Enables the compiled
    likelihood path.
    """

    kind: int
    power: int
    basis: np.ndarray

    def features(self, theta):
        return kernels.model_features(np.asarray(theta, dtype=float), self.kind, self.power)

    def probability_matrix(self, p: Povm):
        """``P[k, j] = Re tr(B_j E_k)`` so that ``q(theta) = P @ f(theta)``."""
        return np.ascontiguousarray(np.einsum("jab,kba->kj", self.basis, p.elements).real)


@dataclass(frozen=True, eq=False)
class StateModel:
    """Smooth family ``theta -> rho_theta`` with analytic derivatives.

    ``state_fn(theta)`` returns the density matrix and ``deriv_fn(theta, i)``
    the partial derivative along coordinate ``i``, both as arrays.
    """

    dim: int
    domain: ParameterDomain
    state_fn: Callable
    deriv_fn: Callable
    name: str = "custom"
    features: Optional[FeatureForm] = field(default=None, compare=False)

    @property
    def m(self):
        return self.domain.m

    def _theta(self, theta):
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        if t.shape != (self.m,):
            raise DimensionError(f"theta must have length {self.m}")
        return t

    def state(self, theta):
        return np.asarray(self.state_fn(self._theta(theta)), dtype=complex)

    def density(self, theta) -> DensityOperator:
        return DensityOperator(self.state(theta))

    def derivatives(self, theta):
        """Array of shape ``(m, d, d)`` holding every partial derivative."""
        t = self._theta(theta)
        return np.array([self.deriv_fn(t, i) for i in range(self.m)], dtype=complex)


def _feature_model(name, domain, form: FeatureForm):
    dim = form.basis.shape[1]

    def state_fn(theta):
        f, _ = form.features(theta)
        return np.tensordot(f, form.basis, axes=1)

    def deriv_fn(theta, i):
        _, jac = form.features(theta)
        return np.tensordot(jac[i], form.basis, axes=1)

    return StateModel(dim, domain, state_fn, deriv_fn, name, form)


def derivative_check(model: StateModel, points=None, step=None, policy=DEFAULT_POLICY):
    """Worst mismatch between analytic derivatives and central differences.

    Also checks that derivatives are Hermitian and traceless.  Raises
    :class:`ModelError` on failure and returns the worst finite-difference error.
    """
    step = policy.fd_step if step is None else step
    if points is None:
        points = derivative_grid(model.domain, 25)
    worst = 0.0
    for theta in points:
        theta = np.asarray(theta, dtype=float)
        D = model.derivatives(theta)
        for i in range(model.m):
            e = np.zeros(model.m)
            e[i] = step
            lo = model.domain.clip(theta - e)
            hi = model.domain.clip(theta + e)
            fd = (model.state(hi) - model.state(lo)) / (hi[i] - lo[i])
            err = float(np.max(np.abs(fd - D[i])))
            worst = max(worst, err)
            if err > policy.fd_tol:
                raise ModelError(f"{model.name}: d/dtheta_{i} disagrees with finite differences by {err:.3e} at {theta}")
            if hermiticity_defect(D[i]) > 1e-9 or abs(np.trace(D[i])) > 1e-9:
                raise ModelError(f"{model.name}: derivative {i} not Hermitian traceless at {theta}")
    return worst


def derivative_grid(domain: ParameterDomain, count: int, margin=0.05):
    """``count`` deterministic points spread through the interior of the box."""
    rng = np.random.default_rng(12345)
    lo = domain.lower + margin * (domain.upper - domain.lower)
    hi = domain.upper - margin * (domain.upper - domain.lower)
    pts = [domain.center] + [lo + (hi - lo) * rng.random(domain.m) for _ in range(count - 1)]
    return np.array(pts)


def qubit_bloch3(bound=0.57) -> StateModel:
    """``rho = (I + theta . sigma)/2`` on the box ``|theta_i| <= bound``."""
    if not 0 < bound < 1 / np.sqrt(3):
        raise ModelError("bloch box must lie inside the unit ball")
    basis = np.array([I2 / 2] + [s / 2 for s in PAULIS])
    dom = ParameterDomain(np.full(3, -bound), np.full(3, bound))
    return _feature_model("qubit-bloch3", dom, FeatureForm(kernels.FEATURE_AFFINE, 1, basis))


def qubit_rotation1(r=0.9, half_width=1.2) -> StateModel:
    """``rho = U rho0 U^+`` with ``U = exp(-i theta σz/2)`` and ``rho0 = (I + r σx)/2``."""
    if not 0 < r < 1:
        raise ModelError("rotation model needs 0 < r < 1 for a full-rank state")
    basis = np.array([I2 / 2, r * SX / 2, r * SY / 2])
    dom = ParameterDomain([-half_width], [half_width])
    model = _feature_model("qubit-rotation1", dom, FeatureForm(kernels.FEATURE_ROTATION, 1, basis))
    return model


def classical_diag(d=2, margin=0.05) -> StateModel:
    """Diagonal family with probabilities ``(theta_1, ..., theta_{d-1}, 1 - sum theta)``."""
    if d < 2:
        raise ModelError("classical-diag needs d >= 2")
    m = d - 1
    last = np.zeros((d, d), dtype=complex)
    last[-1, -1] = 1
    basis = [last]
    for i in range(m):
        B = -last.copy()
        B[i, i] = 1
        basis.append(B)
    upper = (1 - margin) / m
    dom = ParameterDomain(np.full(m, margin / m), np.full(m, upper - margin / m if m > 1 else upper))
    return _feature_model("classical-diag", dom, FeatureForm(kernels.FEATURE_AFFINE, 1, np.array(basis)))


MODEL_REGISTRY = {
    "qubit-bloch3": qubit_bloch3,
    "qubit-rotation1": qubit_rotation1,
    "classical-diag": classical_diag,
}


def make_model(name, check=True, **params) -> StateModel:
    """Build a registry model; derivatives are cross-checked by finite differences."""
    try:
        factory = MODEL_REGISTRY[name]
    except KeyError:
        raise ModelError(f"unknown model {name!r}; known: {sorted(MODEL_REGISTRY)}") from None
    model = factory(**params)
    if check:
        derivative_check(model, derivative_grid(model.domain, 5))
    return model


def default_m0(model: StateModel) -> Povm:
    """Informationally complete first-stage measurement for the model's dimension."""
    if model.dim == 2 and not model.name.startswith("classical"):
        return pauli6_povm()
    if model.name.startswith("classical"):
        return basis_povm(model.dim)
    raise ModelError(f"no default first-stage POVM for {model.name}")


def tensor_power_model(model: StateModel, n: int, cap=DEFAULT_POLICY.dim_cap) -> StateModel:
    """The n-copy family ``rho^{⊗n}`` with product-rule derivatives."""
    if n < 1:
        raise DimensionError("n must be positive")
    if n == 1:
        return model
    if model.dim ** n > cap:
        raise CapacityError(f"dimension {model.dim}^{n} exceeds cap {cap}")

    def state_fn(theta):
        return tensor(*[model.state_fn(theta)] * n)

    def deriv_fn(theta, i):
        rho = model.state_fn(theta)
        drho = model.deriv_fn(theta, i)
        return sum(tensor(*[drho if j == k else rho for j in range(n)]) for k in range(n))

    form = None
    if model.features is not None:
        base = model.features
        basis = base.basis
        for _ in range(n - 1):
            basis = np.array([np.kron(a, b) for a in basis for b in base.basis])
        form = FeatureForm(base.kind, base.power * n, basis)
    return StateModel(model.dim ** n, model.domain, state_fn, deriv_fn, f"{model.name}^{n}", form)
