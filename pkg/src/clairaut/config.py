from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared by every stage of the pipeline."""

    #: singular values below ``rank_rtol * sigma_max`` count as zero
    rank_rtol: float = 1e-9
    #: Newton stops when the max-norm of ``p_i - dL/dv^i`` is below this
    newton_tol: float = 1e-12
    newton_maxit: int = 50
    #: agreement required between two probes of a velocity-independent quantity
    probe_tol: float = 1e-8
    #: allowed component of D_a H0 outside the image of F
    consistency_tol: float = 1e-8
    #: central-difference step for finite-difference oracles
    fd_step: float = 1e-6
    #: default number of rank sample points and their seed
    n_samples: int = 8
    seed: int = 42

    def as_dict(self):
        return asdict(self)

    def updated(self, **changes):
        known = {f.name for f in fields(self)}
        unknown = set(changes) - known
        if unknown:
            raise KeyError(f"unknown tolerance(s): {', '.join(sorted(unknown))}")
        return replace(self, **changes)


DEFAULT_TOLERANCES = Tolerances()
