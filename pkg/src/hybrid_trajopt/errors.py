"""Exception hierarchy shared by the simulator and the solvers."""


class HybridError(Exception):
    """Base class for hybrid simulation errors.

    ``step_index`` is filled in by :func:`hybrid_trajopt.hybrid.rollout` when the
    error surfaces from a particular discrete step.
    """

    step_index: int | None = None


class MissingTransition(HybridError, KeyError):
    pass


class TransversalityViolation(HybridError):
    """The trajectory meets a guard tangentially; the saltation matrix is undefined."""


class ZenoLimitExceeded(HybridError):
    pass


class GuardLocalizationFailure(HybridError):
    pass


class NonPositiveDefiniteQuu(ArithmeticError):
    pass


class InfeasibleGoal(ValueError):
    pass


class SamplingExhausted(RuntimeError):
    pass
