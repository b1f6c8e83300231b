"""Exception hierarchy.

Every failure raised by the library derives from :class:`ReflectedMorseError`.
The CLI maps the three broad families (input, degenerate scenario, numerical
inconclusiveness) onto distinct exit codes.
"""


class ReflectedMorseError(Exception):
    """Base class for all library errors."""


# --- input / contract violations -------------------------------------------------


class InputError(ReflectedMorseError):
    """Bad user input: malformed scenario, violated precondition."""


class ScenarioParseError(InputError):
    def __init__(self, message, line=None):
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ScenarioValidationError(InputError):
    pass


class C1ViolationError(ScenarioValidationError):
    """Piecewise potential is not C^1 across the hypersurface."""


class PreconditionError(InputError):
    pass


class OffSurfaceError(PreconditionError):
    pass


class InvalidFieldError(PreconditionError):
    """Vector field does not satisfy the admissibility jump conditions."""


class PolicyError(InputError):
    """Event policy forbids the requested decision or ran out of decisions."""


# --- geometric degeneracy -------------------------------------------------------


class DegenerateError(ReflectedMorseError):
    """The scenario sits on a degenerate configuration."""


class DegenerateMetricError(DegenerateError):
    pass


class TangencyError(DegenerateError):
    """Trajectory meets the hypersurface (nearly) tangentially."""


class ConjugateEndpointError(DegenerateError):
    """Endpoint map is singular: the endpoints are conjugate."""


class SelfConjugateError(DegenerateError):
    """Base point of a periodic orbit is conjugate to itself."""


# --- numerical failures ---------------------------------------------------------


class NumericalError(ReflectedMorseError):
    pass


class IntegrationError(NumericalError):
    """ODE integration failed (typically step-size collapse)."""


class MaxEventsExceeded(NumericalError):
    pass


class NewtonDivergenceError(NumericalError):
    pass


class RefineGridError(NumericalError):
    """Two sign changes of det B fall into one scan cell."""


class RefineNodesError(NumericalError):
    """Broken-Jacobi nodes too far apart for the local positivity lemma."""


class InconclusiveIndexError(NumericalError):
    """Index or nullity is not stable under discretization refinement."""
