"""Exception hierarchy for the merge planner."""


class MergePlannerError(Exception):
    """Base class for every error raised by this package."""


class DegenerateGeometryError(MergePlannerError):
    pass


class OutOfRangeError(MergePlannerError):
    pass


class OffsetSingularityError(MergePlannerError):
    pass


class ProjectionError(MergePlannerError):
    pass


class BvpFailure(MergePlannerError):
    """Newton iteration did not converge or left the valid parameter set."""


class DegenerateProfileError(MergePlannerError):
    """Velocity profile over an edge has no motion."""


class EmptyLatticeError(MergePlannerError):
    """No feasible edge leaves the root node."""


class ConfigError(MergePlannerError):
    pass


class ScenarioError(MergePlannerError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))
