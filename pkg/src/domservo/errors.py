"""Exception types shared across the toolkit."""


class DomServoError(Exception):
    """Base class for all toolkit errors."""


# -- simulator ---------------------------------------------------------------

class NonConvergence(DomServoError):
    """Equilibrium solve hit the iteration cap with the gradient above tolerance."""


class DegenerateSpring(DomServoError):
    """A spring collapsed below numerical length during a solve."""


class EmptyProjection(DomServoError):
    """No particle projects inside the camera's world window."""


class UnknownTask(DomServoError):
    """Task name not present in the registry."""


# -- features ----------------------------------------------------------------

class EmptyInput(DomServoError):
    """Extractor called with no points."""


class CountMismatch(DomServoError):
    """Point/normal counts disagree."""


class DegenerateNeighborhood(DomServoError):
    """Fewer than 4 points for a covariance-based feature."""


class ConfigMismatch(DomServoError):
    """Image/grid configuration inconsistent with the supplied data."""


class LayoutMismatch(DomServoError):
    """Feature vectors with different layouts compared."""


class InvalidParam(DomServoError):
    """Parameter outside its documented range."""


# -- dictionary controller ---------------------------------------------------

class TooShort(DomServoError):
    """Trajectory has fewer than 2 frames."""


class KMeansDegenerate(DomServoError):
    """Fewer distinct samples than requested dictionary atoms."""


class DimensionMismatch(DomServoError):
    """Query/atom dimensions disagree."""


class EmptyGoalSet(DomServoError):
    """Goal set is empty or fully consumed."""


# -- fogpr -------------------------------------------------------------------

class SingularBlock(DomServoError):
    """Block-inverse growth rejected: new point duplicates a stored one at the noise floor."""


class SingularUpdate(DomServoError):
    """Rank-2 inverse update hit a singular 2x2 system (handled by dense re-inversion)."""


# -- forest ------------------------------------------------------------------

class DegenerateData(DomServoError):
    """All features constant; forest degenerates to single-leaf trees."""


class SingularSystem(DomServoError):
    """Leaf normal equations singular (handled by ridge jitter)."""


class OptFailure(DomServoError):
    """Confidence-weighted refinement failed to improve on its initialization."""


class EnvFailure(DomServoError):
    """Environment step failed during imitation-learning data collection."""


class DegenerateHands(DomServoError):
    """Hand positions coincide; expert normal undefined."""


# -- bench / CLI -------------------------------------------------------------

class ConfigError(DomServoError):
    """Invalid run configuration."""
