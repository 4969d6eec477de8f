"""Exception types shared across the toolkit."""


class FibrecastError(Exception):
    """Base class for all toolkit errors."""


# -- street graphs and tessellations ----------------------------------------

class EmptyGraph(FibrecastError):
    """A street graph with no edges where one is required."""


class NoCandidates(FibrecastError):
    """Model fitting was asked to choose among zero candidate families."""


class DegenerateWindow(FibrecastError):
    """Too few generating primitives fall inside the simulation window."""


# -- territory ingestion -----------------------------------------------------

class MalformedInput(FibrecastError):
    """Raw map data could not be parsed."""


class EmptyAfterFilter(FibrecastError):
    """No ways survived the highway-class whitelist."""


class AllSquaresEliminated(FibrecastError):
    """Build-up threshold removed every grid square."""


class EmptyGraphAfterTrim(FibrecastError):
    """Nothing left of the street graph after clipping and dead-end removal."""


class PartWithNoStreets(FibrecastError):
    """A territory part contains no street edges to fit."""


# -- typical cells -----------------------------------------------------------

class ZeroStreetDensity(FibrecastError):
    """Street length density is zero; node intensities are undefined."""


class RangeExceeded(FibrecastError):
    """kappa outside the supported simulation range."""


class DisconnectedLL(FibrecastError):
    """A low-level node cannot reach its high-level node along streets."""


# -- sampled distributions ---------------------------------------------------

class UnitMismatch(FibrecastError):
    """Operation combining distributions of different units."""


class ZeroTotalWeight(FibrecastError):
    """Mixture weights sum to zero."""


class UnsupportedSplitFactor(FibrecastError):
    """Splitter factor outside the supported set."""


class InvalidShape(FibrecastError):
    """Truncated Weibull shape parameter must exceed 1."""


class GridRefinementFailed(FibrecastError):
    """Grid refinement hit the hard cap before reaching the mass target."""


# -- network model -----------------------------------------------------------

class UnresolvableRule(FibrecastError):
    """Node-count rules form a cycle or reference missing levels."""


class MissingHabitat(FibrecastError):
    """A territory part has no household information."""


# -- cabling and cost --------------------------------------------------------

class EmptyFamily(FibrecastError):
    """Cable family contains no sizes."""


class UnresolvedDataRef(FibrecastError):
    """A cost brick references a quantity absent from the context."""


class ShapeMismatch(FibrecastError):
    """Two cost reports do not share the same category/level shape."""


# -- documents and workspace ---------------------------------------------------

class DocumentError(FibrecastError):
    """A JSON document fails schema validation."""


class WorkspaceError(FibrecastError):
    """Workspace storage problem (missing ref, integrity violation)."""
