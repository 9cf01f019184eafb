"""Exception types shared across the package."""


class DccvtError(Exception):
    """Base class for all package-specific errors."""


class DegenerateInput(DccvtError):
    """Input site set spans fewer than three dimensions."""


class DuplicateSites(DccvtError):
    """Two sites coincide within the duplicate tolerance."""


class NearDegenerate(DccvtError):
    """A tetrahedron is too flat for the requested computation."""


class EmptyReconstruction(DccvtError):
    """The field has no zero crossing inside the site hull."""


class IsolatedSite(DccvtError):
    """A site has no incident non-degenerate tetrahedron."""


class NoActiveSites(DccvtError):
    """No site has an incident zero-crossing tetrahedron."""


class AllProbesFlipped(DccvtError):
    """Every finite-difference probe changed a frozen discrete choice."""


class DegeneratePointCloud(DccvtError):
    """Point cloud bounding box has zero extent."""


class EmptyMesh(DccvtError):
    """Mesh has no triangles."""


class ParseError(DccvtError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line
