"""Exception hierarchy for the stitching pipeline."""


class StitchError(Exception):
    """Base class for every error raised by depthstitch."""

    stage = None


class DegeneratePoint(StitchError):
    pass


class CollinearVertices(StitchError):
    pass


class SingularHomography(StitchError):
    pass


class ZeroEpipole(StitchError):
    pass


class InsufficientMatches(StitchError):
    pass


class DegenerateConfiguration(StitchError):
    pass


class NoConsensus(StitchError):
    pass


class NonFiniteResidual(StitchError):
    pass


class EmptyDepth(StitchError):
    pass


class AllCollinear(StitchError):
    pass


class EpipoleCoincidence(StitchError):
    pass


class PolynomialFailure(StitchError):
    pass


class NonFiniteVertex(StitchError):
    pass


class CanvasTooLarge(StitchError):
    pass


class CanvasMismatch(StitchError):
    pass


class EmptyMask(StitchError):
    pass


class RegionTooSmall(StitchError):
    pass


class NonCanonicalFirstCamera(StitchError):
    pass


class SceneNotCoVisible(StitchError):
    pass


class ParseError(StitchError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class DimensionMismatch(StitchError):
    pass
