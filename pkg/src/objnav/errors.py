"""Exception types shared across the engine."""


class ObjNavError(Exception):
    """Base class for all engine errors."""


class SceneFormatError(ObjNavError):
    """Scene or episode file violates the documented format or an invariant."""


class EpisodeFinished(ObjNavError):
    """A primitive was requested after stop was issued or the budget ran out."""


class BudgetExhausted(EpisodeFinished):
    """Not enough steps remain for the requested compound action."""


class PhaseError(ObjNavError):
    """Operation invoked outside its legal phase (e.g. STM record while exploring)."""


class UnknownNodeError(ObjNavError):
    """A node id was referenced that does not exist in the scene graph."""


class EmptyMaskError(ObjNavError):
    """Overlap requested on an empty voxel set."""


class Stuck(ObjNavError):
    """No plan exists: no frontiers and no reachable goal cells."""


class BackendFailure(ObjNavError):
    """Remote model call failed after retries (transport-level, retryable)."""


class ProtocolError(ObjNavError):
    """Remote reply or payload did not match the expected grammar/schema."""


class TemplateError(ObjNavError):
    """Prompt template rendering failed (unbound placeholder)."""


class NoPendingDecision(ObjNavError):
    """A human command arrived while no decision request was pending."""
