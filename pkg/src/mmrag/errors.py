"""Exception hierarchy shared across the package."""


class MmragError(Exception):
    """Base class for every error this package raises deliberately."""


class SchemaError(MmragError):
    """A serialized sample or config violates the canonical schema."""


class DuplicateTarget(MmragError):
    """Two images were mapped to the same sentence index."""


class DimensionMismatch(MmragError):
    """Embedding vectors of different dimensions were combined."""


class ZeroNorm(MmragError):
    """Cosine similarity was requested for an all-zero vector."""


class EmptyCorpus(MmragError):
    """Retrieval was invoked over an empty document corpus."""


class ProviderError(MmragError):
    """A chat or embedding provider failed (transport, auth, protocol)."""


class EmptyCompletion(ProviderError):
    """The provider returned an empty completion."""


class CassetteMiss(ProviderError):
    """A replayed cassette holds no entry for the request."""


class MissingSlot(MmragError):
    """render() was called without bindings for one or more template slots."""

    def __init__(self, slots):
        self.slots = tuple(slots)
        super().__init__("unbound prompt slots: " + ", ".join(self.slots))


class UnknownImage(MmragError):
    """A placement references an image id absent from the asset catalog."""


class EmptyGroundTruth(MmragError):
    """Order score is undefined for an empty ground-truth sequence."""


class LengthMismatch(MmragError):
    """Placement sequences of different lengths were compared."""


class MissingComponent(MmragError):
    """The overall score was requested with a required component missing."""

    def __init__(self, names):
        self.names = tuple(names)
        super().__init__("missing overall-score components: " + ", ".join(self.names))


class JudgeParseError(MmragError):
    """A judge reply could not be parsed after the configured re-asks."""


class InsufficientCorpus(MmragError):
    """The image corpus cannot supply the requested number of distractors."""


class UnknownSource(MmragError):
    """A sample lacks the source-dataset label a split protocol requires."""


class UnknownSample(MmragError):
    """A rollout references a sample id absent from the dataset index."""


class ConfigError(MmragError):
    """A run configuration is invalid or self-contradictory."""
