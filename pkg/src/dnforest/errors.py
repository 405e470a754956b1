"""Exception hierarchy shared across the package."""


class DnForestError(Exception):
    """Base class for every error raised by dnforest."""


# domain handling
class DomainError(DnForestError, ValueError):
    pass


class MalformedDomain(DomainError):
    pass


class BareSuffix(DomainError):
    pass


class IpLiteral(DomainError):
    pass


# ingest
class IngestError(DnForestError):
    pass


class FileUnreadable(IngestError):
    pass


class BadPcapMagic(IngestError):
    pass


class UnsupportedLinktype(IngestError):
    pass


# fingerprint / distillation
class EmptyFeatureSet(DnForestError):
    pass


class ZeroEffectiveCount(DnForestError, ZeroDivisionError):
    pass


class NotBalanced(DnForestError):
    pass


class NotDistilled(DnForestError):
    pass


# detection
class OutOfOrderBeyondSlack(DnForestError):
    pass


# evaluation
class LengthMismatch(DnForestError, ValueError):
    pass


class NonBackgroundTruth(DnForestError, ValueError):
    pass


class EmptySamples(DnForestError, ValueError):
    pass


class DuplicateLabelsInMerge(DnForestError, ValueError):
    pass


# persistence
class IoFailure(DnForestError, OSError):
    pass


class SchemaViolation(DnForestError):
    pass


class UnsupportedVersion(SchemaViolation):
    pass


class ConfigError(DnForestError, ValueError):
    pass
