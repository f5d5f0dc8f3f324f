"""
Exception and warning types shared by every pipeline stage.
Each error carries the process exit code the CLI reports for it.
"""


class SocialMLMError(Exception):
    """Base error. `exit_code` follows the CLI contract (2 usage, 3 data, 4 runtime)."""
    exit_code = 4


# Validation (exit 2)

class ValidationError(SocialMLMError):
    exit_code = 2


class InvalidUserId(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, line_number, message):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class ConfigError(ValidationError):
    pass


class SpecError(ValidationError):
    pass


class RankTooLarge(ValidationError):
    def __init__(self, rank, order):
        self.rank = rank
        self.order = order
        super().__init__(f"rank {rank} exceeds matrix order {order}")


class ReportTagError(ValidationError):
    pass


# Data inconsistency (exit 3)

class DataError(SocialMLMError):
    exit_code = 3


class DegenerateGroup(DataError):
    def __init__(self, group_id, reason):
        self.group_id = group_id
        super().__init__(f"group {group_id!r} is degenerate: {reason}")


class KeyMismatch(DataError):
    def __init__(self, offenders):
        self.offenders = sorted(offenders)
        shown = ', '.join(self.offenders[:10])
        more = f" (+{len(self.offenders) - 10} more)" if len(self.offenders) > 10 else ''
        super().__init__(f"group sets differ: {shown}{more}")


class MissingEmbedding(DataError):
    def __init__(self, group_id):
        self.group_id = group_id
        super().__init__(f"no social embedding for group {group_id!r}")


class SplitError(DataError):
    pass


class VocabError(DataError):
    pass


# Runtime (exit 4)

class EmptyBatch(SocialMLMError):
    pass


class TrainingDiverged(SocialMLMError):
    def __init__(self, step, loss):
        self.step = step
        super().__init__(f"loss became {loss} at step {step}")


# Warnings

class SkippedDegenerateUser(UserWarning):
    """A user subscribed to every group has zero variance and is left out of cosine sums."""


class ZeroVectorAssigned(UserWarning):
    """A group never appeared in any walk and got a zero DeepWalk vector."""


class EmbeddingsIgnored(UserWarning):
    """Social embeddings were supplied to a model without injection."""
