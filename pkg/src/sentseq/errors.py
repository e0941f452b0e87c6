"""Exception taxonomy.

Three base classes exist so the CLI can map failures to exit codes
(input errors -> 2, config errors -> 3, numeric failures -> 4) without
inspecting messages.
"""


class SentseqError(Exception):
    """Base class for all library errors."""


class InputError(SentseqError):
    """Malformed or inconsistent input data."""


class ConfigError(SentseqError):
    """Invalid experiment configuration."""


class NumericError(SentseqError):
    """Numeric failure during computation."""


# corpus ----------------------------------------------------------------

class UnknownLabel(InputError):
    def __init__(self, label, line_no=None):
        loc = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"unknown label {label!r}{loc}")
        self.label = label
        self.line_no = line_no


class MalformedLine(InputError):
    def __init__(self, line_no, detail=""):
        super().__init__(f"malformed line {line_no}: {detail}")
        self.line_no = line_no


class EmptyDocument(InputError):
    def __init__(self, doc_id):
        super().__init__(f"document {doc_id!r} has no sentences")
        self.doc_id = doc_id


class MissingHeader(InputError):
    pass


class DuplicateDocId(InputError):
    def __init__(self, doc_id):
        super().__init__(f"duplicate document id {doc_id!r}")
        self.doc_id = doc_id


class TooFewDocuments(InputError):
    pass


class UnmappedClass(InputError):
    def __init__(self, dataset, cls):
        super().__init__(f"no mapping for class {cls!r} of dataset {dataset!r}")
        self.dataset = dataset
        self.cls = cls


# embeddings ------------------------------------------------------------

class EmptyAfterTokenization(InputError):
    pass


class MissingPrecomputedEntry(InputError):
    def __init__(self, doc_id, sent_idx, detail=""):
        msg = f"no stored embedding for doc {doc_id!r} sentence {sent_idx}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.doc_id = doc_id
        self.sent_idx = sent_idx


# model -----------------------------------------------------------------

class ShapeMismatch(InputError):
    pass


class LengthMismatch(InputError):
    pass


class NonFiniteGradient(NumericError):
    pass


class DimMismatch(InputError):
    def __init__(self, group, detail=""):
        msg = f"incompatible dimensions for parameter group {group!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.group = group


class SchemeMismatchForSHO(ConfigError):
    pass


# relatedness -----------------------------------------------------------

class EmptyClass(InputError):
    def __init__(self, label):
        super().__init__(f"no sentences with gold label {label!r}")
        self.label = label


class ZeroVector(InputError):
    pass


class SingleCluster(InputError):
    pass


class DegenerateRank(NumericError):
    def __init__(self, rank):
        super().__init__(f"point set has rank {rank}, need at least 2")
        self.rank = rank


class EmptyMatrix(InputError):
    pass
