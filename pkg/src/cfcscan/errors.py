"""Exception hierarchy shared across the toolkit."""


class CfcError(Exception):
    """Base class for all cfcscan errors."""


# -- PE container ----------------------------------------------------------

class NotPeError(CfcError):
    """Input lacks the MZ magic or the PE\\0\\0 signature."""


class TruncatedError(CfcError):
    """A header field points past the end of the file."""


class UnsupportedMachineError(CfcError):
    """COFF machine id is not IA-32 (0x014C)."""

    def __init__(self, machine: int):
        super().__init__(f"unsupported machine id 0x{machine:04x}")
        self.machine = machine


# -- decoding --------------------------------------------------------------

class InvalidOpcodeError(CfcError):
    """Undefined or unsupported instruction encoding."""


class TruncatedInstructionError(CfcError):
    """Instruction encoding runs past the end of the section."""


# -- analysis --------------------------------------------------------------

class EmptyInputError(CfcError):
    """Operation requires non-empty input data."""


class NoCfcFoundError(CfcError):
    """Sample yielded zero control-flow-change events."""


class MismatchedNError(CfcError):
    """Histograms built from different n-gram lengths."""


class LengthMismatchError(CfcError):
    """Paired value lists differ in length or are too short."""


class DegenerateInputError(CfcError):
    """All-tied value list; rank correlation undefined."""


# -- classifier ------------------------------------------------------------

class EmptyClassError(CfcError):
    """A training class has no samples."""


class UntrainedModelError(CfcError):
    """Classification attempted before training."""


# -- persistence -----------------------------------------------------------

class StoreError(CfcError):
    """Base class for persistence failures."""


class FormatVersionMismatchError(StoreError):
    """Stored file uses an unsupported format version."""


class HashMismatchError(StoreError):
    """Stored file digest does not match its contents."""


class EmptyImportError(StoreError):
    """Listing document contained no byte-bearing lines."""


class DuplicateSampleError(StoreError):
    """Same sample id appears more than once in a corpus."""


class MixedLabelsError(StoreError):
    """Corpus merge across different class labels."""


class EmptyCorpusError(CfcError):
    """Corpus-level operation over zero samples."""
