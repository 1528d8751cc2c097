"""Exception types raised across gridcast."""


class GridcastError(Exception):
    pass


# ingestion
class MalformedRow(GridcastError):
    def __init__(self, line, reason=""):
        self.line = line
        super().__init__(f"malformed row at line {line}" + (f": {reason}" if reason else ""))


class EmptyDataset(GridcastError):
    pass


class InconsistentResolution(GridcastError):
    pass


class NoCommonTimeRange(GridcastError):
    pass


class TooShort(GridcastError):
    pass


class ConstantSeries(GridcastError):
    def __init__(self, client_id):
        self.client_id = client_id
        super().__init__(f"client {client_id!r} has zero variance on the train range")


# calendar
class OutOfCalendarRange(GridcastError):
    pass


# windowing
class SplitTooShort(GridcastError):
    def __init__(self, lookback, horizon, length):
        self.lookback, self.horizon, self.length = lookback, horizon, length
        super().__init__(
            f"split of length {length} cannot hold lookback {lookback} + horizon {horizon}")


# autodiff
class ShapeMismatch(GridcastError, ValueError):
    pass


class NonScalarLoss(GridcastError):
    pass


class DetachedGraph(GridcastError):
    pass


# models
class HeadDivisibility(GridcastError, ValueError):
    pass


class InsufficientHistory(GridcastError):
    pass


class SingularSystem(GridcastError):
    pass


class TooFewSamples(GridcastError):
    pass


class CheckpointFormatError(GridcastError):
    pass


# training
class NonFiniteGradient(GridcastError):
    pass


class Diverged(GridcastError):
    pass


class EmptyTrainingSet(GridcastError):
    pass


# evaluation
class MissingClientModel(GridcastError):
    pass


class HorizonOverrun(GridcastError):
    pass


class EmptyForecastSet(GridcastError):
    pass


# cli
class ConfigParse(GridcastError):
    def __init__(self, message, field=None, line=None):
        self.field, self.line = field, line
        where = f" (line {line})" if line is not None else ""
        super().__init__(message + where)


class NoResults(GridcastError):
    pass
