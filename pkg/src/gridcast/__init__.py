"""Load forecasting benchmark engine: multivariate, local and global training strategies."""
from .calendar import HolidayCalendar, build_feature_matrix, encode_timestamp
from .ingest import (
    HourlyDataset,
    Region,
    ScalerParams,
    SourceFormat,
    SplitDataset,
    apply_standardizer,
    fit_standardizer,
    invert_standardizer,
    load_raw_csv,
    prepare,
    resample_hourly,
    split_dataset,
)
from .windows import SampleSet, Strategy, StrategySpec, enumerate_samples, shuffle_batches

__version__ = "0.1.0"
