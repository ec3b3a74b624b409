"""Desk-scale event+frame camera driving pipeline."""

from .recording import (
    ApsFrame,
    Event,
    EVENT_DTYPE,
    Recording,
    RecordingMeta,
    StampedPacket,
    StreamId,
    VehicleChannel,
    VehicleSample,
    open_recording,
    stream_stats,
    write_recording,
)
from .simulator import SensorParams, events_from_frames, reconstruct_log_intensity
from .scene import ScenarioParams, generate_scene, parse_scenario
from .sync import SyncPolicy, WindowedRecord, merge_streams, window_records
from .frames import accumulate_dvs, downsample, normalize_aps, normalize_dvs
from .dataset import (
    LabeledSample,
    PrepStats,
    export_dataset,
    filter_samples,
    read_dataset,
    rebalance_straight,
    temporal_split,
)
from .metrics import RunSummary, eva, rmse, summarize_runs

__version__ = "0.1.0"
