"""Multimodal device telemetry recording toolkit.

Capture simulated XR input devices at a fixed polling rate independent
of render frame cadence, store the stream in a dual text/binary format,
and turn recordings into validated, resampled, ML-ready tables.
"""

from .analysis import (
    FeatureSelector,
    ResampledTable,
    SessionSummary,
    export_csv,
    filter_records,
    join_summary,
    join_table,
    load_responses,
    resample,
    summarize,
)
from .codec import (
    Encoding,
    EncodedStream,
    RecordingWriter,
    decode_file,
    decode_stream,
    encode_record,
    encode_records,
    encoding_for_path,
    open_writer,
    read_all,
    transcode,
)
from .errors import OxdrError
from .model import (
    Axis,
    Button,
    DemographicsResponse,
    DeviceRecord,
    Double,
    DPad,
    Extension,
    ExtensionRegistry,
    Feature,
    FeatureValue,
    Gender,
    Integer,
    Key,
    Quaternion,
    Record,
    RecordingMetadata,
    Snapshot,
    Stick,
    Touch,
    TouchPhase,
    ValidationReport,
    Vector2,
    Vector3,
    Violation,
    register_value_type,
    validate_record_sequence,
)
from .recorder import DeviceSource, Recorder, RecorderConfig, VirtualClock
from .simdevices import (
    SimSpec,
    load_sim_session,
    make_sim_controller,
    make_sim_eye_tracker,
    make_sim_hmd,
)

__version__ = "0.1.0"
