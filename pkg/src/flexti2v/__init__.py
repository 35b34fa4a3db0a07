"""Training-free text-image-to-video conditioning engine."""

from .conditioning import (
    SwapMask,
    SwapSchedule,
    apply_conditioning,
    bound_index,
    frame_replace,
    gen_mask,
    patch_swap,
    swap_fraction,
)
from .engine import (
    DummyEstimator,
    EngineConfig,
    NoiseEstimator,
    OracleEstimator,
    PromptSpec,
    StepRecord,
    cfg_combine,
    dummy_denoise,
    init_noise,
    oracle_estimate,
    run_flexti2v,
)
from .errors import (
    ConfigError,
    DimensionError,
    EngineError,
    FormatError,
    ProtocolError,
    TransportError,
    VersionMismatchError,
    WorkerError,
)
from .remote import RemoteEstimator
from .rng import Purpose, RngState, StreamKey, derive_stream, gauss, next_u64
from .schedule import (
    NoiseSchedule,
    TimestepMap,
    ddim_step,
    invert,
    make_schedule,
    select_timesteps,
)
from .tensors import (
    Codec,
    ConditionSet,
    LatentFrame,
    LatentVideo,
    decode,
    encode,
    read_ltn,
    read_ppm,
    write_ltn,
    write_ppm,
)

__version__ = "0.1.0"
