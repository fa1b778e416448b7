"""Simulator, analytics and pair-rate optimizer for entanglement-based QKD links."""
from .core import (
    BasisStats,
    ChannelParams,
    DetectorParams,
    DeviationBound,
    PhaseErrorMode,
    ProtocolParams,
    SourceParams,
    binary_entropy,
    channel_attenuation_db,
    effective_noise_yield,
    pair_rate_per_window,
    phase_error_estimate,
    secure_key_length,
    visibility_to_error,
)
from .link import Arm, LinkModel, RatePrediction, predict, sweep
from .optimize import Optimum, optimize_pair_rate, optimum_vs_loss
from .satpass import DualLinkModel, PassProfile, dual_predict, pass_skr
from .clock import ClockModel
from .config import build_link, load_config
from .eventsim import Clocks, synthesize
from .keyproc import DisclosedSample, KeyReport, OracleFull, analyze, full_pipeline, privacy_amplify
from .presets import micius_dual, snspd_dual, terrestrial
from .sync import correlation_histogram, find_coincidences, recover_clock
from .tags import TagStream, read_tags, write_tags

__version__ = "0.1.0"
