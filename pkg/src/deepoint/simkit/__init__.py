"""Synthetic multi-camera pointing sessions."""

from .benchmark import Session, make_benchmark, simulate_session
from .observe import BENCHMARK_NOISE, NoiseModel, PoseTrack, observe
from .room import ActorSpec, Box, RoomSpec, default_actors, default_room, random_actor
from .session import EventLog, SessionTruth, derive_seed, emit_events, generate_session
from .splits import SplitAssignment, apportion, make_splits

__all__ = [
    "ActorSpec", "BENCHMARK_NOISE", "Box", "EventLog", "NoiseModel", "PoseTrack", "RoomSpec",
    "Session", "SessionTruth", "SplitAssignment", "apportion", "default_actors", "default_room",
    "derive_seed", "emit_events", "generate_session", "make_benchmark", "make_splits", "observe",
    "random_actor", "simulate_session",
]
