"""Synthetic recordings with camera-movement events and a plantable
pre-movement kinematic signature.

The camera is piecewise constant with a configurable number of smooth
(minimum-jerk) movements. Instrument trajectories are sums of
low-frequency sinusoids plus white velocity noise; during the signature
window before each camera movement the instrument velocity is scaled
down by a linear ramp and the gripper drifts toward closure. With
``signature_strength`` 0 the pre-movement windows carry no information.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dataset import KinematicRecording, MovementInterval
from .errors import InfeasibleError, InvalidParameterError


@dataclass(frozen=True)
class SynthConfig:
    duration_s: float = 600.0
    dt: float = 0.02
    num_events: int = 12
    min_event_gap_s: float = 10.0
    signature_strength: float = 1.0
    signature_window_s: float = 1.0
    noise_std: float = 0.02  # white velocity noise, m/s
    speed_cap: float = 0.5  # m/s per instrument
    seed: int = 0
    event_duration_range_s: tuple[float, float] = (0.5, 1.5)
    event_amplitude_range_m: tuple[float, float] = (0.02, 0.05)
    num_instruments: int = 3

    def validate(self) -> None:
        if self.dt <= 0 or self.duration_s <= 0:
            raise InvalidParameterError("duration and dt must be positive")
        if self.num_events < 0 or self.signature_strength < 0:
            raise InvalidParameterError("num_events and signature_strength must be >= 0")
        if self.num_events * self.min_event_gap_s >= self.duration_s:
            raise InvalidParameterError(
                f"{self.num_events} events with {self.min_event_gap_s}s gaps "
                f"do not fit in {self.duration_s}s"
            )


def _minimum_jerk(u: np.ndarray) -> np.ndarray:
    """Smooth 0->1 ramp with zero endpoint velocity and acceleration."""
    return 10.0 * u**3 - 15.0 * u**4 + 6.0 * u**5


def _place_events(cfg: SynthConfig, rng: np.random.Generator, n_samples: int) -> list[tuple[int, int]]:
    """Randomly place (onset, duration) pairs with the configured spacing."""
    dur_lo, dur_hi = cfg.event_duration_range_s
    durations = rng.uniform(dur_lo, dur_hi, size=cfg.num_events)
    gap = max(cfg.min_event_gap_s, cfg.signature_window_s + 1.0)
    # Each event reserves its duration plus the inter-event gap; the first
    # onset additionally needs a full gap of lead-in for the signature.
    reserved = gap + np.sum(durations) + cfg.num_events * gap
    slack_s = cfg.duration_s - reserved
    if cfg.num_events > 0 and slack_s <= 0:
        raise InfeasibleError(
            f"cannot pack {cfg.num_events} events into {cfg.duration_s}s "
            f"with {gap}s gaps"
        )
    jitter = np.sort(rng.uniform(0.0, slack_s, size=cfg.num_events))
    events: list[tuple[int, int]] = []
    cursor = gap
    for k in range(cfg.num_events):
        onset_s = cursor + jitter[k]
        onset = int(round(onset_s / cfg.dt))
        length = max(1, int(round(durations[k] / cfg.dt)))
        if onset + length >= n_samples:
            raise InfeasibleError("event packing overflows the recording")
        events.append((onset, length))
        cursor = onset_s + durations[k] + gap - jitter[k]
    return events


def generate_recording(
    cfg: SynthConfig, recording_id: str = "synth"
) -> tuple[KinematicRecording, list[MovementInterval]]:
    """Generate one recording plus its ground-truth movement intervals.

    Deterministic given ``cfg.seed``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = int(round(cfg.duration_s / cfg.dt)) + 1
    t = np.arange(n) * cfg.dt

    events = _place_events(cfg, rng, n)
    intervals = [MovementInterval(start, start + length) for start, length in events]

    # Camera: piecewise constant, minimum-jerk moves of random 3-D direction.
    camera = np.zeros((n, 3))
    for start, length in events:
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        amp = rng.uniform(*cfg.event_amplitude_range_m)
        ramp = _minimum_jerk(np.linspace(0.0, 1.0, length + 1))
        camera[start:start + length + 1] += amp * ramp[:, None] * direction[None, :]
        camera[start + length + 1:] += amp * direction[None, :]

    # Velocity gain: ramped slow-down over the signature window, held through
    # the camera movement itself (so detection jitter at the onset cannot put
    # full-speed samples at the end of a pre-movement window), released over
    # a short recovery after the movement ends.
    gain = np.ones(n)
    win = max(1, int(round(cfg.signature_window_s / cfg.dt)))
    recover = max(1, int(round(0.2 / cfg.dt)))
    closure = np.zeros(n)
    s = cfg.signature_strength
    for start, length in events:
        lo = max(0, start - win)
        m = start - lo
        w = (np.arange(m) + 1.0) / m
        gain[lo:start] = np.minimum(gain[lo:start], 1.0 - s * w)
        closure[lo:start] = np.maximum(closure[lo:start], s * 0.4 * w)
        end = start + length
        gain[start:end] = np.minimum(gain[start:end], 1.0 - s)
        closure[start:end] = np.maximum(closure[start:end], s * 0.4)
        hi = min(n, end + recover)
        back = 1.0 - s * (1.0 - (np.arange(hi - end) + 1.0) / recover)
        gain[end:hi] = np.minimum(gain[end:hi], back)
        closure[end:hi] = np.maximum(
            closure[end:hi], s * 0.4 * (1.0 - (np.arange(hi - end) + 1.0) / recover)
        )
    gain = np.clip(gain, 0.0, 1.0)

    instrument_position = np.zeros((cfg.num_instruments, n, 3))
    gripper_angle = np.zeros((cfg.num_instruments, n))
    for i in range(cfg.num_instruments):
        vel = np.zeros((n, 3))
        for axis in range(3):
            for _ in range(3):
                freq = rng.uniform(0.05, 0.4)
                amp = rng.uniform(0.01, 0.04)
                phase = rng.uniform(0.0, 2.0 * np.pi)
                vel[:, axis] += amp * 2.0 * np.pi * freq * np.cos(2.0 * np.pi * freq * t + phase)
        vel += rng.normal(scale=cfg.noise_std, size=(n, 3))
        speed = np.linalg.norm(vel, axis=1)
        over = speed > cfg.speed_cap
        vel[over] *= (cfg.speed_cap / speed[over])[:, None]
        vel *= gain[:, None]
        pos = np.concatenate([[np.zeros(3)], np.cumsum(vel[:-1] * cfg.dt, axis=0)])
        pos += rng.uniform(-0.05, 0.05, size=3)

        # Instrument positions are camera-relative: jump after each movement.
        for start, length in events:
            jump = rng.uniform(-0.02, 0.02, size=3)
            pos[start + length:] += jump

        base = rng.uniform(0.4, 0.8)
        g_freq = rng.uniform(0.05, 0.2)
        g_phase = rng.uniform(0.0, 2.0 * np.pi)
        grip = base + 0.15 * np.sin(2.0 * np.pi * g_freq * t + g_phase)
        grip = grip - closure

        instrument_position[i] = pos
        gripper_angle[i] = grip

    rec = KinematicRecording(
        id=recording_id,
        dt=cfg.dt,
        camera_position=camera,
        instrument_position=instrument_position,
        gripper_angle=gripper_angle,
    )
    return rec, intervals


def write_ground_truth(path, cfg: SynthConfig, intervals: list[MovementInterval]) -> None:
    """Sidecar JSON with the generator config and true movement intervals."""
    payload = {
        "config": asdict(cfg),
        "intervals": [[iv.start, iv.end] for iv in intervals],
    }
    from .dataset import write_json_atomic

    write_json_atomic(path, payload)
