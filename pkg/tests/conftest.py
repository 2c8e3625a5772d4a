import struct
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

SR = 16000


def tone(freq_hz: float, duration_s: float, amp: float, sr: int = SR) -> np.ndarray:
    t = np.arange(int(round(duration_s * sr))) / sr
    return amp * np.sin(2.0 * np.pi * freq_hz * t)


def silence(duration_s: float, sr: int = SR) -> np.ndarray:
    return np.zeros(int(round(duration_s * sr)))


def uniform_noise(duration_s: float, amp: float, seed: int, sr: int = SR) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-amp, amp, int(round(duration_s * sr)))


def wav_bytes_ref(samples: np.ndarray, sr: int = SR, channels: int = 1) -> bytes:
    """Reference WAV writer, independent of the package's encoder."""
    ints = np.asarray(np.clip(np.rint(samples * 32768.0), -32768, 32767), dtype="<i2")
    payload = ints.tobytes()
    out = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    out += b"fmt " + struct.pack(
        "<IHHIIHH", 16, 1, channels, sr, sr * 2 * channels, 2 * channels, 16
    )
    out += b"data" + struct.pack("<I", len(payload)) + payload
    return out


def wav_from_int16(ints: np.ndarray, sr: int = SR, channels: int = 1) -> bytes:
    payload = np.asarray(ints, dtype="<i2").tobytes()
    out = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    out += b"fmt " + struct.pack(
        "<IHHIIHH", 16, 1, channels, sr, sr * 2 * channels, 2 * channels, 16
    )
    out += b"data" + struct.pack("<I", len(payload)) + payload
    return out


@pytest.fixture
def speech_fixture_wav() -> bytes:
    """0.5 s silence + 1.0 s 1 kHz tone (amp 0.5) + 0.5 s silence."""
    samples = np.concatenate([silence(0.5), tone(1000, 1.0, 0.5), silence(0.5)])
    return wav_bytes_ref(samples)


# acceptance pass/fail reporting ------------------------------------------

_acceptance_results: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    if "test_acceptance.py" not in str(report.nodeid):
        return
    name = report.nodeid.split("::")[-1]
    _acceptance_results.append((name, report.outcome.upper()))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _acceptance_results:
        mark = "PASS" if outcome == "PASSED" else outcome
        terminalreporter.write_line(f"[{mark}] {name}")
