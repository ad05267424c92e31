"""Compute-cost ledger (multiply-accumulates) and an optional wall-power sampler."""
from __future__ import annotations

import logging
import re
import shlex
import shutil
import signal
import subprocess
import tempfile
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import UsageError

log = logging.getLogger(__name__)


def macs_per_window(model=None, window_len: int = 72, *, hidden_size: int = 64, input_size: int = 1) -> int:
    """MACs for one forward pass: four gate affines per step plus the head.

    Each step costs 4 * (h*(h+i) + h) for the gates (bias adds counted as
    one MAC each) and h + 1 for the dense head.
    """
    if model is not None:
        hidden_size, input_size = model.hidden_size, model.input_size
    h, i = hidden_size, input_size
    return window_len * 4 * (h * (h + i) + h) + window_len * (h + 1)


@dataclass
class CostLedger:
    invocations: int = 0
    windows: int = 0
    macs: int = 0
    watchdog_ops: int = 0
    wall_seconds: float | None = None
    avg_watts: float | None = None

    def __add__(self, other: "CostLedger") -> "CostLedger":
        def opt_sum(a, b):
            return None if a is None and b is None else (a or 0.0) + (b or 0.0)

        return CostLedger(
            self.invocations + other.invocations,
            self.windows + other.windows,
            self.macs + other.macs,
            self.watchdog_ops + other.watchdog_ops,
            opt_sum(self.wall_seconds, other.wall_seconds),
            self.avg_watts if other.avg_watts is None else other.avg_watts,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: v for k, v in d.items() if v is not None or k not in ("wall_seconds", "avg_watts")}

    @classmethod
    def from_dict(cls, d: dict) -> "CostLedger":
        return cls(**{k: d.get(k) for k in ("invocations", "windows", "macs", "watchdog_ops", "wall_seconds", "avg_watts")})


def record_invocation(ledger: CostLedger, n_windows: int, model=None, window_len: int = 72) -> CostLedger:
    if n_windows < 0:
        raise UsageError(f"n_windows must be >= 0, got {n_windows}")
    ledger.invocations += 1
    ledger.windows += n_windows
    ledger.macs += n_windows * macs_per_window(model, window_len)
    return ledger


def reduction_fraction(with_watchdog: CostLedger, without_watchdog: CostLedger) -> float:
    if without_watchdog.macs <= 0:
        raise UsageError("baseline ledger has zero MACs; reduction is undefined")
    return 1.0 - with_watchdog.macs / without_watchdog.macs


_FLOAT = re.compile(r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")


def parse_power_output(text: str) -> float | None:
    """Average watts from powerstat-style output: last number on the ``Average`` row."""
    for line in reversed(text.splitlines()):
        if line.strip().startswith("Average"):
            numbers = _FLOAT.findall(line)
            if numbers:
                return float(numbers[-1])
    return None


@dataclass
class PowerTrace:
    wall_seconds: float
    avg_watts: float | None = None
    raw_path: str | None = None


class external_sampler:
    """Context manager running a power sampler around a block.

    ``command`` is a shell-style string or argv list. If the executable is
    absent the block still runs and only wall time is recorded. Parse
    failures keep the raw output on disk and log its path.
    """

    def __init__(self, command, raw_dir=None, stop_timeout: float = 5.0):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.raw_dir = Path(raw_dir) if raw_dir else Path(tempfile.gettempdir())
        self.stop_timeout = stop_timeout
        self.trace: PowerTrace | None = None
        self._proc = None
        self._raw = None

    def __enter__(self):
        if not self.argv or shutil.which(self.argv[0]) is None:
            log.warning("power sampler %r not found; reporting compute ledger only", self.argv[:1])
        else:
            self.raw_dir.mkdir(parents=True, exist_ok=True)
            fd, path = tempfile.mkstemp(prefix="power_", suffix=".log", dir=self.raw_dir)
            self._raw = Path(path)
            self._fh = open(fd, "wb")
            self._proc = subprocess.Popen(self.argv, stdout=self._fh, stderr=subprocess.STDOUT)
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        elapsed = time.perf_counter() - self._t0
        avg = None
        if self._proc is not None:
            if self._proc.poll() is None:
                self._proc.send_signal(signal.SIGINT)
                try:
                    self._proc.wait(self.stop_timeout)
                except subprocess.TimeoutExpired:
                    self._proc.kill()
                    self._proc.wait()
            self._fh.close()
            avg = parse_power_output(self._raw.read_text(errors="replace"))
            if avg is None:
                log.warning("could not parse power sampler output; raw output kept at %s", self._raw)
        self.trace = PowerTrace(elapsed, avg, str(self._raw) if self._raw else None)
        return False

    def apply(self, ledger: CostLedger) -> CostLedger:
        if self.trace is not None:
            ledger.wall_seconds = self.trace.wall_seconds
            ledger.avg_watts = self.trace.avg_watts
        return ledger
