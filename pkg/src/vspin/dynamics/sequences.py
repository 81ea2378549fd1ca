"""Pulse sequences: green reset, resonant pumping, dark waits and probes."""

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..errors import InvalidParameterError
from ..validation import check_grid
from .rates import Drive, LevelSystem, RateParams, build_rate_matrix, evolve, lorentzian

SEGMENT_KINDS = ("green", "resonant", "wait", "probe")


@dataclass(frozen=True)
class Segment:
    """One piece of a pulse sequence.

    ``laser_detuning`` (MHz) is measured from the line of the ``target``
    branch.  ``green`` segments use ``green_rate`` when given and the
    reset rate of the :class:`RateParams` otherwise.
    """

    kind: str
    duration: float
    pump_rate: float = 0.0
    laser_detuning: float = 0.0
    target: str = "down"
    bins: int = 1
    green_rate: float = None

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise InvalidParameterError(f"segment kind must be one of {SEGMENT_KINDS}, got {self.kind!r}")
        if not np.isfinite(self.duration) or self.duration <= 0:
            raise InvalidParameterError(f"segment duration must be > 0, got {self.duration!r}")
        if self.pump_rate < 0 or not np.isfinite(self.pump_rate):
            raise InvalidParameterError(f"pump_rate must be >= 0, got {self.pump_rate!r}")
        if self.target not in ("down", "up"):
            raise InvalidParameterError(f"target must be 'down' or 'up', got {self.target!r}")
        if int(self.bins) < 1:
            raise InvalidParameterError("bins must be >= 1")


@dataclass(frozen=True)
class PulseSequence:
    """Ordered segments plus the optical geometry they act on.

    Attributes
    ----------
    segments : tuple of Segment
    optical_splitting : float
        Separation (MHz) of the up-branch line above the down-branch line.
        Infinite means a laser only ever addresses its target branch.
    ground_splitting : float
        Ground Zeeman splitting (MHz), used for detailed balance.
    """

    segments: tuple
    optical_splitting: float = np.inf
    ground_splitting: float = 0.0

    def __post_init__(self):
        segs = tuple(s if isinstance(s, Segment) else Segment(**s) for s in self.segments)
        if not segs:
            raise InvalidParameterError("a pulse sequence needs at least one segment")
        object.__setattr__(self, "segments", segs)

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        d = asdict(self)
        if not np.isfinite(self.optical_splitting):
            d["optical_splitting"] = None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {"segments", "optical_splitting", "ground_splitting"}
        if unknown:
            raise InvalidParameterError(f"unknown sequence keys: {sorted(unknown)}")
        if d.get("optical_splitting") is None:
            d["optical_splitting"] = np.inf
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def standard_recovery_sequence(tau, pump_duration=200e-6, pump_rate=2e6, green_duration=0.5e-3,
                               probe_duration=None, optical_splitting=np.inf, target="down"):
    """Green init, resonant pump, dark wait ``tau`` and identical probe pulse."""
    probe_duration = pump_duration if probe_duration is None else probe_duration
    segs = [Segment("green", green_duration),
            Segment("resonant", pump_duration, pump_rate, target=target)]
    if tau > 0:
        segs.append(Segment("wait", tau))
    segs.append(Segment("probe", probe_duration, pump_rate, target=target))
    return PulseSequence(tuple(segs), optical_splitting)


def _drive_for(seg, p, optical_splitting):
    if seg.kind not in ("resonant", "probe") or seg.pump_rate == 0:
        return None
    w_target = float(lorentzian(seg.laser_detuning, p.linewidth_fwhm))
    if np.isfinite(optical_splitting):
        # the other line sits at +splitting (up) or -splitting (down) from the target
        offset = optical_splitting if seg.target == "down" else -optical_splitting
        w_other = float(lorentzian(seg.laser_detuning - offset, p.linewidth_fwhm))
    else:
        w_other = 0.0
    if seg.target == "down":
        return Drive(seg.pump_rate, w_target, w_other)
    return Drive(seg.pump_rate, w_other, w_target)


def segment_generator(seg, p, optical_splitting=np.inf, ground_splitting=0.0):
    green = 0.0
    if seg.kind == "green":
        green = p.green_reset_rate if seg.green_rate is None else seg.green_rate
    return build_rate_matrix(p, _drive_for(seg, p, optical_splitting), ground_splitting, green)


@dataclass(frozen=True, eq=False)
class SequenceResult:
    """Fluorescence per segment and the final level populations."""

    segments: tuple
    counts: tuple          # per segment, array of per-bin counts
    final: LevelSystem
    states: tuple = field(default=())

    def total(self, index):
        return float(np.sum(self.counts[index]))

    def totals(self, kind=None):
        return np.array([np.sum(c) for s, c in zip(self.segments, self.counts)
                         if kind is None or s.kind == kind])

    def trace(self):
        """Concatenated ``(time_s, counts)`` record, bins stamped at their centres."""
        times, values, t0 = [], [], 0.0
        for seg, c in zip(self.segments, self.counts):
            dt = seg.duration / len(c)
            times.append(t0 + dt * (np.arange(len(c)) + 0.5))
            values.append(np.asarray(c))
            t0 += seg.duration
        return np.concatenate(times), np.concatenate(values)


def simulate_sequence(seq, p=None, initial=None):
    """Run a pulse sequence for one defect.

    Parameters
    ----------
    seq : PulseSequence
    p : RateParams, optional
    initial : LevelSystem, optional
        Defaults to the fully mixed ground doublet.

    Returns
    -------
    SequenceResult
    """
    p = RateParams() if p is None else p
    state = LevelSystem.mixed() if initial is None else initial
    counts, states = [], []
    for seg in seq.segments:
        M = segment_generator(seg, p, seq.optical_splitting, seq.ground_splitting)
        state, c = evolve(state, M, seg.duration, int(seg.bins), p=p)
        counts.append(c)
        states.append(state)
    return SequenceResult(seq.segments, tuple(counts), state, tuple(states))


@dataclass(frozen=True, eq=False)
class RecoveryCurve:
    """Recovered fraction against dark time."""

    tau: np.ndarray
    recovered_fraction: np.ndarray
    sigma: np.ndarray = None

    def __post_init__(self):
        tau = check_grid(self.tau, "tau", strictly_increasing=True)
        y = np.asarray(self.recovered_fraction, dtype=float).ravel()
        if y.shape != tau.shape:
            raise InvalidParameterError("tau and recovered_fraction must have the same length")
        if not np.all(np.isfinite(y)):
            raise InvalidParameterError("recovered_fraction must be finite")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "recovered_fraction", y)
        if self.sigma is not None:
            s = np.asarray(self.sigma, dtype=float).ravel()
            if s.shape != tau.shape or np.any(s <= 0):
                raise InvalidParameterError("sigma must be positive and match tau")
            object.__setattr__(self, "sigma", s)

    def __len__(self):
        return self.tau.size

    def with_noise(self, level, seed=0):
        """Copy with additive Gaussian noise of standard deviation ``level``."""
        rng = np.random.default_rng(seed)
        noisy = self.recovered_fraction + level * rng.standard_normal(self.tau.size)
        return RecoveryCurve(self.tau, noisy, np.full(self.tau.size, level) if level > 0 else None)


def default_recovery_delays(fast_window=0.04, n_fast=801, slow_end=300.0, n_slow=200):
    """Delay grid resolving both recovery channels.

    Dense linear sampling over the shelf-emptying window followed by
    logarithmic sampling of the slow spin relaxation.
    """
    return np.concatenate([np.linspace(0.0, fast_window, n_fast),
                           np.geomspace(fast_window * 1.2, slow_end, n_slow)])


def depletion_recovery_scan(taus=None, template=None, p=None):
    """Recovered fraction ``probe / pump`` as a function of the wait time.

    Parameters
    ----------
    taus : array_like
        Ascending dark times in s; zero drops the wait segment.
    template : PulseSequence, optional
        Must contain one ``resonant`` and one ``probe`` segment; the first
        ``wait`` segment (if any) is replaced by the scanned wait.  Defaults
        to :func:`standard_recovery_sequence`.
    p : RateParams, optional

    Returns
    -------
    RecoveryCurve
    """
    taus = check_grid(default_recovery_delays() if taus is None else taus, "taus", strictly_increasing=True)
    if np.any(taus < 0):
        raise InvalidParameterError("taus must be >= 0")
    p = RateParams() if p is None else p
    template = standard_recovery_sequence(1.0) if template is None else template
    kinds = [s.kind for s in template.segments]
    if "resonant" not in kinds or "probe" not in kinds:
        raise InvalidParameterError("template needs a 'resonant' and a 'probe' segment")
    i_probe = kinds.index("probe")
    i_wait = kinds.index("wait") if "wait" in kinds else None
    split_at = i_wait if i_wait is not None else i_probe
    before = template.replace(segments=template.segments[:split_at])
    after = template.segments[(i_wait + 1) if i_wait is not None else i_probe:]

    prefix = simulate_sequence(before, p)
    pump = prefix.totals("resonant").sum()
    if pump <= 0:
        raise InvalidParameterError("pump segment produced no fluorescence")
    out = np.empty(taus.size)
    for k, tau in enumerate(taus):
        segs = ((Segment("wait", float(tau)),) if tau > 0 else ()) + tuple(after)
        rest = simulate_sequence(template.replace(segments=segs), p, prefix.final)
        out[k] = rest.totals("probe").sum() / pump
    return RecoveryCurve(taus, out)
