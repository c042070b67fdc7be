"""Landmark fingerprints, the inverted index, and offset-voting matches.

A fingerprint is a set of landmarks: pairs of spectrogram peaks, each packed
into a 21-bit key of (first-peak bin, bin delta, frame delta). The index maps
keys to (clip, anchor frame) postings; querying accumulates anchor-frame
differences per candidate clip and reports every merged offset bin whose vote
count clears the matching threshold.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .audio_io import AudioClip, PROCESS_RATE

# Key layout: f1 in bits 13-20, (df + 63) in bits 6-12, dt in bits 0-5.
_F1_SHIFT = 13
_DF_SHIFT = 6
_F1_MAX = 255
_DF_BIAS = 63


@dataclass(frozen=True)
class FpConfig:
    """Spectrogram and matching parameters.

    The cited landmark tooling leaves window, hop, density, fan-out, and the
    peak-picking rule unspecified; these defaults are this library's own and
    are all surfaced here.
    """

    rate: int = PROCESS_RATE
    window: int = 512
    hop: int = 256
    peak_density: float = 20.0  # target peaks per second
    fanout: int = 3  # max pairs per anchor peak
    dt_range: tuple[int, int] = (1, 63)  # frames
    df_range: tuple[int, int] = (-63, 63)  # bins
    match_threshold: int = 5  # min matching landmarks in one offset bin
    offset_merge: int = 1  # merge vote-histogram bins within +/- this
    log_floor: float = -10.0

    def __post_init__(self):
        if self.window <= 0 or self.window & (self.window - 1):
            raise ValueError(f"window must be a power of two, got {self.window}")
        if not (0 < self.hop <= self.window):
            raise ValueError("hop must be in (0, window]")
        if self.match_threshold < 1:
            raise ValueError("match_threshold must be >= 1")
        if self.fanout < 1:
            raise ValueError("fanout must be >= 1")
        if self.peak_density <= 0:
            raise ValueError("peak_density must be positive")
        if self.offset_merge < 0:
            raise ValueError("offset_merge must be >= 0")

    def compatible_with(self, other: "FpConfig") -> bool:
        """True when offsets computed under one config are valid under the other."""
        return (
            self.rate == other.rate
            and self.window == other.window
            and self.hop == other.hop
        )


@dataclass(frozen=True)
class SpectralPeak:
    frame: int
    bin: int
    log_mag: float


@dataclass(frozen=True)
class Landmark:
    """A pair of spectrogram peaks: anchor time, both bins, frame delta."""

    t1: int
    f1: int
    f2: int
    dt: int


@dataclass
class MatchEntry:
    """One (query, candidate, offset) match with its landmark counts."""

    query_id: str
    clip_id: str
    offset_frames: int  # anchor frame in candidate minus anchor frame in query
    offset_seconds: float
    ml: int  # matching landmarks in this merged offset bin
    tml: int  # total matching landmarks over all offsets for this clip pair
    lq: int  # landmarks of the query clip
    li: int  # landmarks of the candidate clip


@dataclass
class MatchingList:
    query_id: str
    entries: list[MatchEntry] = field(default_factory=list)


def spectrogram(clip: AudioClip, cfg: FpConfig) -> np.ndarray:
    """Log-magnitude STFT, frames x bins, floored at cfg.log_floor.

    Frames advance by cfg.hop; a Hann window is applied; no padding, so
    frame count = floor((N - window) / hop) + 1.
    """
    if clip.rate != cfg.rate:
        raise ValueError(f"clip rate {clip.rate} != configured rate {cfg.rate}")
    n = len(clip.samples)
    if n < cfg.window:
        raise ValueError(f"clip has {n} samples, shorter than one {cfg.window}-sample window")
    frames = (n - cfg.window) // cfg.hop + 1
    strided = np.lib.stride_tricks.sliding_window_view(clip.samples, cfg.window)
    strided = strided[:: cfg.hop][:frames]
    windowed = strided * np.hanning(cfg.window)
    mag = np.abs(np.fft.rfft(windowed, axis=1))
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(mag), cfg.log_floor)


def extract_peaks(spec: np.ndarray, cfg: FpConfig) -> list[SpectralPeak]:
    """Strict local maxima over a +/-3 frame, +/-3 bin neighborhood.

    Candidates must clear log_floor + 1; the result is thinned globally to
    the top peak_density-per-second strongest and returned sorted by
    (frame, bin).
    """
    if spec.size == 0:
        raise ValueError("empty spectrogram")
    footprint = np.ones((7, 7), dtype=bool)
    footprint[3, 3] = False
    neighborhood_max = ndimage.maximum_filter(
        spec, footprint=footprint, mode="constant", cval=-np.inf
    )
    mask = (spec > neighborhood_max) & (spec > cfg.log_floor + 1.0)
    frames_idx, bins_idx = np.nonzero(mask)
    if len(frames_idx) == 0:
        return []

    n_frames = spec.shape[0]
    duration = ((n_frames - 1) * cfg.hop + cfg.window) / cfg.rate
    limit = max(1, int(round(cfg.peak_density * duration)))

    mags = spec[frames_idx, bins_idx]
    order = np.lexsort((bins_idx, frames_idx, -mags))[:limit]
    picked = sorted(
        (int(frames_idx[i]), int(bins_idx[i]), float(mags[i])) for i in order
    )
    return [SpectralPeak(frame=f, bin=b, log_mag=m) for f, b, m in picked]


def pair_landmarks(peaks: list[SpectralPeak], cfg: FpConfig) -> list[Landmark]:
    """Pair each anchor peak with up to cfg.fanout later peaks.

    Admissible partners have a frame delta inside dt_range, a bin delta inside
    df_range, and both bins within the 8-bit key budget. The peak list is
    ordered by (frame, bin), so scanning forward takes partners nearest in
    time first; the result is deterministic.
    """
    dt_lo, dt_hi = cfg.dt_range
    df_lo, df_hi = cfg.df_range
    landmarks: list[Landmark] = []
    for i, anchor in enumerate(peaks):
        if anchor.bin > _F1_MAX:
            continue
        taken = 0
        for j in range(i + 1, len(peaks)):
            other = peaks[j]
            dt = other.frame - anchor.frame
            if dt > dt_hi:
                break
            if dt < dt_lo or other.bin > _F1_MAX:
                continue
            df = other.bin - anchor.bin
            if df_lo <= df <= df_hi:
                landmarks.append(
                    Landmark(t1=anchor.frame, f1=anchor.bin, f2=other.bin, dt=dt)
                )
                taken += 1
                if taken >= cfg.fanout:
                    break
    return landmarks


def pack_key(lm: Landmark) -> int:
    """Pack (f1, f2 - f1, dt) into a 21-bit integer key; bijective on the valid domain."""
    df = lm.f2 - lm.f1
    if not (0 <= lm.f1 <= _F1_MAX):
        raise ValueError(f"f1 {lm.f1} outside [0, {_F1_MAX}]")
    if not (-_DF_BIAS <= df <= _DF_BIAS):
        raise ValueError(f"bin delta {df} outside [-{_DF_BIAS}, {_DF_BIAS}]")
    if not (1 <= lm.dt <= 63):
        raise ValueError(f"dt {lm.dt} outside [1, 63]")
    return (lm.f1 << _F1_SHIFT) | ((df + _DF_BIAS) << _DF_SHIFT) | lm.dt


def unpack_key(key: int) -> tuple[int, int, int]:
    """Inverse of pack_key: (f1, df, dt)."""
    if not (0 <= key < 1 << 21):
        raise ValueError(f"key {key} outside the 21-bit domain")
    dt = key & 0x3F
    df = ((key >> _DF_SHIFT) & 0x7F) - _DF_BIAS
    f1 = key >> _F1_SHIFT
    return f1, df, dt


def hash_landmarks(landmarks: list[Landmark]) -> list[tuple[int, int]]:
    """(key, anchor frame) pairs, the form the index stores and queries."""
    return [(pack_key(lm), lm.t1) for lm in landmarks]


def fingerprint_clip(clip: AudioClip, cfg: FpConfig) -> list[Landmark]:
    """Full extraction pipeline: spectrogram -> peaks -> landmark pairs."""
    return pair_landmarks(extract_peaks(spectrogram(clip, cfg), cfg), cfg)


class FingerprintIndex:
    """Inverted landmark index: key -> [(clip_id, anchor frame)].

    Single-writer while building; immutable and safe for concurrent queries
    once built. Every indexed clip must contribute at least one landmark.
    """

    def __init__(self, cfg: FpConfig):
        self.cfg = cfg
        self.postings: dict[int, list[tuple[str, int]]] = defaultdict(list)
        self.landmark_counts: dict[str, int] = {}
        self.durations: dict[str, float] = {}

    def add_clip(
        self, clip_id: str, landmarks: list[Landmark], duration: float = 0.0
    ) -> None:
        self.add_hashed(clip_id, hash_landmarks(landmarks), duration)

    def add_hashed(
        self, clip_id: str, hashed: list[tuple[int, int]], duration: float = 0.0
    ) -> None:
        if clip_id in self.landmark_counts:
            raise ValueError(f"clip {clip_id!r} already indexed")
        if not hashed:
            raise ValueError(f"clip {clip_id!r} has no landmarks")
        for key, t1 in hashed:
            self.postings[key].append((clip_id, t1))
        self.landmark_counts[clip_id] = len(hashed)
        self.durations[clip_id] = duration

    def hashed_landmarks(self, clip_id: str) -> list[tuple[int, int]]:
        """Reconstruct a clip's (key, anchor frame) pairs from the postings."""
        if clip_id not in self.landmark_counts:
            raise KeyError(clip_id)
        out = [
            (key, t1)
            for key, posts in self.postings.items()
            for cid, t1 in posts
            if cid == clip_id
        ]
        out.sort(key=lambda kt: (kt[1], kt[0]))
        return out

    @property
    def clip_ids(self) -> list[str]:
        return sorted(self.landmark_counts)


def _merge_offset_bins(
    votes: Counter, merge: int
) -> list[tuple[int, int]]:
    """Greedy histogram merging: (mode offset, merged count), disjoint groups.

    Repeatedly takes the strongest remaining offset (ties to the smaller
    offset) and absorbs its neighbors within +/- merge frames. STFT
    quantization jitters votes across adjacent bins, hence the merging.
    """
    remaining = dict(votes)
    bins: list[tuple[int, int]] = []
    for offset in sorted(votes, key=lambda o: (-votes[o], o)):
        if offset not in remaining:
            continue
        total = 0
        for o in range(offset - merge, offset + merge + 1):
            total += remaining.pop(o, 0)
        bins.append((offset, total))
    return bins


def query(
    index: FingerprintIndex,
    query_id: str,
    hashed: list[tuple[int, int]],
    cfg: FpConfig | None = None,
) -> MatchingList:
    """Match hashed query landmarks against the index.

    Votes (candidate anchor frame - query anchor frame) per candidate clip,
    merges adjacent offset bins, and emits one entry per merged bin whose
    count reaches the matching threshold. The query clip itself never
    appears in its own matching list.
    """
    cfg = cfg or index.cfg
    if not cfg.compatible_with(index.cfg):
        raise ValueError("query config incompatible with the index it targets")

    votes: dict[str, Counter] = defaultdict(Counter)
    for key, t_query in hashed:
        for clip_id, t_db in index.postings.get(key, ()):
            if clip_id == query_id:
                continue
            votes[clip_id][t_db - t_query] += 1

    lq = len(hashed)
    entries: list[MatchEntry] = []
    for clip_id, clip_votes in votes.items():
        tml = sum(clip_votes.values())
        for offset, count in _merge_offset_bins(clip_votes, cfg.offset_merge):
            if count >= cfg.match_threshold:
                entries.append(
                    MatchEntry(
                        query_id=query_id,
                        clip_id=clip_id,
                        offset_frames=offset,
                        offset_seconds=offset * cfg.hop / cfg.rate,
                        ml=count,
                        tml=tml,
                        lq=lq,
                        li=index.landmark_counts[clip_id],
                    )
                )
    entries.sort(key=lambda e: (e.clip_id, -e.ml, e.offset_frames))
    return MatchingList(query_id=query_id, entries=entries)


def offset_zero_votes(
    hashed_a: list[tuple[int, int]],
    hashed_b: list[tuple[int, int]],
    tol_frames: int = 2,
) -> int:
    """Matching-landmark votes between two hashed fingerprints near offset 0.

    Counts (a, b) landmark pairs with equal keys whose anchor frames differ
    by at most tol_frames. Symmetric in its arguments.
    """
    by_key: dict[int, list[int]] = defaultdict(list)
    for key, t in hashed_b:
        by_key[key].append(t)
    count = 0
    for key, t in hashed_a:
        for t_b in by_key.get(key, ()):
            if abs(t_b - t) <= tol_frames:
                count += 1
    return count


def with_quality_params(cfg: FpConfig, density_multiplier: float = 3.0) -> FpConfig:
    """Derive the high-density, threshold-1 config used for quality scoring."""
    return replace(
        cfg,
        peak_density=cfg.peak_density * density_multiplier,
        match_threshold=1,
    )
