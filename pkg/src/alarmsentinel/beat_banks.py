"""Beat-bank classifiers: representative banks and self-beat novelty.

Three ways to decide whether a beat is ventricular, all built on the
same banded DTW distance at the beat level (1 s radius): nearest
neighbour against curated ventricular/standard banks, and two
novelty rules that compare a beat against 20 of the patient's own
pre-alarm beats (minimum-distance threshold, and KL divergence
between distance histograms).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .beats import BeatAnnotation, BeatLabel, beat_segments
from .dtw import BEAT_RADIUS, WarpParams, dtw_distance, znormalize
from .errors import (
    BankTooSmall,
    DimensionMismatch,
    EmptyBank,
    InsufficientCleanBeats,
    IoFailure,
    NotNormalized,
    TooFewBeats,
    UnsupportedRate,
    ZeroVariance,
)
from .record_io import Record, resample_half
from .signal_quality import CleanThresholds, clean_window_metrics, is_clean

BANK_RATE_HZ = 125.0
SELF_BANK_SIZE = 20
SECTION_S = 10.0
BEAT_MIN_SAMPLES = int(0.2 * BANK_RATE_HZ)
BEAT_MAX_SAMPLES = int(2.0 * BANK_RATE_HZ)
KL_BINS = 10
KL_EDGE_FACTOR = 1.5
KL_EPSILON = 1e-9


class BankKind(Enum):
    VENTRICULAR = "ventricular"
    STANDARD = "standard"
    SELF = "self"


@dataclass
class BeatBank:
    kind: BankKind
    beats: list[np.ndarray] = field(default_factory=list)  # z-normalized, bank rate
    provenance: list[tuple[str, int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.beats)


@dataclass
class NoveltyStats:
    mu_min: float
    sigma_min: float
    mu_kl: float
    sigma_kl: float
    reference_distances: np.ndarray  # condensed pairwise list, (i, j) with i < j
    bin_edges: np.ndarray


@dataclass
class BankSet:
    """The banks a classification method may need, bundled for dispatch."""

    ventricular: BeatBank | None = None
    standard: BeatBank | None = None
    self_bank: BeatBank | None = None
    stats: NoveltyStats | None = None


def _at_bank_rate(record: Record) -> tuple[Record, int]:
    """Return the record at the bank rate plus the index scale factor."""
    if record.sample_rate == BANK_RATE_HZ:
        return record, 1
    if record.sample_rate == 2 * BANK_RATE_HZ:
        return resample_half(record), 2
    raise UnsupportedRate(
        f"beat banks run at {BANK_RATE_HZ:g} Hz, record is {record.sample_rate:g} Hz"
    )


def _beat_distance(a: np.ndarray, b: np.ndarray, params: WarpParams) -> float:
    # beats of very different lengths would make the band infeasible;
    # widen it just enough so every pair stays comparable
    radius = max(params.radius, abs(len(a) - len(b)))
    return dtw_distance(a, b, WarpParams(radius))


def extract_self_bank(
    record: Record,
    annotation: BeatAnnotation,
    thresholds: CleanThresholds | None = None,
    size: int = SELF_BANK_SIZE,
    exclude_s: float = 16.0,
) -> BeatBank:
    """Collect the patient's own recent clean beats, newest first.

    Scans 10 s sections backward, starting before the alarm section
    (the final ``exclude_s`` seconds stay out: they may contain the
    event being adjudicated, and banked beats must never be the beats
    under test). A section contributes its interior beats only when
    its clean-signal metrics pass, so every banked beat comes from
    trustworthy signal.

    Raises
    ------
    InsufficientCleanBeats
        Fewer than ``size`` beats survived; carries the count found.
    """
    rec, factor = _at_bank_rate(record)
    section = int(SECTION_S * BANK_RATE_HZ)
    ch = annotation.channel
    idx = annotation.indices // factor
    samples = rec.samples[ch]

    beats: list[np.ndarray] = []
    provenance: list[tuple[str, int, int]] = []
    sec_end = rec.alarm.alarm_index - int(round(exclude_s * BANK_RATE_HZ))
    while sec_end - section >= 0 and len(beats) < size:
        sec_start = sec_end - section
        window = samples[sec_start:sec_end]
        try:
            metrics = clean_window_metrics(window, BANK_RATE_HZ)
        except ZeroVariance:
            sec_end = sec_start
            continue
        if is_clean(metrics, thresholds):
            in_section = idx[(idx >= sec_start) & (idx < sec_end)]
            if len(in_section) >= 3:
                segments = beat_segments(BeatAnnotation(ch, in_section))
                for seg in reversed(segments[1:-1]):  # interior beats, newest first
                    s = max(seg.start, 0)
                    e = min(seg.end, rec.n_samples)
                    if not BEAT_MIN_SAMPLES <= e - s <= BEAT_MAX_SAMPLES:
                        continue
                    slice_ = samples[s:e]
                    if np.isnan(slice_).any():
                        continue
                    try:
                        beats.append(znormalize(slice_))
                    except ZeroVariance:
                        continue
                    provenance.append((rec.name, s, e))
                    if len(beats) == size:
                        break
        sec_end = sec_start

    if len(beats) < size:
        raise InsufficientCleanBeats(
            f"found {len(beats)} clean beats before the alarm section, need {size}",
            found=len(beats),
        )
    return BeatBank(BankKind.SELF, beats, provenance)


def bank_novelty_stats(bank: BeatBank, params: WarpParams | None = None) -> NoveltyStats:
    """Pairwise-distance statistics used by both novelty rules.

    The KL baselines are leave-one-out: for each bank beat, a
    histogram of its distances to the others is compared against the
    histogram of the remaining pairs, giving the spread of KL values a
    genuinely normal beat produces.
    """
    params = params or WarpParams(BEAT_RADIUS)
    n = len(bank)
    if n < 3:
        raise BankTooSmall(f"novelty statistics need at least 3 beats, have {n}")

    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = _beat_distance(bank.beats[i], bank.beats[j], params)

    iu, ju = np.triu_indices(n, k=1)
    reference = dist[iu, ju]
    mins = np.array([np.min(np.delete(dist[i], i)) for i in range(n)])
    bin_edges = _bin_edges(reference)

    kls = np.empty(n)
    for i in range(n):
        own = np.delete(dist[i], i)
        rest = reference[(iu != i) & (ju != i)]
        p = _histogram(own, bin_edges)
        q = smooth_distribution(_histogram(rest, bin_edges))
        kls[i] = kl_divergence(p, q)

    return NoveltyStats(
        mu_min=float(np.mean(mins)),
        sigma_min=float(np.std(mins)),
        mu_kl=float(np.mean(kls)),
        sigma_kl=float(np.std(kls)),
        reference_distances=reference,
        bin_edges=bin_edges,
    )


def _bin_edges(reference: np.ndarray) -> np.ndarray:
    hi = float(np.max(reference)) * KL_EDGE_FACTOR if len(reference) else 0.0
    if hi <= 0.0:
        hi = 1e-12  # degenerate identical-beat bank: any real distance lands in the tail
    return np.linspace(0.0, hi, KL_BINS + 1)


def _histogram(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    clipped = np.clip(values, edges[0], edges[-1])
    counts, _ = np.histogram(clipped, bins=edges)
    return counts / len(values)


def smooth_distribution(q: np.ndarray, epsilon: float = KL_EPSILON) -> np.ndarray:
    """Additive smoothing: lift zero bins by ``epsilon``, renormalize."""
    q = np.asarray(q, dtype=np.float64)
    return (q + epsilon) / (q.sum() + epsilon * len(q))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Kullback-Leibler divergence sum(P * ln(P/Q)), with 0 ln 0 = 0.

    Raises
    ------
    DimensionMismatch
        P and Q have different lengths.
    NotNormalized
        Either input has negative mass or does not sum to 1 within
        1e-9.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionMismatch(f"P has {p.shape}, Q has {q.shape}")
    for name, h in (("P", p), ("Q", q)):
        if (h < 0).any() or abs(h.sum() - 1.0) > 1e-9:
            raise NotNormalized(f"{name} is not a probability distribution")
    mask = p > 0
    with np.errstate(divide="ignore"):
        terms = p[mask] * np.log(p[mask] / q[mask])
    return float(np.sum(terms))


def classify_beat_vbank(
    beat: np.ndarray,
    ventricular: BeatBank,
    standard: BeatBank,
    params: WarpParams | None = None,
) -> BeatLabel:
    """Label of the nearest beat across both banks; ties go ventricular."""
    params = params or WarpParams(BEAT_RADIUS)
    if len(ventricular) == 0 or len(standard) == 0:
        raise EmptyBank("vbank classification needs both banks populated")
    b = znormalize(beat)
    best = np.inf
    label = BeatLabel.NORMAL
    for bank, bank_label in ((ventricular, BeatLabel.VENTRICULAR), (standard, BeatLabel.NORMAL)):
        for member in bank.beats:
            d = _beat_distance(b, member, params)
            if d < best:
                best = d
                label = bank_label
    return label


def _bank_distances(beat: np.ndarray, bank: BeatBank, params: WarpParams) -> np.ndarray:
    b = znormalize(beat)
    return np.array([_beat_distance(b, member, params) for member in bank.beats])


def classify_beat_self_min(
    beat: np.ndarray,
    bank: BeatBank,
    stats: NoveltyStats,
    params: WarpParams | None = None,
) -> BeatLabel:
    """Ventricular iff the minimum distance to the bank exceeds mu + sigma."""
    params = params or WarpParams(BEAT_RADIUS)
    if len(bank) == 0:
        raise EmptyBank("self-bank classification needs a populated bank")
    d_min = float(np.min(_bank_distances(beat, bank, params)))
    return BeatLabel.VENTRICULAR if d_min > stats.mu_min + stats.sigma_min else BeatLabel.NORMAL


def classify_beat_self_kl(
    beat: np.ndarray,
    bank: BeatBank,
    stats: NoveltyStats,
    params: WarpParams | None = None,
) -> BeatLabel:
    """Ventricular iff the beat's distance histogram diverges from the bank's."""
    params = params or WarpParams(BEAT_RADIUS)
    if len(bank) == 0:
        raise EmptyBank("self-bank classification needs a populated bank")
    distances = _bank_distances(beat, bank, params)
    p = _histogram(distances, stats.bin_edges)
    q = smooth_distribution(_histogram(stats.reference_distances, stats.bin_edges))
    kl = kl_divergence(p, q)
    return BeatLabel.VENTRICULAR if kl > stats.mu_kl + stats.sigma_kl else BeatLabel.NORMAL


def vt_labels_from_bank(
    record: Record,
    annotation: BeatAnnotation,
    method: str,
    banks: BankSet,
    params: WarpParams | None = None,
) -> BeatAnnotation:
    """Label every annotated beat with the chosen bank classifier.

    ``method`` is one of ``vbank``, ``self-min``, ``self-kl``. Beats
    whose slice cannot be compared (flat, out of length bounds, or
    containing gaps) come back Unknown rather than aborting the rest.
    """
    params = params or WarpParams(BEAT_RADIUS)
    rec, factor = _at_bank_rate(record)
    if annotation.count < 3:
        raise TooFewBeats(f"beat labelling needs at least 3 beats, have {annotation.count}")
    idx = annotation.indices // factor
    samples = rec.samples[annotation.channel]
    segments = beat_segments(BeatAnnotation(annotation.channel, idx))

    if method == "vbank":
        if banks.ventricular is None or banks.standard is None:
            raise EmptyBank("vbank method needs ventricular and standard banks")
        classify = lambda b: classify_beat_vbank(b, banks.ventricular, banks.standard, params)
    elif method in ("self-min", "self-kl"):
        if banks.self_bank is None or banks.stats is None:
            raise EmptyBank("self methods need the patient bank and its statistics")
        fn = classify_beat_self_min if method == "self-min" else classify_beat_self_kl
        classify = lambda b: fn(b, banks.self_bank, banks.stats, params)
    else:
        raise ValueError(f"unknown bank method {method!r}")

    labels: list[BeatLabel] = []
    for seg in segments:
        s = max(seg.start, 0)
        e = min(seg.end, rec.n_samples)
        slice_ = samples[s:e]
        if not BEAT_MIN_SAMPLES <= e - s <= BEAT_MAX_SAMPLES or np.isnan(slice_).any():
            labels.append(BeatLabel.UNKNOWN)
            continue
        try:
            labels.append(classify(slice_))
        except ZeroVariance:
            labels.append(BeatLabel.UNKNOWN)
    return BeatAnnotation(annotation.channel, annotation.indices.copy(), labels)


def save_beat_file(path: str | Path, values: np.ndarray, label: BeatLabel) -> Path:
    """Write one beat: header ``fs=125 label=V`` then one sample per line."""
    path = Path(path)
    code = "V" if label is BeatLabel.VENTRICULAR else "N"
    lines = [f"fs={BANK_RATE_HZ:g} label={code}"]
    lines.extend(repr(float(v)) for v in np.asarray(values, dtype=np.float64))
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write beat file {path}: {exc}") from None
    return path


def load_beat_file(path: str | Path) -> tuple[np.ndarray, BeatLabel]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read beat file {path}: {exc}") from None
    if not lines:
        raise IoFailure(f"beat file {path} is empty")
    header = dict(f.split("=", 1) for f in lines[0].split() if "=" in f)
    if header.get("fs") != f"{BANK_RATE_HZ:g}" or header.get("label") not in ("V", "N"):
        raise IoFailure(f"beat file {path} has a bad header: {lines[0]!r}")
    try:
        values = np.array([float(v) for v in lines[1:] if v.strip()], dtype=np.float64)
    except ValueError as exc:
        raise IoFailure(f"beat file {path} has a bad sample line: {exc}") from None
    if len(values) == 0:
        raise IoFailure(f"beat file {path} has no samples")
    label = BeatLabel.VENTRICULAR if header["label"] == "V" else BeatLabel.NORMAL
    return values, label


def save_bank(bank: BeatBank, directory: str | Path, prefix: str = "beat") -> list[Path]:
    directory = Path(directory)
    label = BeatLabel.VENTRICULAR if bank.kind is BankKind.VENTRICULAR else BeatLabel.NORMAL
    paths = []
    for i, beat in enumerate(bank.beats):
        paths.append(save_beat_file(directory / f"{prefix}_{i:03d}.txt", beat, label))
    return paths


def load_bank_dir(directory: str | Path) -> BankSet:
    """Load every beat file in a directory into labelled banks.

    Beats are z-normalized on load so hand-edited files still satisfy
    the bank invariant.
    """
    directory = Path(directory)
    files = sorted(directory.glob("*.txt"))
    if not files:
        raise EmptyBank(f"no beat files (*.txt) in {directory}")
    vbank = BeatBank(BankKind.VENTRICULAR)
    sbank = BeatBank(BankKind.STANDARD)
    for f in files:
        values, label = load_beat_file(f)
        bank = vbank if label is BeatLabel.VENTRICULAR else sbank
        bank.beats.append(znormalize(values))
        bank.provenance.append((f.name, 0, len(values)))
    return BankSet(ventricular=vbank, standard=sbank)
