"""Alarm adjudication: regular-activity gate plus per-arrhythmia tests.

The flow mirrors the bedside logic: first decide whether any channel
shows completely regular activity in the analysis window (if so the
alarm cannot be real and is dismissed), otherwise run the test
specific to the alarm type. Every decision keeps per-channel evidence
so a verdict can be audited.

A deliberate asymmetry runs through everything here: when a test
cannot be evaluated (too few beats, no usable channel, bank
construction failed), the alarm is allowed through as true. False
negatives are the dangerous direction.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.signal import periodogram

from .beats import BeatAnnotation, BeatLabel, beat_segments, classify_beat_spectral, detect_pulses, detect_qrs
from .beat_banks import BankSet, bank_novelty_stats, extract_self_bank, vt_labels_from_bank
from .dtw import TrainingCorpus, WarpParams, classify_full_signal
from .errors import (
    EmptyCorpus,
    InsufficientCleanBeats,
    MissingLead,
    TooFewBeats,
    UnknownArrhythmia,
    UnsupportedMethod,
    WindowTooShort,
    ZeroVariance,
)
from .record_io import Arrhythmia, ChannelKind, Record
from .signal_quality import QualityReport, assess_quality

METHODS = ("baseline", "improved", "dtw-full", "dtw-vbank", "dtw-self-min", "dtw-self-kl")
DTW_METHODS = ("dtw-full", "dtw-vbank", "dtw-self-min", "dtw-self-kl")


@dataclass
class TestConfig:
    """Thresholds for the gate and the five arrhythmia tests."""

    analysis_window_s: float = 16.0
    asystole_gap_s: float = 3.0
    brady_hr: float = 45.0
    brady_beats: int = 4
    tachy_hr: float = 140.0
    tachy_beats: int = 17
    vt_hr: float = 95.0
    vt_beats: int = 4
    vt_abp_std: float = 6.0
    vf_min_duration_s: float = 3.0
    vf_dominant_lo_hz: float = 2.0
    vf_dominant_hi_hz: float = 8.0
    vf_concentration: float = 0.6
    rr_cv_max: float = 0.1
    rr_min_s: float = 0.43
    rr_max_s: float = 1.5
    min_regular_beats: int = 5

    def update(self, overrides: dict) -> "TestConfig":
        names = {f.name: f.type for f in fields(self)}
        for key, value in overrides.items():
            if key not in names:
                raise ValueError(f"unknown config key {key!r}")
            current = getattr(self, key)
            setattr(self, key, type(current)(value))
        return self

    @classmethod
    def from_file(cls, path: str | Path) -> "TestConfig":
        """Read ``key = value`` lines; unknown keys are errors."""
        overrides = {}
        for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {line_no}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            overrides[key] = value
        return cls().update(overrides)


@dataclass
class ChannelEvidence:
    channel: str
    test: str
    outcome: bool
    witnesses: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "channel": self.channel,
            "test": self.test,
            "outcome": bool(self.outcome),
            "witnesses": {k: (None if v is None else float(v)) for k, v in self.witnesses.items()},
        }


@dataclass
class Verdict:
    is_true_alarm: bool
    gate_fired: bool
    evidence: list[ChannelEvidence]
    method: str

    def to_dict(self) -> dict:
        return {
            "decision": "true_alarm" if self.is_true_alarm else "false_alarm",
            "gate_fired": bool(self.gate_fired),
            "method": self.method,
            "evidence": [e.to_dict() for e in self.evidence],
        }


_KIND_PRIORITY = {
    ChannelKind.ECG: 1,
    ChannelKind.ABP: 2,
    ChannelKind.PPG: 3,
    ChannelKind.RESP: 4,
    ChannelKind.OTHER: 5,
}


def most_reliable_channel(
    record: Record,
    quality: QualityReport,
    candidates: list[int] | None = None,
) -> int | None:
    """Channel with the highest validity; ties prefer ECG lead II,
    then any ECG, then pressure, then PPG."""
    pool = candidates if candidates is not None else list(range(record.n_channels))
    if not pool:
        return None

    def key(i: int) -> tuple:
        ch = record.channels[i]
        rank = 0 if (ch.kind is ChannelKind.ECG and ch.name.lower() == "ii") else _KIND_PRIORITY[ch.kind]
        return (-quality.validity[i], rank, i)

    return min(pool, key=key)


def _invalid_overlap(quality: QualityReport, channel: int, window: tuple[int, int]) -> int:
    start, end = window
    return sum(
        max(0, min(iv.end, end) - max(iv.start, start))
        for iv in quality.invalid[channel]
    )


def regular_activity(
    record: Record,
    annotations: list[BeatAnnotation | None],
    quality: QualityReport,
    window: tuple[int, int] | None = None,
    config: TestConfig | None = None,
) -> tuple[list[bool], bool]:
    """Per-channel regularity and the any-channel verdict.

    A channel is regular only when the window has zero invalid
    samples, at least five beats, RR spread (coefficient of variation)
    at most 0.1, and every RR interval within [0.43 s, 1.5 s].
    """
    config = config or TestConfig()
    window = window or _analysis_window(record, config)
    fs = record.sample_rate
    per_channel: list[bool] = []
    for i in range(record.n_channels):
        ann = annotations[i] if i < len(annotations) else None
        regular = False
        if ann is not None and _invalid_overlap(quality, i, window) == 0:
            beats_in = ann.within(*window)
            if beats_in.count >= config.min_regular_beats:
                rr = np.diff(beats_in.indices) / fs
                cv = float(np.std(rr) / np.mean(rr))
                regular = (
                    cv <= config.rr_cv_max
                    and float(rr.min()) >= config.rr_min_s
                    and float(rr.max()) <= config.rr_max_s
                )
        per_channel.append(regular)
    return per_channel, any(per_channel)


def _longest_gap_samples(indices: np.ndarray, window: tuple[int, int]) -> int:
    """Longest run of beat-free samples in the half-open window."""
    start, end = window
    inside = indices[(indices >= start) & (indices < end)]
    if len(inside) == 0:
        return end - start
    spans = [int(inside[0]) - start]
    if len(inside) > 1:
        spans.extend(int(d) - 1 for d in np.diff(inside))
    spans.append(end - int(inside[-1]) - 1)
    return max(spans)


def test_asystole(
    annotation: BeatAnnotation,
    window: tuple[int, int],
    sample_rate: float,
    config: TestConfig | None = None,
) -> bool:
    """True iff some 3 s stretch of the window contains no beat."""
    config = config or TestConfig()
    gap = _longest_gap_samples(annotation.indices, window)
    return gap >= config.asystole_gap_s * sample_rate


def _rate_extreme(
    record: Record,
    annotations: list[BeatAnnotation | None],
    quality: QualityReport,
    window: tuple[int, int],
    config: TestConfig,
    beats_per_window: int,
    pick_min: bool,
) -> tuple[bool, str, dict]:
    candidates = [
        i for i in range(record.n_channels)
        if annotations[i] is not None and record.channels[i].kind in (ChannelKind.ECG, ChannelKind.ABP, ChannelKind.PPG)
    ]
    best = most_reliable_channel(record, quality, candidates)
    if best is None:
        return True, "", {"reason_no_channel": 1.0}
    name = record.channels[best].name
    beats_in = annotations[best].within(*window)
    if beats_in.count < beats_per_window:
        # not enough beats to measure a rate: never suppress on missing evidence
        return True, name, {"beats": float(beats_in.count), "needed": float(beats_per_window)}
    spans = (beats_in.indices[beats_per_window - 1 :] - beats_in.indices[: beats_in.count - beats_per_window + 1])
    rates = 60.0 * (beats_per_window - 1) / (spans / record.sample_rate)
    extreme = float(rates.min() if pick_min else rates.max())
    key = "min_window_hr" if pick_min else "max_window_hr"
    if pick_min:
        fired = extreme < config.brady_hr
    else:
        fired = extreme > config.tachy_hr
    return fired, name, {key: extreme, "beats": float(beats_in.count)}


def test_bradycardia(
    record: Record,
    annotations: list[BeatAnnotation | None],
    quality: QualityReport,
    window: tuple[int, int] | None = None,
    config: TestConfig | None = None,
) -> bool:
    """True iff the most reliable channel's slowest 4-beat window is
    under the threshold (or it has too few beats to say)."""
    config = config or TestConfig()
    window = window or _analysis_window(record, config)
    fired, _, _ = _rate_extreme(record, annotations, quality, window, config, config.brady_beats, pick_min=True)
    return fired


def test_tachycardia(
    record: Record,
    annotations: list[BeatAnnotation | None],
    quality: QualityReport,
    window: tuple[int, int] | None = None,
    config: TestConfig | None = None,
) -> bool:
    """True iff the fastest 17-beat window exceeds the threshold."""
    config = config or TestConfig()
    window = window or _analysis_window(record, config)
    fired, _, _ = _rate_extreme(record, annotations, quality, window, config, config.tachy_beats, pick_min=False)
    return fired


def _vfib_detail(samples: np.ndarray, fs: float, config: TestConfig) -> tuple[bool, dict]:
    n = len(samples)
    need = int(round(config.vf_min_duration_s * fs))
    if n < need:
        raise WindowTooShort(f"fibrillation test needs {config.vf_min_duration_s} s, got {n / fs:.2f} s")
    win = int(round(2.0 * fs))
    hop = int(round(0.5 * fs))
    qualifying: list[bool] = []
    for s in range(0, n - win + 1, hop):
        block = samples[s : s + win]
        if np.isnan(block).any():
            qualifying.append(False)
            continue
        f, psd = periodogram(block, fs=fs, detrend="constant", nfft=max(1024, win))
        band = (f >= 0.5) & (f <= 30.0)
        total = float(psd[band].sum())
        if total <= 0.0:
            qualifying.append(False)
            continue
        f_band = f[band]
        p_band = psd[band]
        f_dom = float(f_band[np.argmax(p_band)])
        around = (f_band >= max(0.5, f_dom - 1.0)) & (f_band <= f_dom + 1.0)
        concentrated = float(p_band[around].sum()) / total
        qualifying.append(
            config.vf_dominant_lo_hz <= f_dom <= config.vf_dominant_hi_hz
            and concentrated >= config.vf_concentration
        )
    best_span = 0.0
    run = 0
    for q in qualifying:
        run = run + 1 if q else 0
        if run:
            best_span = max(best_span, (run - 1) * (hop / fs) + (win / fs))
    return best_span >= config.vf_min_duration_s, {"sustained_s": best_span}


def test_vfib(samples: np.ndarray, sample_rate: float, config: TestConfig | None = None) -> bool:
    """True iff low-frequency oscillation dominates for long enough.

    Sliding 2 s spectra must show a dominant frequency in 2-8 Hz with
    at least 60% of 0.5-30 Hz power within 1 Hz of it, sustained for
    the configured minimum duration.
    """
    fired, _ = _vfib_detail(np.asarray(samples, dtype=np.float64), sample_rate, config or TestConfig())
    return fired


def _ventricular_run_hr(beats_in: BeatAnnotation, fs: float, config: TestConfig) -> tuple[bool, float, float]:
    """Scan runs of consecutive ventricular labels for a fast window."""
    idx = beats_in.indices
    labels = beats_in.labels or []
    best_run = 0
    best_hr = 0.0
    run_start = None
    for pos in range(len(labels) + 1):
        ventricular = pos < len(labels) and labels[pos] is BeatLabel.VENTRICULAR
        if ventricular:
            if run_start is None:
                run_start = pos
            continue
        if run_start is not None:
            length = pos - run_start
            best_run = max(best_run, length)
            k = config.vt_beats
            for s in range(run_start, pos - k + 1):
                span = (idx[s + k - 1] - idx[s]) / fs
                best_hr = max(best_hr, 60.0 * (k - 1) / span)
            run_start = None
    return best_hr > config.vt_hr, float(best_run), best_hr


def _vtach_votes(
    record: Record,
    annotations: list[BeatAnnotation | None],
    quality: QualityReport,
    window: tuple[int, int],
    config: TestConfig,
    channels: list[int] | None = None,
    include_abp: bool = True,
) -> list[ChannelEvidence]:
    votes: list[ChannelEvidence] = []
    pool = channels if channels is not None else list(range(record.n_channels))
    for i in pool:
        ch = record.channels[i]
        ann = annotations[i]
        if ch.kind is ChannelKind.ECG and ann is not None and ann.labels is not None:
            beats_in = ann.within(*window)
            positive, run, hr = _ventricular_run_hr(beats_in, record.sample_rate, config)
            votes.append(
                ChannelEvidence(ch.name, "vtach_ecg", positive, {"ventricular_run": run, "run_hr": hr})
            )
        elif ch.kind is ChannelKind.ABP and include_abp:
            segment = record.samples[i, window[0] : window[1]]
            if np.isnan(segment).any() or len(segment) == 0:
                continue  # no vote from a channel with gaps
            std = float(np.std(segment))
            votes.append(
                ChannelEvidence(ch.name, "vtach_abp", std < config.vt_abp_std, {"abp_std": std})
            )
    return votes


def test_vtach(
    record: Record,
    annotations: list[BeatAnnotation | None],
    quality: QualityReport,
    window: tuple[int, int] | None = None,
    config: TestConfig | None = None,
) -> bool:
    """Any-channel VT rule: an ECG channel with a fast ventricular run,
    or a pressure channel with a collapsed pulse, confirms the alarm.

    ECG annotations must carry beat labels; unlabeled channels abstain.
    """
    config = config or TestConfig()
    window = window or _analysis_window(record, config)
    votes = _vtach_votes(record, annotations, quality, window, config)
    return any(v.outcome for v in votes)


def spectral_vt_labels(record: Record, annotation: BeatAnnotation, config: TestConfig | None = None) -> BeatAnnotation:
    """Label each beat Normal/Ventricular from its slice's band power."""
    segments = beat_segments(annotation)
    fs = record.sample_rate
    samples = record.samples[annotation.channel]
    min_len = int(round(0.2 * fs))
    labels: list[BeatLabel] = []
    for seg in segments:
        s = max(0, seg.start)
        e = min(record.n_samples, seg.end)
        slice_ = samples[s:e]
        if e - s < min_len or np.isnan(slice_).any():
            labels.append(BeatLabel.UNKNOWN)
            continue
        try:
            labels.append(classify_beat_spectral(slice_, fs))
        except ZeroVariance:
            labels.append(BeatLabel.UNKNOWN)
    return BeatAnnotation(annotation.channel, annotation.indices.copy(), labels)


def _analysis_window(record: Record, config: TestConfig) -> tuple[int, int]:
    end = record.alarm.alarm_index
    start = max(0, end - int(round(config.analysis_window_s * record.sample_rate)))
    return start, end


def detect_annotations(record: Record) -> list[BeatAnnotation | None]:
    """Beat annotations for every channel the detectors understand."""
    annotations: list[BeatAnnotation | None] = []
    for i, ch in enumerate(record.channels):
        try:
            if ch.kind is ChannelKind.ECG:
                annotations.append(detect_qrs(record.samples[i], record.sample_rate, channel=i))
            elif ch.kind in (ChannelKind.ABP, ChannelKind.PPG):
                annotations.append(detect_pulses(record.samples[i], record.sample_rate, channel=i))
            else:
                annotations.append(None)
        except WindowTooShort:
            annotations.append(None)
    return annotations


def _gate_evidence(
    record: Record,
    annotations: list[BeatAnnotation | None],
    quality: QualityReport,
    window: tuple[int, int],
    per_channel: list[bool],
) -> list[ChannelEvidence]:
    out = []
    fs = record.sample_rate
    for i, ch in enumerate(record.channels):
        witnesses: dict[str, float] = {"validity": quality.validity[i]}
        ann = annotations[i]
        if ann is not None:
            beats_in = ann.within(*window)
            witnesses["beats"] = float(beats_in.count)
            if beats_in.count >= 2:
                rr = np.diff(beats_in.indices) / fs
                witnesses["rr_cv"] = float(np.std(rr) / np.mean(rr))
        out.append(ChannelEvidence(ch.name, "regular_activity", per_channel[i], witnesses))
    return out


def _fail_safe(evidence: list[ChannelEvidence], method: str, note: str, **witnesses: float) -> Verdict:
    evidence = evidence + [ChannelEvidence("", note, True, dict(witnesses))]
    return Verdict(is_true_alarm=True, gate_fired=False, evidence=evidence, method=method)


def classify_alarm(
    record: Record,
    method: str = "improved",
    config: TestConfig | None = None,
    banks: BankSet | None = None,
    corpus: TrainingCorpus | None = None,
    annotations: list[BeatAnnotation | None] | None = None,
    warp: WarpParams | None = None,
    lead: str = "II",
) -> Verdict:
    """Adjudicate one alarm record end to end.

    Validity screening and the regular-activity gate always run; the
    gate dismissing the alarm overrides everything else. Otherwise the
    record's arrhythmia tag picks the test. The DTW methods apply only
    to ventricular tachycardia alarms and analyze a single lead.

    ``annotations`` replaces the built-in detectors (entries may be
    None for channels without beats); ``banks`` supplies beat banks
    for the bank methods (the self bank is built from the record
    itself when absent); ``corpus`` is required for dtw-full.
    """
    if method not in METHODS:
        raise UnsupportedMethod(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    arrhythmia = record.alarm.arrhythmia
    if arrhythmia is None:
        raise UnknownArrhythmia(f"record {record.name!r} carries no arrhythmia tag")
    if method in DTW_METHODS and arrhythmia is not Arrhythmia.VTACH:
        raise UnsupportedMethod(f"{method} is defined only for ventricular tachycardia alarms")

    config = config or TestConfig()
    window = _analysis_window(record, config)
    quality = assess_quality(record, window)
    if annotations is None:
        annotations = detect_annotations(record)

    per_channel, gate = regular_activity(record, annotations, quality, window, config)
    evidence = _gate_evidence(record, annotations, quality, window, per_channel)
    if gate:
        return Verdict(is_true_alarm=False, gate_fired=True, evidence=evidence, method=method)

    fs = record.sample_rate

    if arrhythmia is Arrhythmia.ASYSTOLE:
        candidates = [i for i in range(record.n_channels) if annotations[i] is not None]
        best = most_reliable_channel(record, quality, candidates)
        if best is None:
            return _fail_safe(evidence, method, "asystole_no_channel")
        gap = _longest_gap_samples(annotations[best].indices, window)
        fired = gap >= config.asystole_gap_s * fs
        evidence.append(
            ChannelEvidence(record.channels[best].name, "asystole_gap", fired, {"longest_gap_s": gap / fs})
        )
        return Verdict(fired, False, evidence, method)

    if arrhythmia is Arrhythmia.BRADYCARDIA:
        fired, name, witnesses = _rate_extreme(
            record, annotations, quality, window, config, config.brady_beats, pick_min=True
        )
        evidence.append(ChannelEvidence(name, "bradycardia_hr", fired, witnesses))
        return Verdict(fired, False, evidence, method)

    if arrhythmia is Arrhythmia.TACHYCARDIA:
        fired, name, witnesses = _rate_extreme(
            record, annotations, quality, window, config, config.tachy_beats, pick_min=False
        )
        evidence.append(ChannelEvidence(name, "tachycardia_hr", fired, witnesses))
        return Verdict(fired, False, evidence, method)

    if arrhythmia is Arrhythmia.VFIB:
        ecg = record.channels_of_kind(ChannelKind.ECG)
        best = most_reliable_channel(record, quality, ecg)
        if best is None:
            return _fail_safe(evidence, method, "vfib_no_ecg")
        fired, witnesses = _vfib_detail(record.samples[best, window[0] : window[1]], fs, config)
        evidence.append(ChannelEvidence(record.channels[best].name, "vfib_dominance", fired, witnesses))
        return Verdict(fired, False, evidence, method)

    # ventricular tachycardia
    if method in ("baseline", "improved"):
        labelled: list[BeatAnnotation | None] = list(annotations)
        for i in record.channels_of_kind(ChannelKind.ECG):
            ann = annotations[i]
            if ann is None:
                continue
            beats_in = ann.within(*window)
            if beats_in.count < 3:
                labelled[i] = None  # too few beats to segment; channel abstains
                continue
            labelled[i] = spectral_vt_labels(record, beats_in, config)
        votes = _vtach_votes(record, labelled, quality, window, config)
        evidence.extend(votes)
        if not votes:
            return _fail_safe(evidence, method, "vtach_no_votes")
        positives = [v for v in votes if v.outcome]
        if method == "improved":
            decision = bool(positives)
        else:
            decision = bool(positives) and len(positives) == len(votes)
        return Verdict(decision, False, evidence, method)

    if method == "dtw-full":
        if corpus is None:
            raise EmptyCorpus("dtw-full needs a training corpus")
        inner = classify_full_signal(record, corpus, warp, lead=lead)
        evidence.extend(inner.evidence)
        return Verdict(inner.is_true_alarm, False, evidence, method)

    # bank methods analyze a single lead
    try:
        lead_idx = record.channel_index(lead)
    except MissingLead:
        ecg = record.channels_of_kind(ChannelKind.ECG)
        if not ecg:
            return _fail_safe(evidence, method, "vtach_no_ecg")
        lead_idx = ecg[0]
    ann = annotations[lead_idx]
    if ann is None:
        return _fail_safe(evidence, method, "vtach_no_annotations")

    bank_method = method.removeprefix("dtw-")
    bank_set = banks or BankSet()
    if bank_method in ("self-min", "self-kl") and (bank_set.self_bank is None or bank_set.stats is None):
        try:
            self_bank = extract_self_bank(record, ann, exclude_s=config.analysis_window_s)
            bank_set = BankSet(
                ventricular=bank_set.ventricular,
                standard=bank_set.standard,
                self_bank=self_bank,
                stats=bank_novelty_stats(self_bank, warp),
            )
        except InsufficientCleanBeats as exc:
            return _fail_safe(evidence, method, "self_bank_failed", clean_beats_found=float(exc.found))

    beats_in = ann.within(*window)
    try:
        labelled_ann = vt_labels_from_bank(record, beats_in, bank_method, bank_set, warp)
    except TooFewBeats as exc:
        return _fail_safe(evidence, method, "vtach_too_few_beats", beats=float(beats_in.count))

    labelled = [None] * record.n_channels
    labelled[lead_idx] = labelled_ann
    votes = _vtach_votes(record, labelled, quality, window, config, channels=[lead_idx], include_abp=False)
    evidence.extend(votes)
    if not votes:
        return _fail_safe(evidence, method, "vtach_no_votes")
    return Verdict(any(v.outcome for v in votes), False, evidence, method)
