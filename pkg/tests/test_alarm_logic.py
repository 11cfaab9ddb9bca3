import numpy as np
import pytest

# The library's own names collide with pytest collection (TestConfig, test_*),
# so the arrhythmia checks come in under aliases.
from alarmsentinel.alarm_logic import TestConfig as AlarmConfig
from alarmsentinel.alarm_logic import (
    Verdict,
    classify_alarm,
    detect_annotations,
    most_reliable_channel,
    regular_activity,
    spectral_vt_labels,
)
from alarmsentinel.alarm_logic import test_asystole as asystole_check
from alarmsentinel.alarm_logic import test_bradycardia as bradycardia_check
from alarmsentinel.alarm_logic import test_tachycardia as tachycardia_check
from alarmsentinel.alarm_logic import test_vfib as vfib_check
from alarmsentinel.alarm_logic import test_vtach as vtach_check
from alarmsentinel.beats import BeatAnnotation, BeatLabel, detect_qrs
from alarmsentinel.dtw import corpus_from_records
from alarmsentinel.errors import (
    EmptyCorpus,
    UnknownArrhythmia,
    UnsupportedMethod,
    WindowTooShort,
)
from alarmsentinel.record_io import AlarmMeta, Arrhythmia, ChannelMeta, Record, channel_kind
from alarmsentinel.signal_quality import (
    InvalidInterval,
    InvalidReason,
    QualityReport,
)
from alarmsentinel.synthkit import SynthSpec, generate


def make_record(channels=("II",), fs=250.0, n=4000, arrhythmia=Arrhythmia.VTACH, is_true=True):
    metas = [ChannelMeta(name, channel_kind(name), "mV", 200.0, 0, "") for name in channels]
    samples = np.zeros((len(metas), n))
    return Record("fab", fs, metas, samples, AlarmMeta(arrhythmia, is_true, n))


def clean_quality(record, validity=None):
    v = list(validity) if validity is not None else [1.0] * record.n_channels
    return QualityReport(
        window=(0, record.n_samples),
        invalid=[[] for _ in range(record.n_channels)],
        validity=v,
    )


def ann(indices, channel=0, labels=None):
    return BeatAnnotation(channel, np.asarray(indices, dtype=np.int64), labels)


class TestConfigHandling:
    def test_update_casts_to_field_types(self):
        cfg = AlarmConfig().update({"tachy_beats": "20", "vt_abp_std": "5.5"})
        assert cfg.tachy_beats == 20 and isinstance(cfg.tachy_beats, int)
        assert cfg.vt_abp_std == 5.5

    def test_update_rejects_unknown_key(self):
        with pytest.raises(ValueError, match="unknown config key"):
            AlarmConfig().update({"asystole_gap": 2.0})

    def test_from_file(self, tmp_path):
        p = tmp_path / "thresholds.cfg"
        p.write_text("# comment\nbrady_hr = 50\n\nvf_concentration = 0.7  # inline\n")
        cfg = AlarmConfig.from_file(p)
        assert cfg.brady_hr == 50.0
        assert cfg.vf_concentration == 0.7
        assert cfg.tachy_hr == 140.0  # untouched default

    def test_from_file_rejects_bad_line(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("brady_hr 50\n")
        with pytest.raises(ValueError, match="expected 'key = value'"):
            AlarmConfig.from_file(p)


class TestMostReliableChannel:
    def test_validity_beats_kind(self):
        rec = make_record(("ABP", "II"))
        q = clean_quality(rec, validity=[1.0, 0.5])
        assert most_reliable_channel(rec, q) == 0

    def test_tie_prefers_lead_ii_then_ecg_then_pressure(self):
        rec = make_record(("PLETH", "ABP", "V", "II"))
        q = clean_quality(rec)
        assert most_reliable_channel(rec, q) == 3  # II
        assert most_reliable_channel(rec, q, candidates=[0, 1, 2]) == 2  # other ECG
        assert most_reliable_channel(rec, q, candidates=[0, 1]) == 1  # ABP over PPG

    def test_empty_pool(self):
        rec = make_record()
        assert most_reliable_channel(rec, clean_quality(rec), candidates=[]) is None


class TestRegularActivity:
    def setup_case(self, indices, fs=250.0, invalid=None):
        rec = make_record(fs=fs)
        q = clean_quality(rec)
        if invalid:
            q.invalid[0] = invalid
        return rec, [ann(indices)], q

    def test_steady_rhythm_is_regular(self):
        rec, anns, q = self.setup_case(np.arange(100, 4000, 200))
        per_channel, gate = regular_activity(rec, anns, q)
        assert per_channel == [True]
        assert gate is True

    def test_too_few_beats(self):
        rec, anns, q = self.setup_case([100, 300, 500, 700])
        assert regular_activity(rec, anns, q) == ([False], False)

    def test_rr_bounds_are_inclusive(self):
        # 0.43 s and 1.5 s are exact sample counts at 200 Hz
        fast = np.arange(0, 4000, 86)
        rec, anns, q = self.setup_case(fast, fs=200.0)
        assert regular_activity(rec, anns, q)[1] is True
        slow = np.arange(0, 4000, 300)
        rec, anns, q = self.setup_case(slow, fs=200.0)
        assert regular_activity(rec, anns, q)[1] is True

    def test_rr_outside_bounds(self):
        short = np.arange(0, 4000, 85)  # 0.425 s at 200 Hz
        rec, anns, q = self.setup_case(short, fs=200.0)
        assert regular_activity(rec, anns, q)[1] is False
        long = np.arange(0, 4000, 301)
        rec, anns, q = self.setup_case(long, fs=200.0)
        assert regular_activity(rec, anns, q)[1] is False

    def test_high_rr_spread(self):
        idx = np.cumsum([100] + [125, 275] * 8)  # alternating 0.5 s / 1.1 s
        rec, anns, q = self.setup_case(idx)
        assert regular_activity(rec, anns, q)[1] is False

    def test_any_invalid_sample_disqualifies(self):
        idx = np.arange(100, 4000, 200)
        bad = [InvalidInterval(500, 510, InvalidReason.FLAT_LINE)]
        rec, anns, q = self.setup_case(idx, invalid=bad)
        assert regular_activity(rec, anns, q)[1] is False

    def test_missing_annotation_is_not_regular(self):
        rec = make_record()
        assert regular_activity(rec, [None], clean_quality(rec)) == ([False], False)

    def test_gate_is_any_channel(self):
        rec = make_record(("II", "ABP"))
        q = clean_quality(rec)
        anns = [None, ann(np.arange(100, 4000, 200), channel=1)]
        per_channel, gate = regular_activity(rec, anns, q)
        assert per_channel == [False, True]
        assert gate is True


class TestAsystole:
    def test_empty_window_fires(self):
        assert asystole_check(ann([]), (0, 1000), 250.0) is True

    def test_gap_threshold_is_inclusive(self):
        # interior gap of exactly 3 s (750 samples at 250 Hz)
        fires = ann([5, 756, 1500, 1900])
        assert asystole_check(fires, (0, 2000), 250.0) is True
        holds = ann([5, 755, 1499, 1900])
        assert asystole_check(holds, (0, 2000), 250.0) is False

    def test_leading_and_trailing_spans_count(self):
        assert asystole_check(ann([900, 1000]), (0, 2000), 250.0) is True  # 900 leading
        assert asystole_check(ann([100, 900]), (0, 2000), 250.0) is True  # 1099 trailing

    def test_beats_outside_window_are_ignored(self):
        a = ann([5, 755, 1499, 1900, 5000])
        assert asystole_check(a, (0, 2000), 250.0) is False


class TestRateExtremes:
    def test_brady_threshold_is_strict(self):
        rec = make_record(arrhythmia=Arrhythmia.BRADYCARDIA)
        q = clean_quality(rec)
        at_45 = [ann([0, 333, 666, 1000])]  # 4 beats over 4.0 s -> exactly 45 bpm
        assert bradycardia_check(rec, at_45, q, window=(0, 4000)) is False
        under = [ann([0, 333, 666, 1001])]
        assert bradycardia_check(rec, under, q, window=(0, 4000)) is True

    def test_brady_finds_slow_stretch_in_fast_rhythm(self):
        rec = make_record(arrhythmia=Arrhythmia.BRADYCARDIA)
        idx = [0, 100, 200, 1300, 1400, 1500, 1600, 1700]
        assert bradycardia_check(rec, [ann(idx)], clean_quality(rec), window=(0, 4000)) is True

    def test_too_few_beats_fails_safe(self):
        rec = make_record(arrhythmia=Arrhythmia.BRADYCARDIA)
        assert bradycardia_check(rec, [ann([0, 300, 600])], clean_quality(rec), window=(0, 4000)) is True
        assert bradycardia_check(rec, [None], clean_quality(rec), window=(0, 4000)) is True

    def test_tachy_rate_rule(self):
        rec = make_record(arrhythmia=Arrhythmia.TACHYCARDIA)
        q = clean_quality(rec)
        fast = [ann(np.arange(0, 1700, 100))]  # 17 beats at 150 bpm
        assert tachycardia_check(rec, fast, q, window=(0, 4000)) is True
        slower = [ann(np.arange(0, 1870, 110))]  # 136 bpm
        assert tachycardia_check(rec, slower, q, window=(0, 4000)) is False
        few = [ann(np.arange(0, 1600, 100))]  # 16 beats
        assert tachycardia_check(rec, few, q, window=(0, 4000)) is True

    def test_rate_reads_most_reliable_channel(self):
        rec = make_record(("II", "ABP"), arrhythmia=Arrhythmia.BRADYCARDIA)
        q = clean_quality(rec, validity=[0.5, 1.0])
        anns = [ann([0, 500, 1000, 1500]), ann(np.arange(0, 4000, 200), channel=1)]
        # lead II alone would fire at 30 bpm; the cleaner pressure channel wins
        assert bradycardia_check(rec, anns, q, window=(0, 4000)) is False


class TestVfib:
    fs = 250.0

    def tone(self, freq, seconds=16.0, amp=1.0):
        t = np.arange(int(seconds * self.fs)) / self.fs
        return amp * np.sin(2 * np.pi * freq * t)

    def test_sustained_low_frequency_fires(self):
        assert vfib_check(self.tone(5.0), self.fs) is True

    def test_high_dominant_frequency_does_not(self):
        assert vfib_check(self.tone(10.0), self.fs) is False

    def test_burst_inside_other_activity(self):
        x = self.tone(15.0)
        t = np.arange(len(x)) / self.fs
        burst = (t >= 7.0) & (t < 12.0)
        x[burst] += 2.0 * np.sin(2 * np.pi * 5.0 * t[burst])
        assert vfib_check(x, self.fs) is True

    def test_split_power_is_not_concentrated(self):
        x = self.tone(5.0) + self.tone(15.0)
        assert vfib_check(x, self.fs) is False

    def test_gap_blocks_are_skipped(self):
        x = self.tone(5.0)
        x[:500] = np.nan
        assert vfib_check(x, self.fs) is True
        assert vfib_check(np.full(4000, np.nan), self.fs) is False

    def test_window_too_short(self):
        with pytest.raises(WindowTooShort):
            vfib_check(self.tone(5.0, seconds=2.0), self.fs)


class TestVtach:
    def labelled(self, indices, pattern):
        labels = [BeatLabel.VENTRICULAR if c == "V" else BeatLabel.NORMAL for c in pattern]
        return ann(indices, labels=labels)

    def test_fast_run_fires(self):
        rec = make_record()
        idx = np.arange(0, 875, 125)  # RR 0.5 s -> 4-beat windows at 120 bpm
        a = self.labelled(idx, "NVVVVNN")
        assert vtach_check(rec, [a], clean_quality(rec), window=(0, 4000)) is True

    def test_short_run_does_not(self):
        rec = make_record()
        a = self.labelled(np.arange(0, 875, 125), "NVVVNNN")
        assert vtach_check(rec, [a], clean_quality(rec), window=(0, 4000)) is False

    def test_slow_run_does_not(self):
        rec = make_record()
        idx = np.arange(0, 1575, 225)  # RR 0.9 s -> 66.7 bpm
        a = self.labelled(idx, "VVVVVVV")
        assert vtach_check(rec, [a], clean_quality(rec), window=(0, 4000)) is False

    def test_unlabeled_ecg_abstains(self):
        rec = make_record()
        a = ann(np.arange(0, 875, 125))
        assert vtach_check(rec, [a], clean_quality(rec), window=(0, 4000)) is False

    def test_collapsed_pressure_fires(self):
        rec = make_record(("ABP",))
        rec.samples[0] = 80.0  # std 0 < 6
        assert vtach_check(rec, [None], clean_quality(rec), window=(0, 4000)) is True

    def test_pulsatile_pressure_does_not(self):
        rec = make_record(("ABP",))
        t = np.arange(4000) / 250.0
        rec.samples[0] = 80.0 + 20.0 * np.sin(2 * np.pi * 1.2 * t)
        assert vtach_check(rec, [None], clean_quality(rec), window=(0, 4000)) is False

    def test_pressure_with_gaps_abstains(self):
        rec = make_record(("ABP",))
        rec.samples[0] = 80.0
        rec.samples[0, 100] = np.nan
        assert vtach_check(rec, [None], clean_quality(rec), window=(0, 4000)) is False


class TestSpectralVtLabelsIntegration:
    def test_wide_run_labelled_ventricular(self):
        spec = SynthSpec(name="vt", arrhythmia=Arrhythmia.VTACH, event=True, seed=91)
        rec, truth = generate(spec)
        a = detect_qrs(rec.samples[0], rec.sample_rate)
        window = (rec.n_samples - 4000, rec.n_samples)
        labelled = spectral_vt_labels(rec, a.within(*window))
        v_count = sum(1 for l in labelled.labels if l is BeatLabel.VENTRICULAR)
        assert v_count >= 4

    def test_sinus_record_has_no_ventricular_labels(self, sinus_record):
        rec = sinus_record
        a = detect_qrs(rec.samples[0], rec.sample_rate)
        window = (rec.n_samples - 4000, rec.n_samples)
        labelled = spectral_vt_labels(rec, a.within(*window))
        assert BeatLabel.VENTRICULAR not in labelled.labels

    def test_gap_slice_is_unknown(self, sinus_record):
        rec = sinus_record
        rec = Record(rec.name, rec.sample_rate, rec.channels, rec.samples.copy(), rec.alarm)
        a = detect_qrs(rec.samples[0], rec.sample_rate)
        window = (rec.n_samples - 4000, rec.n_samples)
        beats_in = a.within(*window)
        mid = int(beats_in.indices[len(beats_in.indices) // 2])
        rec.samples[0, mid - 2 : mid + 2] = np.nan
        labelled = spectral_vt_labels(rec, beats_in)
        assert BeatLabel.UNKNOWN in labelled.labels


class TestDetectAnnotations:
    def test_channel_kinds(self):
        rec = make_record(("II", "RESP"))
        t = np.arange(4000) / 250.0
        rec.samples[0] = np.sin(2 * np.pi * 1.0 * t)
        anns = detect_annotations(rec)
        assert anns[0] is not None
        assert anns[1] is None

    def test_suite_record_gets_all_pulse_channels(self, sinus_record):
        rec = sinus_record
        anns = detect_annotations(rec)
        assert all(a is not None for a in anns)


class TestClassifyAlarm:
    def per_class(self, suite, expected_true):
        picked = {}
        for spec, rec, truth in suite:
            if truth.expected_true is expected_true and spec.arrhythmia not in picked:
                picked[spec.arrhythmia] = rec
        return picked

    def test_gate_dismisses_false_alarms(self, suite):
        for arrhythmia, rec in self.per_class(suite, expected_true=False).items():
            verdict = classify_alarm(rec, "improved")
            assert verdict.is_true_alarm is False, arrhythmia
            assert verdict.gate_fired is True

    def test_true_alarms_confirmed(self, suite):
        for arrhythmia, rec in self.per_class(suite, expected_true=True).items():
            verdict = classify_alarm(rec, "improved")
            assert verdict.is_true_alarm is True, arrhythmia
            assert verdict.gate_fired is False

    def test_baseline_suppresses_on_conflicting_votes(self, vt_suite):
        rec = next(r for _, r, t in vt_suite if t.expected_true)
        improved = classify_alarm(rec, "improved")
        baseline = classify_alarm(rec, "baseline")
        assert improved.is_true_alarm is True
        assert baseline.is_true_alarm is False
        ecg = [e for e in baseline.evidence if e.test == "vtach_ecg"]
        abp = [e for e in baseline.evidence if e.test == "vtach_abp"]
        assert any(e.outcome for e in ecg)
        assert abp and not any(e.outcome for e in abp)

    def test_dtw_methods_on_true_vt(self, vt_suite, banks):
        corpus = corpus_from_records(
            [(r, t.expected_true) for _, r, t in vt_suite[:4]]
        )
        rec = next(r for _, r, t in vt_suite if t.expected_true)
        for method in ("dtw-vbank", "dtw-self-min", "dtw-self-kl"):
            verdict = classify_alarm(rec, method, banks=banks)
            assert verdict.is_true_alarm is True, method
        verdict = classify_alarm(rec, "dtw-full", corpus=corpus)
        assert verdict.method == "dtw-full"
        assert any(e.test == "nearest_neighbor" for e in verdict.evidence)

    def test_dtw_gate_still_dismisses(self, vt_suite, banks):
        rec = next(r for _, r, t in vt_suite if not t.expected_true)
        verdict = classify_alarm(rec, "dtw-vbank", banks=banks)
        assert verdict.is_true_alarm is False
        assert verdict.gate_fired is True

    def test_unknown_method(self, sinus_record):
        with pytest.raises(UnsupportedMethod):
            classify_alarm(sinus_record, "psychic")

    def test_dtw_restricted_to_vt_alarms(self, suite):
        rec = next(r for s, r, _ in suite if s.arrhythmia is Arrhythmia.ASYSTOLE)
        with pytest.raises(UnsupportedMethod):
            classify_alarm(rec, "dtw-full")

    def test_untagged_record_rejected(self):
        spec = SynthSpec(name="x", arrhythmia=Arrhythmia.VTACH, event=True, seed=3)
        rec, _ = generate(spec)
        rec.alarm = AlarmMeta(None, True, rec.n_samples)
        with pytest.raises(UnknownArrhythmia):
            classify_alarm(rec, "improved")

    def test_dtw_full_needs_corpus(self, vt_suite):
        rec = next(r for _, r, t in vt_suite if t.expected_true)
        with pytest.raises(EmptyCorpus):
            classify_alarm(rec, "dtw-full")

    def test_fail_safe_without_ecg(self, suite):
        rec = next(
            r for s, r, t in suite
            if s.arrhythmia is Arrhythmia.VFIB and t.expected_true
        )
        pressure_only = Record(
            rec.name,
            rec.sample_rate,
            rec.channels[2:],
            rec.samples[2:],
            rec.alarm,
        )
        verdict = classify_alarm(pressure_only, "improved")
        assert verdict.is_true_alarm is True
        assert any(e.test == "vfib_no_ecg" for e in verdict.evidence)

    def test_verdict_serialization(self, sinus_record):
        verdict = classify_alarm(sinus_record, "improved")
        d = verdict.to_dict()
        assert d["decision"] == "false_alarm"
        assert d["gate_fired"] is True
        assert d["method"] == "improved"
        assert all(set(e) == {"channel", "test", "outcome", "witnesses"} for e in d["evidence"])
        gate_rows = [e for e in d["evidence"] if e["test"] == "regular_activity"]
        assert len(gate_rows) == sinus_record.n_channels
