import csv
import math

import numpy as np
import pytest

from avdkf.data import save_wav, write_manifest
from avdkf.metrics import (
    CSV_COLUMNS,
    EvalPair,
    evaluate_corpus,
    log_spectral_distance,
    pairs_from_manifest,
    si_sdr,
)
from avdkf.signal import Waveform


def _noise(n, seed):
    return np.random.default_rng(seed).normal(scale=0.1, size=n)


def test_si_sdr_orthogonal_error():
    assert si_sdr(np.array([1.0, 1.0]), np.array([1.0, 0.0])) == pytest.approx(0.0, abs=1e-9)


def test_si_sdr_perfect_estimate():
    ref = _noise(1000, 0)
    assert si_sdr(-3.0 * ref, ref) >= 100.0


def test_si_sdr_scale_invariance():
    ref, err = _noise(1000, 1), _noise(1000, 2)
    est = ref + 0.5 * err
    base = si_sdr(est, ref)
    assert si_sdr(4.0 * est, ref) == pytest.approx(base, rel=1e-9)
    assert si_sdr(est, 0.25 * ref) == pytest.approx(base, rel=1e-9)
    assert si_sdr(Waveform(est), Waveform(ref)) == base


def test_si_sdr_errors():
    with pytest.raises(ValueError, match="all zeros"):
        si_sdr(np.ones(4), np.zeros(4))
    with pytest.raises(ValueError, match="Length mismatch"):
        si_sdr(np.ones(4), np.ones(5))


def test_lsd(tiny_stft):
    ref = _noise(1600, 3)
    other = _noise(1600, 4)
    assert log_spectral_distance(ref, ref, tiny_stft) == 0.0
    assert log_spectral_distance(10 * ref, ref, tiny_stft) == pytest.approx(20.0, abs=1e-6)
    assert log_spectral_distance(ref, other, tiny_stft) == pytest.approx(
        log_spectral_distance(other, ref, tiny_stft)
    )
    with pytest.raises(ValueError):
        log_spectral_distance(ref, ref[:-1], tiny_stft)


def _pair(utt_id, seed, snr=0.0, noise="white", n=1600, **kwargs):
    clean = Waveform(_noise(n, seed))
    estimate = Waveform(clean.samples + 0.3 * _noise(n, seed + 100))
    noisy = Waveform(clean.samples + _noise(n, seed + 200))
    return EvalPair(
        utt_id, estimate, clean, noisy, snr_db=snr, noise=noise, model="AV_DKF", **kwargs
    )


def test_single_pair(tiny_stft):
    pair = _pair("a", 0)
    report = evaluate_corpus([pair], tiny_stft)
    (u,) = report.utterances
    (g,) = report.groups
    assert u.si_sdr == pytest.approx(si_sdr(pair.estimate, pair.clean))
    assert u.input_si_sdr == pytest.approx(si_sdr(pair.noisy, pair.clean))
    assert u.improvement == pytest.approx(u.si_sdr - u.input_si_sdr)
    assert g.n == 1
    assert g.si_sdr == u.si_sdr
    assert report.skipped == []


def test_group_means_and_order(tiny_stft):
    pairs = [_pair("a", 0), _pair("b", 1), _pair("c", 2), _pair("d", 3, snr=5.0)]
    report = evaluate_corpus(pairs, tiny_stft)
    assert [g.group[0] for g in report.groups] == [0.0, 5.0]
    zero_db = [u for u in report.utterances if u.group[0] == 0.0]
    assert report.groups[0].n == 3
    assert report.groups[0].si_sdr == pytest.approx(np.mean([u.si_sdr for u in zero_db]))
    assert report.groups[0].lsd == pytest.approx(np.mean([u.lsd for u in zero_db]))

    shuffled = evaluate_corpus(pairs[::-1], tiny_stft)
    assert shuffled.groups == report.groups
    assert shuffled.utterances == report.utterances


def test_missing_noisy_leaves_improvement_empty(tiny_stft):
    pair = _pair("a", 0)
    pair = EvalPair(pair.id, pair.estimate, pair.clean)
    report = evaluate_corpus([pair], tiny_stft)
    assert report.utterances[0].improvement is None
    assert report.groups[0].improvement is None
    assert report.groups[0].group[0] == math.inf


def test_length_mismatch_is_skipped(tiny_stft, caplog):
    good = _pair("good", 0)
    bad = _pair("bad", 1)
    bad = EvalPair("bad", Waveform(bad.estimate.samples[:-100]), bad.clean)
    report = evaluate_corpus([good, bad], tiny_stft)
    assert report.skipped == ["bad"]
    assert [u.id for u in report.utterances] == ["good"]
    assert "Skipping 'bad'" in caplog.text

def test_pair_shorter_than_one_frame_is_skipped(tiny_stft, caplog):
    short = _pair("short", 1, n=tiny_stft.frame_len - 2)
    report = evaluate_corpus([_pair("good", 0), short], tiny_stft)
    assert report.skipped == ["short"]
    assert [u.id for u in report.utterances] == ["good"]
    (g,) = report.groups
    assert np.isfinite(g.lsd)
    assert "Skipping 'short'" in caplog.text



def test_small_length_difference_is_trimmed(tiny_stft):
    pair = _pair("a", 0)
    trimmed = EvalPair("a", Waveform(pair.estimate.samples[:-5]), pair.clean)
    report = evaluate_corpus([trimmed], tiny_stft)
    assert report.skipped == []
    assert np.isfinite(report.utterances[0].si_sdr)


def test_evaluate_nothing(tiny_stft):
    with pytest.raises(ValueError):
        evaluate_corpus([], tiny_stft)


def test_report_outputs(tmp_path, tiny_stft):
    report = evaluate_corpus([_pair("a", 0), _pair("b", 1, noise="car_like")], tiny_stft)
    report.write_csv(tmp_path / "scores.csv")
    with open(tmp_path / "scores.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == CSV_COLUMNS
    assert [r["row"] for r in rows] == ["utterance", "utterance", "mean", "mean"]
    assert all(r["pesq"] == "" and r["stoi"] == "" for r in rows)

    report.write_table(tmp_path / "scores.txt")
    text = (tmp_path / "scores.txt").read_text()
    assert "SI-SDR" in text
    assert "car_like" in text


def test_pairs_from_manifest(tmp_path):
    clean = Waveform(_noise(1600, 0))
    save_wav(tmp_path / "clean.wav", clean)
    save_wav(tmp_path / "est.wav", Waveform(0.5 * clean.samples))
    rows = [
        {"id": "a", "estimate": "est.wav", "clean": "clean.wav", "snr_db": "5", "noise": "white"},
        {"id": "b", "estimate": "", "clean": "clean.wav"},
        {"id": "c", "estimate": "missing.wav", "clean": "clean.wav"},
    ]
    manifest = tmp_path / "estimates.tsv"
    write_manifest(manifest, rows, ["id", "estimate", "clean", "noisy", "snr_db", "noise"])
    pairs, skipped = pairs_from_manifest(manifest)
    assert skipped == 2
    (pair,) = pairs
    assert pair.id == "a"
    assert pair.snr_db == 5.0
    assert pair.noisy is None
    assert len(pair.estimate) == 1600
