"""
End-to-end runs on the desk preset: a synthetic corpus, three trained priors and
enhancement of a noisy test set. Slow; run with `pytest -m slow`.
"""

import csv
import dataclasses

import numpy as np
import pytest

from avdkf.checkpoint import save_checkpoint
from avdkf.config import load_config
from avdkf.constants import GAIN_MAX, GAIN_MIN
from avdkf.data import CorpusConfig, load_corpus, make_noisy_set, synth_corpus
from avdkf.enhance import enhance_manifest
from avdkf.enhance.run import diagnostics_path
from avdkf.metrics import evaluate_corpus, pairs_from_manifest
from avdkf.models import ModelKind, build_model
from avdkf.train import Chunks, make_chunks, train

pytestmark = pytest.mark.slow

KINDS = [ModelKind.A_DKF, ModelKind.AV_DKF, ModelKind.AV_VAE]


@pytest.fixture(scope="module")
def desk():
    return load_config(preset="desk", overrides={"synth.visual_snr": 30.0}, environ={})


@pytest.fixture(scope="module")
def corpus(desk, tmp_path_factory):
    # 30 train, 10 valid, 20 test
    corpus_cfg = CorpusConfig(num_utterances=60, valid_fraction=1 / 6, test_fraction=1 / 3)
    out = tmp_path_factory.mktemp("corpus")
    synth_corpus(out, desk.synth, corpus_cfg, desk.stft, seed=desk.seed)
    return out


@pytest.fixture(scope="module")
def mixtures(desk, corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("mixtures")
    return make_noisy_set(corpus, out, [-5.0, 0.0], ["white"], seed=desk.seed)


def _train(desk, corpus, kind):
    model_cfg = dataclasses.replace(desk.model, kind=kind)
    with_visual = kind.is_audio_visual
    sets = [
        make_chunks(load_corpus(corpus, split, desk.stft, with_visual), desk.stft,
                    desk.train.seq_len, with_visual)
        for split in ("train", "valid")
    ]
    return train(build_model(model_cfg, seed=desk.seed), *sets, desk.train)


@pytest.fixture(scope="module")
def trained(desk, corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("checkpoints")
    result = {}
    for kind in KINDS:
        model, history = _train(desk, corpus, kind)
        path = out / f"{kind.value.lower()}.ckpt"
        save_checkpoint(model, path, meta={"epoch": history.best_epoch})
        result[kind] = (path, history)
    return result


@pytest.fixture(scope="module")
def reports(desk, mixtures, trained, tmp_path_factory):
    result = {}
    for kind, (ckpt, _) in trained.items():
        out = tmp_path_factory.mktemp(f"enhanced-{kind.value.lower()}")
        estimates = enhance_manifest(ckpt, mixtures, out, desk.enhance, desk.stft, jobs=4)
        pairs, skipped = pairs_from_manifest(estimates)
        assert skipped == 0
        result[kind] = (evaluate_corpus(pairs, desk.stft), out)
    return result


def _medians(report, snr):
    scores = [u for u in report.utterances if u.group[0] == snr]
    assert len(scores) == 20
    return (
        float(np.median([u.si_sdr for u in scores])),
        float(np.median([u.input_si_sdr for u in scores])),
    )


def test_training_improves_validation_elbo(trained):
    _, history = trained[ModelKind.AV_DKF]
    assert len(history) >= 2
    assert history.records[-1].valid_elbo > history.records[0].valid_elbo


def test_early_stopping_on_repeated_utterance(desk, corpus):
    utt = load_corpus(corpus, "train", desk.stft)[0]
    chunks = make_chunks([utt], desk.stft, desk.train.seq_len, with_visual=True)
    repeated = Chunks(chunks.power[:1].repeat(16, 1, 1), chunks.visual[:1].repeat(16, 1, 1))
    cfg = dataclasses.replace(desk.train, patience=2)
    _, history = train(build_model(desk.model, seed=desk.seed), repeated, repeated, cfg)
    assert len(history) <= history.best_epoch + 2
    if len(history) < cfg.max_epochs:
        assert history.stopped_early


def test_enhancement_gain_at_0db(reports):
    report, _ = reports[ModelKind.AV_DKF]
    output, inp = _medians(report, 0.0)
    assert output >= inp + 3.0


def test_sequential_prior_beats_frame_independent(reports):
    dkf, _ = _medians(reports[ModelKind.AV_DKF][0], 0.0)
    vae, _ = _medians(reports[ModelKind.AV_VAE][0], 0.0)
    assert dkf >= vae


def test_visual_features_help_at_low_snr(reports):
    av, _ = _medians(reports[ModelKind.AV_DKF][0], -5.0)
    a, _ = _medians(reports[ModelKind.A_DKF][0], -5.0)
    assert av >= a


def test_gains_stay_in_range(desk, reports):
    for _, out in reports.values():
        wavs = sorted((out / "enhanced").glob("*.wav"))
        assert len(wavs) == 40
        for wav in wavs:
            with open(diagnostics_path(wav), newline="") as f:
                rows = list(csv.DictReader(f))
            assert len(rows) == desk.enhance.em_iters
            last = rows[-1]
            assert float(last["min_gain"]) >= GAIN_MIN
            assert float(last["max_gain"]) <= GAIN_MAX


def test_multiplicative_trace_recorded(desk, mixtures, trained, tmp_path):
    ckpt, _ = trained[ModelKind.AV_DKF]
    cfg = dataclasses.replace(desk.enhance, gain_mode="multiplicative", em_iters=10)
    estimates = enhance_manifest(ckpt, mixtures, tmp_path, cfg, desk.stft, jobs=4)
    pairs, _ = pairs_from_manifest(estimates)
    assert {p.gain_mode for p in pairs} == {"multiplicative"}
    for wav in (tmp_path / "enhanced").glob("*.wav"):
        with open(diagnostics_path(wav), newline="") as f:
            assert len(list(csv.DictReader(f))) == 10
