"""
File-level enhancement: one noisy WAV, or every row of a mixtures manifest in parallel.

Workers each load the checkpoint once and share nothing mutable; every file's EM runs
sequentially inside its worker.
"""

import logging
import multiprocessing
from concurrent.futures import Future, ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import TypedDict

import multiprocessing_logging
import numpy as np
import torch
from tqdm import tqdm

from ..checkpoint import load_checkpoint
from ..data import (
    load_aligned_features,
    load_wav,
    read_manifest,
    resolve_path,
    save_wav,
    write_manifest,
)
from ..models import GenerativeModel
from ..signal import StftConfig
from ..util import progress_disabled
from .em import enhance
from .types import EnhanceConfig, EnhanceResult

logger = logging.getLogger(__name__)

ESTIMATES_MANIFEST = "estimates.tsv"
ESTIMATE_COLUMNS = [
    "id", "clean", "noisy", "estimate", "noise", "snr_db", "model", "gain_mode",
]


def diagnostics_path(out_wav: Path) -> Path:
    return out_wav.with_suffix(".diagnostics.csv")


def enhance_file(
    model: GenerativeModel,
    in_wav: Path,
    out_wav: Path,
    features: Path | None,
    cfg: EnhanceConfig,
    stft_config: StftConfig,
) -> EnhanceResult:
    """Enhances `in_wav` into `out_wav` and writes the diagnostics trace next to it."""
    noisy = load_wav(in_wav)
    if noisy.sample_rate != stft_config.sample_rate:
        raise ValueError(
            f"{in_wav}: sample rate {noisy.sample_rate} Hz, expected {stft_config.sample_rate} Hz"
        )
    visual = None
    if features is not None and not model.kind.is_audio_visual:
        logger.warning(f"{model.kind.value} is audio-only, ignoring visual features {features}")
    elif features is not None:
        n_frames = stft_config.n_frames(len(noisy))
        visual = load_aligned_features(features, stft_config, n_frames)
    result = enhance(noisy, visual, model, cfg, stft_config)
    save_wav(out_wav, result.clean)
    result.diagnostics.write_csv(diagnostics_path(out_wav))
    logger.info(f"Enhanced {in_wav} -> {out_wav}")
    return result


@dataclass(frozen=True)
class EnhanceJob:
    row: dict
    noisy: Path
    features: Path | None
    out_wav: Path


class JobResult(TypedDict):
    status: str
    row: dict
    message: str


@lru_cache(maxsize=4)
def _cached_model(checkpoint: str) -> GenerativeModel:
    return load_checkpoint(checkpoint)


def _worker_init(threads: int) -> None:
    torch.set_num_threads(threads)


def _run_job(
    checkpoint: str, job: EnhanceJob, cfg: EnhanceConfig, stft_config: StftConfig
) -> JobResult:
    model = _cached_model(checkpoint)
    features = job.features if model.kind.is_audio_visual else None
    enhance_file(model, job.noisy, job.out_wav, features, cfg, stft_config)
    row = {
        **job.row,
        "estimate": str(job.out_wav.resolve()),
        "noisy": str(job.noisy.resolve()),
        "model": model.kind.value,
        "gain_mode": cfg.gain_mode,
    }
    return {"status": "success", "row": row, "message": ""}


def enhance_manifest(
    checkpoint: Path,
    manifest: Path,
    out_dir: Path,
    cfg: EnhanceConfig,
    stft_config: StftConfig,
    jobs: int = 1,
) -> Path:
    """
    Enhances every mixture of `manifest` (id, clean, noisy, features, noise, snr_db) and
    writes `estimates.tsv` for evaluation. Failed files are logged and left out.
    """
    rows, _ = read_manifest(manifest, ["id", "noisy"])
    if not rows:
        raise ValueError(f"Manifest {manifest} is empty")
    work = []
    for row in rows:
        noisy = resolve_path(manifest, row["noisy"])
        features = resolve_path(manifest, row["features"]) if row.get("features") else None
        out_wav = out_dir / "enhanced" / f"{noisy.stem}.wav"
        work.append(EnhanceJob(row=row, noisy=noisy, features=features, out_wav=out_wav))

    jobs = max(1, min(jobs, len(work)))
    results: dict[int, JobResult] = {}
    if jobs == 1:
        bar = tqdm(work, unit="file", desc="enhance", disable=progress_disabled())
        for i, job in enumerate(bar):
            results[i] = _safe_run(str(checkpoint), job, cfg, stft_config)
    else:
        multiprocessing_logging.install_mp_handler()
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(
            jobs, mp_context=ctx, initializer=_worker_init, initargs=(1,)
        ) as executor:
            future_to_index: dict[Future, int] = {
                executor.submit(_run_job, str(checkpoint), job, cfg, stft_config): i
                for i, job in enumerate(work)
            }
            for future in tqdm(
                as_completed(future_to_index),
                total=len(work),
                unit="file",
                desc="enhance",
                disable=progress_disabled(),
            ):
                i = future_to_index[future]
                try:
                    results[i] = future.result()
                except Exception as e:
                    logger.exception(f"Enhancing {work[i].noisy} failed")
                    results[i] = {"status": "error", "row": work[i].row, "message": str(e)}

    ok = [results[i]["row"] for i in sorted(results) if results[i]["status"] == "success"]
    n_failed = len(work) - len(ok)
    if not ok:
        raise RuntimeError(f"All {len(work)} files failed to enhance")
    if n_failed:
        logger.warning(f"{n_failed} of {len(work)} files failed to enhance")
    out = out_dir / ESTIMATES_MANIFEST
    write_manifest(out, ok, ESTIMATE_COLUMNS)
    return out


def _safe_run(
    checkpoint: str, job: EnhanceJob, cfg: EnhanceConfig, stft_config: StftConfig
) -> JobResult:
    try:
        return _run_job(checkpoint, job, cfg, stft_config)
    except Exception as e:
        logger.exception(f"Enhancing {job.noisy} failed")
        return {"status": "error", "row": job.row, "message": str(e)}


def final_gain_range(result: EnhanceResult) -> tuple[float, float]:
    g = result.final_gains
    return float(np.min(g)), float(np.max(g))
