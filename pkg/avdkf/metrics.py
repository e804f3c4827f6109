"""
Objective quality measures and corpus-level reports.

Utterance scores are grouped by (SNR, noise kind, model kind, gain mode); aggregates are
plain means over each group. PESQ and STOI are not computed, their CSV columns are left
empty so externally computed values can be merged in.
"""

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from tabulate import tabulate

from .constants import LSD_EPS, SI_SDR_EPS
from .data import load_wav, read_manifest, resolve_path
from .signal import StftConfig, Waveform, power, stft

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "row", "id", "snr_db", "noise", "model", "gain_mode", "n",
    "si_sdr", "input_si_sdr", "si_sdr_improvement", "lsd", "pesq", "stoi",
]


def _samples(w: Waveform | np.ndarray) -> np.ndarray:
    return w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)


def si_sdr(est: Waveform | np.ndarray, ref: Waveform | np.ndarray) -> float:
    """
    Scale-invariant SDR in dB.

    alpha = <est, ref> / ||ref||^2, SI-SDR = 10 log10(||alpha ref||^2 / (||est - alpha ref||^2 + eps))
    """
    est, ref = _samples(est), _samples(ref)
    if est.shape != ref.shape:
        raise ValueError(f"Length mismatch: estimate {est.shape}, reference {ref.shape}")
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0:
        raise ValueError("Reference signal is all zeros")
    alpha = np.dot(est, ref) / ref_energy
    target = alpha * ref
    error = est - target
    return float(10 * np.log10(np.dot(target, target) / (np.dot(error, error) + SI_SDR_EPS)))


def log_spectral_distance(
    est: Waveform | np.ndarray, ref: Waveform | np.ndarray, stft_config: StftConfig
) -> float:
    """RMS over bins and frames of the dB difference between the two power spectrograms."""
    est, ref = _samples(est), _samples(ref)
    if est.shape != ref.shape:
        raise ValueError(f"Length mismatch: estimate {est.shape}, reference {ref.shape}")
    rate = stft_config.sample_rate
    p_est = power(stft(Waveform(est, rate), stft_config))
    p_ref = power(stft(Waveform(ref, rate), stft_config))
    diff = 10 * np.log10(p_est + LSD_EPS) - 10 * np.log10(p_ref + LSD_EPS)
    return float(np.sqrt(np.mean(diff**2)))


@dataclass(frozen=True)
class EvalPair:
    id: str
    estimate: Waveform
    clean: Waveform
    noisy: Waveform | None = None
    snr_db: float | None = None
    noise: str = ""
    model: str = ""
    gain_mode: str = ""

    @property
    def group(self) -> tuple:
        return (
            math.inf if self.snr_db is None else self.snr_db,
            self.noise,
            self.model,
            self.gain_mode,
        )


@dataclass(frozen=True)
class UtteranceScore:
    id: str
    group: tuple
    si_sdr: float
    lsd: float
    input_si_sdr: float | None = None

    @property
    def improvement(self) -> float | None:
        if self.input_si_sdr is None:
            return None
        return self.si_sdr - self.input_si_sdr


@dataclass(frozen=True)
class GroupScore:
    group: tuple
    n: int
    si_sdr: float
    lsd: float
    input_si_sdr: float | None
    improvement: float | None


@dataclass
class EvalReport:
    utterances: list[UtteranceScore] = field(default_factory=list)
    groups: list[GroupScore] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def to_rows(self) -> list[dict]:
        rows = []
        for u in self.utterances:
            rows.append(
                _row("utterance", u.id, u.group, 1, u.si_sdr, u.input_si_sdr, u.improvement, u.lsd)
            )
        for g in self.groups:
            rows.append(
                _row("mean", "", g.group, g.n, g.si_sdr, g.input_si_sdr, g.improvement, g.lsd)
            )
        return rows

    def write_csv(self, path: Path | str) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(self.to_rows())

    def table(self) -> str:
        data = []
        for g in self.groups:
            snr, noise, model, gain_mode = g.group
            data.append(
                [
                    "" if snr == math.inf else f"{snr:g}",
                    noise,
                    model,
                    gain_mode,
                    g.n,
                    g.si_sdr,
                    g.input_si_sdr,
                    g.improvement,
                    g.lsd,
                ]
            )
        headers = [
            "SNR (dB)", "noise", "model", "gain mode", "n",
            "SI-SDR", "input SI-SDR", "improvement", "LSD",
        ]
        return tabulate(data, headers=headers, floatfmt=".2f", missingval="-")

    def write_table(self, path: Path | str) -> None:
        text = self.table()
        if self.skipped:
            text += f"\n\nskipped {len(self.skipped)} pairs: {', '.join(self.skipped)}"
        Path(path).write_text(text + "\n")


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def _row(kind, utt_id, group, n, si, input_si, improvement, lsd) -> dict:
    snr, noise, model, gain_mode = group
    return {
        "row": kind,
        "id": utt_id,
        "snr_db": "" if snr == math.inf else f"{snr:g}",
        "noise": noise,
        "model": model,
        "gain_mode": gain_mode,
        "n": n,
        "si_sdr": _fmt(si),
        "input_si_sdr": _fmt(input_si),
        "si_sdr_improvement": _fmt(improvement),
        "lsd": _fmt(lsd),
        "pesq": "",
        "stoi": "",
    }


def _aligned(
    est: np.ndarray, ref: np.ndarray, stft_config: StftConfig
) -> tuple[np.ndarray, np.ndarray] | None:
    """Common STFT-covered length of a pair, or None if they differ by a frame or more."""
    if abs(len(est) - len(ref)) >= stft_config.frame_len:
        return None
    n = min(len(est), len(ref))
    if n >= stft_config.frame_len:
        n = stft_config.n_samples(stft_config.n_frames(n))
    return est[:n], ref[:n]


def _mean(values: list[float | None]) -> float | None:
    if any(v is None for v in values):
        return None
    return float(np.mean(values))


def evaluate_corpus(pairs: list[EvalPair], stft_config: StftConfig) -> EvalReport:
    if not pairs:
        raise ValueError("Nothing to evaluate")
    report = EvalReport()
    for pair in sorted(pairs, key=lambda p: (p.group, p.id)):
        aligned = _aligned(pair.estimate.samples, pair.clean.samples, stft_config)
        if aligned is None:
            logger.warning(
                f"Skipping '{pair.id}': estimate has {len(pair.estimate)} samples, "
                f"reference {len(pair.clean)}"
            )
            report.skipped.append(pair.id)
            continue
        est, ref = aligned
        if len(ref) < stft_config.frame_len:
            logger.warning(
                f"Skipping '{pair.id}': {len(ref)} samples, shorter than one "
                f"{stft_config.frame_len}-sample frame"
            )
            report.skipped.append(pair.id)
            continue
        input_score = None
        if pair.noisy is not None:
            noisy_aligned = _aligned(pair.noisy.samples, pair.clean.samples, stft_config)
            if noisy_aligned is not None:
                input_score = si_sdr(*noisy_aligned)
        lsd = log_spectral_distance(est, ref, stft_config)
        report.utterances.append(
            UtteranceScore(pair.id, pair.group, si_sdr(est, ref), lsd, input_score)
        )

    by_group: dict[tuple, list[UtteranceScore]] = defaultdict(list)
    for u in report.utterances:
        by_group[u.group].append(u)
    for group in sorted(by_group):
        scores = by_group[group]
        report.groups.append(
            GroupScore(
                group=group,
                n=len(scores),
                si_sdr=float(np.mean([u.si_sdr for u in scores])),
                lsd=float(np.mean([u.lsd for u in scores])),
                input_si_sdr=_mean([u.input_si_sdr for u in scores]),
                improvement=_mean([u.improvement for u in scores]),
            )
        )
    if report.skipped:
        logger.warning(f"Skipped {len(report.skipped)} of {len(pairs)} pairs")
    return report


def pairs_from_manifest(manifest: Path) -> tuple[list[EvalPair], int]:
    """
    Loads the pairs of an estimates manifest (id, estimate, clean, optional noisy, snr_db,
    noise, model, gain_mode). Malformed rows are skipped and counted.
    """
    rows, skipped = read_manifest(manifest, ["id", "estimate", "clean"], strict=False)
    pairs = []
    for row in rows:
        try:
            snr = float(row["snr_db"]) if row.get("snr_db") else None
            noisy = load_wav(resolve_path(manifest, row["noisy"])) if row.get("noisy") else None
            pairs.append(
                EvalPair(
                    id=row["id"],
                    estimate=load_wav(resolve_path(manifest, row["estimate"])),
                    clean=load_wav(resolve_path(manifest, row["clean"])),
                    noisy=noisy,
                    snr_db=snr,
                    noise=row.get("noise") or "",
                    model=row.get("model") or "",
                    gain_mode=row.get("gain_mode") or "",
                )
            )
        except (ValueError, OSError) as e:
            logger.warning(f"Skipping row '{row['id']}': {e}")
            skipped += 1
    return pairs, skipped
