import functools
import logging
import math
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any

import click
from rich.markup import escape

from .checkpoint import init_from_checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, default_config_path, load_config
from .constants import DEFAULT_SNRS_DB
from .data import NOISE_KINDS, load_corpus, make_noisy_set, synth_corpus
from .dirs import ensure_dir
from .enhance import GAIN_MODES
from .enhance.run import diagnostics_path, enhance_file, enhance_manifest, final_gain_range
from .init import init
from .metrics import evaluate_corpus, pairs_from_manifest
from .models import ModelKind, build_model
from .train import make_chunks, train
from .util import config_hash, console

logger = logging.getLogger(__name__)

docstring = """
avdkf trains audio-visual speech priors and enhances noisy speech with them.

\b
A typical run:
  avdkf synth --out corpus
  avdkf train --corpus corpus --out av_dkf.ckpt --kind AV_DKF
  avdkf mix --corpus corpus --out mixtures
  avdkf enhance --checkpoint av_dkf.ckpt --manifest mixtures/mixtures.tsv --out-dir enhanced
  avdkf eval --manifest enhanced/estimates.tsv --out report
"""


class CommandError(click.ClickException):
    def show(self, file=None) -> None:
        console.print(f"[red]Error: {escape(self.format_message())}[/red]")


def handle_errors(f: Callable) -> Callable:
    """Turns the errors a command can raise into exit code 1 with a message on stderr."""

    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except click.ClickException:
            raise
        except (ValueError, RuntimeError, OSError) as e:
            logger.debug("Command failed", exc_info=True)
            raise CommandError(str(e)) from e

    return wrapper


def config_options(f: Callable) -> Callable:
    f = click.option(
        "--config",
        "config_path",
        type=click.Path(exists=True, dir_okay=False, path_type=Path),
        default=None,
        help="TOML run config; defaults to the user config file if present.",
    )(f)
    f = click.option("--preset", default=None, help="Config preset: desk or paper (alias full).")(f)
    f = click.option(
        "--run-dir",
        default=None,
        help="Directory for default output locations.",
    )(f)
    f = click.option("--seed", type=int, default=None, help="Overrides the config seed.")(f)
    return f


def resolve_config(
    config_path: Path | None,
    preset: str | None,
    run_dir: str | None,
    seed: int | None,
    **overrides: Any,
) -> RunConfig:
    cfg = load_config(
        config_path or default_config_path(),
        preset,
        {"seed": seed, "paths.run_dir": run_dir, **overrides},
    )
    logger.info(f"Resolved config:\n{cfg.to_toml()}")
    return cfg


@click.group(help=docstring)
@click.option("-v", "--verbose", is_flag=True, help="Show verbose output.")
def main(verbose: bool):
    init(verbose)


@main.command()
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Corpus directory.")
@click.option("--num", type=int, default=None, help="Number of utterances.")
@click.option("--force", is_flag=True, help="Reuse a non-empty output directory.")
@config_options
@handle_errors
def synth(out, num, force, config_path, preset, run_dir, seed):
    """Synthesize an audio-visual corpus with train/valid/test splits."""
    cfg = resolve_config(
        config_path, preset, run_dir, seed, **{"corpus.num_utterances": num}
    )
    out = out or cfg.paths.resolved_run_dir() / "corpus"
    ensure_dir(out, force)
    cfg.write(out)
    manifest = synth_corpus(out, cfg.synth, cfg.corpus, cfg.stft, cfg.seed)
    console.log(f"Wrote {cfg.corpus.num_utterances} utterances, manifest at {manifest}")


@main.command("train")
@click.option(
    "--corpus",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Corpus directory written by `synth`.",
)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option(
    "--kind",
    type=click.Choice([k.value for k in ModelKind]),
    default=None,
    help="Model kind, overrides [model] kind.",
)
@click.option("--epochs", type=int, default=None, help="Maximum number of epochs.")
@click.option(
    "--init-from",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Checkpoint to copy matching tensors from, e.g. an audio-only model for an AV kind.",
)
@config_options
@handle_errors
def train_cmd(corpus, out, kind, epochs, init_from, config_path, preset, run_dir, seed):
    """Train a speech prior on a corpus."""
    overrides: dict[str, Any] = {"model.kind": kind, "train.max_epochs": epochs}
    if epochs:
        base = resolve_config(config_path, preset, run_dir, seed)
        overrides["train.patience"] = min(base.train.patience, epochs)
    cfg = resolve_config(config_path, preset, run_dir, seed, **overrides)
    model_cfg, train_cfg = cfg.model, cfg.train
    with_visual = model_cfg.kind.is_audio_visual

    train_utts = load_corpus(corpus, "train", cfg.stft, with_visual)
    valid_utts = load_corpus(corpus, "valid", cfg.stft, with_visual)
    if not train_utts or not valid_utts:
        raise ValueError(f"Corpus {corpus} needs nonempty train and valid splits")
    if with_visual:
        dims = {u.visual.shape[1] for u in train_utts + valid_utts}
        if dims != {model_cfg.visual_dim}:
            raise ValueError(
                f"{model_cfg.kind.value} expects visual_dim {model_cfg.visual_dim}, "
                f"corpus features have {sorted(dims)}"
            )

    model = build_model(model_cfg, seed=cfg.seed)
    if init_from:
        init_from_checkpoint(model, init_from)
    train_set = make_chunks(train_utts, cfg.stft, train_cfg.seq_len, with_visual)
    valid_set = make_chunks(valid_utts, cfg.stft, train_cfg.seq_len, with_visual)
    console.log(
        f"Training {model_cfg.kind.value} on {len(train_set)} sequences, "
        f"validating on {len(valid_set)}"
    )
    model, history = train(model, train_set, valid_set, train_cfg)

    out = out or cfg.paths.resolved_run_dir() / f"{model_cfg.kind.value.lower()}.ckpt"
    valid_loss = history.best_valid_loss
    save_checkpoint(
        model,
        out,
        meta={
            "epoch": history.best_epoch,
            "valid_loss": valid_loss if math.isfinite(valid_loss) else None,
            "config_hash": config_hash(cfg.to_dict()),
        },
    )
    history.write(out.with_suffix(".history.tsv"))
    cfg.write(out.parent, f"{out.stem}.config.toml")
    console.log(
        f"Saved {out} (best epoch {history.best_epoch} of {len(history)}"
        f"{', stopped early' if history.stopped_early else ''})"
    )


@main.command()
@click.option(
    "--corpus",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Corpus directory written by `synth`.",
)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--snr", "snrs", type=float, multiple=True, help="Input SNR in dB, repeatable.")
@click.option(
    "--noise",
    "noises",
    type=click.Choice(list(NOISE_KINDS)),
    multiple=True,
    help="Noise kind, repeatable.",
)
@click.option("--split", default="test", show_default=True)
@click.option("--force", is_flag=True, help="Reuse a non-empty output directory.")
@config_options
@handle_errors
def mix(corpus, out, snrs, noises, split, force, config_path, preset, run_dir, seed):
    """Mix a corpus split with synthetic noises over an SNR grid."""
    cfg = resolve_config(config_path, preset, run_dir, seed)
    out = out or cfg.paths.resolved_run_dir() / "mixtures"
    ensure_dir(out, force)
    cfg.write(out)
    manifest = make_noisy_set(
        corpus,
        out,
        list(snrs) or list(DEFAULT_SNRS_DB),
        list(noises) or list(NOISE_KINDS),
        cfg.seed,
        split,
    )
    console.log(f"Mixtures manifest at {manifest}")


@main.command("enhance")
@click.argument("files", nargs=-1, type=click.Path(path_type=Path))
@click.option(
    "--checkpoint",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
)
@click.option(
    "--features",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Visual features of the input, required by AV kinds.",
)
@click.option(
    "--manifest",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Mixtures manifest; enhances every row.",
)
@click.option("--out-dir", type=click.Path(path_type=Path), default=None)
@click.option("--jobs", "-j", type=int, default=1, show_default=True)
@click.option("--gain-mode", type=click.Choice(list(GAIN_MODES)), default=None)
@click.option("--em-iters", type=int, default=None)
@config_options
@handle_errors
def enhance_cmd(
    files,
    checkpoint,
    features,
    manifest,
    out_dir,
    jobs,
    gain_mode,
    em_iters,
    config_path,
    preset,
    run_dir,
    seed,
):
    """
    Enhance IN.wav into OUT.wav, or every mixture of --manifest into --out-dir.
    """
    cfg = resolve_config(
        config_path,
        preset,
        run_dir,
        seed,
        **{"enhance.gain_mode": gain_mode, "enhance.em_iters": em_iters},
    )
    enhance_cfg = cfg.enhance

    if manifest:
        if files:
            raise click.UsageError("Pass either IN.wav OUT.wav or --manifest, not both")
        kind = load_checkpoint(checkpoint).kind
        out_dir = out_dir or (
            cfg.paths.resolved_run_dir()
            / f"enhanced-{kind.value.lower()}-{enhance_cfg.gain_mode}"
        )
        cfg.write(out_dir)
        estimates = enhance_manifest(
            checkpoint, manifest, out_dir, enhance_cfg, cfg.stft, jobs
        )
        console.log(f"Estimates manifest at {estimates}")
        return

    if len(files) != 2:
        raise click.UsageError("Expected IN.wav OUT.wav (or --manifest)")
    in_wav, out_wav = files
    model = load_checkpoint(checkpoint)
    if model.kind.is_audio_visual and features is None:
        raise ValueError(
            f"{model.kind.value} requires visual features, pass --features"
        )
    result = enhance_file(model, in_wav, out_wav, features, enhance_cfg, cfg.stft)
    cfg.write(out_wav.parent, f"{out_wav.stem}.config.toml")
    g_min, g_max = final_gain_range(result)
    console.log(
        f"Wrote {out_wav}, diagnostics in {diagnostics_path(out_wav)}, "
        f"final gains in [{g_min:.3g}, {g_max:.3g}]"
    )


@main.command("eval")
@click.option(
    "--manifest",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help="Estimates manifest (id, estimate, clean, ...).",
)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@config_options
@handle_errors
def eval_cmd(manifest, out, config_path, preset, run_dir, seed):
    """Score estimates against their clean references."""
    cfg = resolve_config(config_path, preset, run_dir, seed)
    pairs, malformed = pairs_from_manifest(manifest)
    if not pairs:
        raise ValueError(f"Manifest {manifest} has no usable rows")
    report = evaluate_corpus(pairs, cfg.stft)
    out = out or cfg.paths.resolved_run_dir() / "report"
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    report.write_csv(out / "report.csv")
    report.write_table(out / "report.txt")
    print(report.table())
    n_skipped = malformed + len(report.skipped)
    if n_skipped:
        console.log(f"[yellow]Skipped {n_skipped} rows[/yellow]")
    console.log(f"Report written to {out}")


if __name__ == "__main__":
    sys.exit(main())
