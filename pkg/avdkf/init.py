import logging
import os

import torch
from dotenv import load_dotenv

logger = logging.getLogger(__name__)
_init_done = False


def init(verbose: bool = False) -> None:
    """Loads `.env`, configures logging and the torch runtime. Safe to call twice."""
    global _init_done
    init_logging(verbose)
    if _init_done:
        logger.debug("init() called twice, ignoring")
        return
    _init_done = True

    load_dotenv()
    if threads := os.environ.get("AVDKF_NUM_THREADS"):
        torch.set_num_threads(int(threads))
        logger.debug(f"Using {threads} torch threads")


def init_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(levelname)s - %(name)s - %(message)s",
    )
    # numba/matplotlib pulled in by some audio stacks are chatty
    logging.getLogger("numba").setLevel(logging.WARNING)
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
