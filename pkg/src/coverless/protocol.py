"""Sender/receiver workflow: hide a registered secret as its paired cover, reveal it back."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .adversarial import TrainingConfig, TrainingReport, train_pair
from .errors import ShapeMismatch
from .imaging import ImageBuffer, psnr
from .modeldb import GeneratorModel, ModelDatabase, ModelDbEntry


@dataclass
class HideResult:
    cover: ImageBuffer
    entry_id: str
    match_distance: int
    digest_match: bool
    # PSNR against the entry's registered output: inf when the digests agree,
    # NaN when a near-duplicate key produced a different (uncheckable) cover.
    fidelity: float


@dataclass
class RevealResult:
    reconstruction: ImageBuffer
    entry_id: str
    match_distance: int


@dataclass
class PairResult:
    forward: ModelDbEntry
    reverse: ModelDbEntry
    forward_report: TrainingReport
    reverse_report: TrainingReport
    cover: ImageBuffer

    @property
    def converged(self) -> bool:
        return self.forward_report.converged and self.reverse_report.converged


def _apply(entry: ModelDbEntry, img: ImageBuffer) -> ImageBuffer:
    if img.shape != (entry.input_height, entry.input_width):
        raise ShapeMismatch(
            f"entry {entry.entry_id!r} expects {entry.input_height}x{entry.input_width}, "
            f"image is {img.shape[0]}x{img.shape[1]}")
    return entry.generator.generate(img)


def hide(db: ModelDatabase, secret: ImageBuffer) -> HideResult:
    """Emit the cover the matched generator produces for ``secret``."""
    entry, dist = db.lookup(secret)
    cover = _apply(entry, secret)
    match = cover.digest() == entry.target_digest
    return HideResult(cover, entry.entry_id, dist, match, math.inf if match else math.nan)


def reveal(db: ModelDatabase, cover: ImageBuffer) -> RevealResult:
    """Feed a received cover through the receiver's database."""
    entry, dist = db.lookup(cover)
    return RevealResult(_apply(entry, cover), entry.entry_id, dist)


def build_pair(secret: ImageBuffer, cover_target: ImageBuffer, cfg: TrainingConfig,
               sender_db: ModelDatabase, receiver_db: ModelDatabase,
               entry_id: str, progress=None) -> PairResult:
    """Train both directions and register them.

    The reverse generator is trained on, and keyed by, the cover the forward
    generator actually emits, since that is all the receiver ever sees.
    """
    if secret.shape != cover_target.shape:
        raise ShapeMismatch(f"secret {secret.shape} vs cover target {cover_target.shape}")
    g_fwd, rep_fwd = train_pair(secret, cover_target, cfg, progress=progress)
    fwd_model = GeneratorModel.from_network(g_fwd, cfg.seed)
    cover = fwd_model.generate(secret)
    g_rev, rep_rev = train_pair(cover, secret, cfg, progress=progress)
    rev_model = GeneratorModel.from_network(g_rev, cfg.seed)
    fwd_entry = sender_db.register(secret, fwd_model, entry_id)
    rev_entry = receiver_db.register(cover, rev_model, entry_id)
    return PairResult(fwd_entry, rev_entry, rep_fwd, rep_rev, cover)


def round_trip_psnr(sender_db: ModelDatabase, receiver_db: ModelDatabase,
                    secret: ImageBuffer) -> float:
    return psnr(reveal(receiver_db, hide(sender_db, secret).cover).reconstruction, secret)
