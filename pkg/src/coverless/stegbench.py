"""Classical LSB steganalysis: pairs-of-values chi-square and an LSB-plane monobit test.

Only these two attacks are implemented; a clean verdict here says nothing
about detectors outside this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import PayloadTooLarge, TooSmall
from .imaging import ImageBuffer
from .rng import LaneRng, derive_seed

CLEAN = "clean"
SUSPICIOUS = "suspicious"
CHI_SQUARE = "chi_square"
MONOBIT = "lsb_monobit"
CHI_THRESHOLD = 0.95
MONOBIT_THRESHOLD = 0.99
MIN_PIXELS = 64

BENCH_HEADER = (
    "# detectors: pairs-of-values chi-square, LSB-plane monobit; "
    "resistance is shown against these attacks only\n"
)


@dataclass
class AttackReport:
    attack: str
    statistic: float
    p_value: float
    verdict: str
    threshold: float
    rule: str = ""


# -- special functions ------------------------------------------------------------

_EPS = 1e-16
_TINY = 1e-300


def _gamma_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by its power series (x < a + 1)."""
    term = total = 1.0 / a
    ap = a
    for _ in range(10000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_frac(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by Lentz's continued fraction (x >= a + 1)."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammainc_lower(a: float, x: float) -> float:
    if a <= 0:
        raise ValueError("shape must be positive")
    if x <= 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cont_frac(a, x)


def gammainc_upper(a: float, x: float) -> float:
    if a <= 0:
        raise ValueError("shape must be positive")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cont_frac(a, x)


def chi2_cdf(x: float, df: float) -> float:
    return gammainc_lower(df / 2.0, x / 2.0)


def chi2_sf(x: float, df: float) -> float:
    """1 - CDF, computed directly to keep precision in the upper tail."""
    return gammainc_upper(df / 2.0, x / 2.0)


# -- embedding --------------------------------------------------------------------

def lsb_embed(carrier: ImageBuffer, payload: bytes, seed: int | None = None) -> ImageBuffer:
    """Sequential LSB replacement, MSB-first within each payload byte.

    ``seed`` is accepted for interface symmetry with randomized embedders; the
    sequential baseline does not use it.
    """
    bits = np.unpackbits(np.frombuffer(bytes(payload), dtype=np.uint8))
    flat = carrier.pixels.ravel().copy()
    if bits.size > flat.size:
        raise PayloadTooLarge(f"{bits.size} payload bits for {flat.size} pixels")
    flat[:bits.size] = (flat[:bits.size] & 0xFE) | bits
    return ImageBuffer(flat.reshape(carrier.shape))


def lsb_extract(img: ImageBuffer, n_bytes: int) -> bytes:
    bits = img.pixels.ravel()[:8 * n_bytes] & 1
    if bits.size < 8 * n_bytes:
        raise PayloadTooLarge(f"image holds fewer than {n_bytes} bytes")
    return np.packbits(bits).tobytes()


def random_payload(n_bytes: int, seed: int) -> bytes:
    return LaneRng(seed, lanes=64).bytes(n_bytes)


def full_capacity_stego(carrier: ImageBuffer, seed: int) -> ImageBuffer:
    """Carrier with every pixel LSB replaced by seeded random bits."""
    return lsb_embed(carrier, random_payload(carrier.pixels.size // 8, seed))


# -- attacks ----------------------------------------------------------------------

def _require_pixels(img: ImageBuffer) -> None:
    if img.pixels.size < MIN_PIXELS:
        raise TooSmall(f"steganalysis needs at least {MIN_PIXELS} pixels")


def chi_square_from_histogram(hist: Sequence[int]) -> tuple[float, int]:
    """Pairs-of-values statistic and its degrees of freedom from a 256-bin histogram."""
    h = np.asarray(hist, dtype=np.float64)
    even, odd = h[0::2], h[1::2]
    expected = (even + odd) / 2.0
    used = expected > 0
    stat = float(np.sum((even[used] - expected[used]) ** 2 / expected[used]))
    df = max(int(used.sum()) - 1, 1)
    return stat, df


def chi_square_attack(img: ImageBuffer) -> AttackReport:
    """High p-value means the pair histograms look equalized by LSB embedding."""
    _require_pixels(img)
    hist = np.bincount(img.pixels.ravel(), minlength=256)
    stat, df = chi_square_from_histogram(hist)
    p = min(max(chi2_sf(stat, df), 0.0), 1.0)
    verdict = SUSPICIOUS if p > CHI_THRESHOLD else CLEAN
    return AttackReport(CHI_SQUARE, stat, p, verdict, CHI_THRESHOLD,
                        f"suspicious iff p > {CHI_THRESHOLD} (df={df})")


def lsb_monobit_test(img: ImageBuffer, chi: AttackReport | None = None) -> AttackReport:
    """Balance of the LSB plane; flags only when also chi-square suspicious."""
    _require_pixels(img)
    lsb = img.pixels.ravel() & 1
    n = lsb.size
    z = (2.0 * int(lsb.sum()) - n) / math.sqrt(n)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    chi = chi or chi_square_attack(img)
    flagged = p > MONOBIT_THRESHOLD and chi.verdict == SUSPICIOUS
    return AttackReport(MONOBIT, z, p, SUSPICIOUS if flagged else CLEAN, MONOBIT_THRESHOLD,
                        f"suspicious iff p > {MONOBIT_THRESHOLD} and chi-square suspicious")


def analyze(img: ImageBuffer) -> list[AttackReport]:
    chi = chi_square_attack(img)
    return [chi, lsb_monobit_test(img, chi)]


# -- bench ------------------------------------------------------------------------

COVER = "cover"
LSB = "lsb"
NATURAL = "natural"


@dataclass
class BenchRow:
    image_id: str
    source: str
    report: AttackReport

    def tsv(self) -> str:
        r = self.report
        return f"{self.image_id}\t{self.source}\t{r.attack}\t{r.statistic!r}\t{r.p_value!r}\t{r.verdict}\n"


@dataclass
class BenchSummary:
    rows: list[BenchRow] = field(default_factory=list)

    def detection_rate(self, source: str, attack: str = CHI_SQUARE) -> float:
        hits = [r.report.verdict == SUSPICIOUS for r in self.rows
                if r.source == source and r.report.attack == attack]
        return float(np.mean(hits)) if hits else math.nan

    def count(self, source: str, attack: str = CHI_SQUARE) -> int:
        return sum(1 for r in self.rows if r.source == source and r.report.attack == attack)

    def to_tsv(self, header: bool = True) -> str:
        return (BENCH_HEADER if header else "") + "".join(r.tsv() for r in self.rows)

    def rates(self) -> dict[str, float]:
        return {f"{src}_{att}": self.detection_rate(src, att)
                for src in (COVER, LSB, NATURAL) for att in (CHI_SQUARE, MONOBIT)}


def bench_contrast(db, pairs: Iterable[tuple[str, ImageBuffer, ImageBuffer]],
                   trials: int = 1, seed: int = 0) -> BenchSummary:
    """Run both attacks on protocol covers, their full-capacity LSB stego, and natural images.

    ``pairs`` holds ``(image_id, secret, natural_reference)``; the cover is what
    the database emits for ``secret``. Rows are ordered by image id.
    """
    from .protocol import hide

    summary = BenchSummary()
    for index, (image_id, secret, natural) in enumerate(sorted(pairs, key=lambda p: p[0])):
        cover = hide(db, secret).cover
        for report in analyze(cover):
            summary.rows.append(BenchRow(image_id, COVER, report))
        for t in range(trials):
            stego = full_capacity_stego(cover, derive_seed(seed, index * trials + t))
            for report in analyze(stego):
                summary.rows.append(BenchRow(f"{image_id}#{t}", LSB, report))
        for report in analyze(natural):
            summary.rows.append(BenchRow(image_id, NATURAL, report))
    return summary
