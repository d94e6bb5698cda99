"""Command-line front end.

stdout carries only machine-readable key=value lines or TSV; diagnostics go
to stderr. Exit codes: 0 ok, 1 error, 2 trained but unconverged, 3 no match.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .adversarial import TrainingConfig
from .errors import CoverlessError, NoMatchingModel, TooSmall
from .imaging import load_pgm, psnr, save_pgm, ssim
from .modeldb import ModelDatabase
from .protocol import build_pair, hide, reveal
from .stegbench import bench_contrast

EXIT_OK, EXIT_ERROR, EXIT_UNCONVERGED, EXIT_NO_MATCH = 0, 1, 2, 3

log = logging.getLogger("coverless")

# flag name -> TrainingConfig field
TRAINING_FLAGS = {
    "seed": "seed", "iterations": "iterations", "n_critic": "n_critic", "clip": "clip_c",
    "lr_d": "lr_d", "lr_g": "lr_g", "batch": "batch", "jitter": "jitter_sigma",
    "target_psnr": "target_psnr", "loss_mode": "loss_mode",
}


class UsageError(CoverlessError):
    pass


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "inf" if v == math.inf else repr(v)
    return str(v)


def _emit(**pairs) -> None:
    print(" ".join(f"{k}={_fmt(v)}" for k, v in pairs.items()))


def _require_files(*paths) -> None:
    for p in paths:
        if p is None:
            continue
        if not Path(p).is_file():
            raise UsageError(f"no such file: {p}")


def _require(args, *names) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command} needs {', '.join(missing)}")


def training_config(args) -> TrainingConfig:
    """Config file first, then explicit flags on top."""
    data = {}
    if args.config is not None:
        _require_files(args.config)
        try:
            data = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
    cfg = TrainingConfig.from_dict(data)
    overrides = {field: getattr(args, flag) for flag, field in TRAINING_FLAGS.items()}
    return cfg.replace(**overrides)


def _pair_progress():
    """Debug logger for both training runs; a restart at iteration 1 marks the reverse run."""
    state = {"runs": 0}

    def report(row):
        if row.iteration == 1:
            state["runs"] += 1
        label = "forward" if state["runs"] <= 1 else "reverse"
        log.debug("%s iter=%d critic=%.6g gen=%.6g w=%.6g psnr=%.3f", label, row.iteration,
                  row.critic_loss, row.gen_loss, row.w_estimate, row.psnr)
    return report


def cmd_train_pair(args) -> int:
    _require(args, "secret", "cover_target", "db", "recv_db")
    _require_files(args.secret, args.cover_target)
    cfg = training_config(args)
    secret, target = load_pgm(args.secret), load_pgm(args.cover_target)
    entry_id = args.entry_id or Path(args.secret).stem
    sender, receiver = ModelDatabase(args.db), ModelDatabase(args.recv_db)
    res = build_pair(secret, target, cfg, sender, receiver, entry_id, progress=_pair_progress())
    if args.out:
        save_pgm(res.cover, args.out)
    recon = reveal(receiver, res.cover).reconstruction
    _emit(entry_id=entry_id,
          forward_psnr=res.forward_report.final_psnr,
          forward_converged=res.forward_report.converged,
          forward_iterations=res.forward_report.iterations_run,
          reverse_psnr=res.reverse_report.final_psnr,
          reverse_converged=res.reverse_report.converged,
          reverse_iterations=res.reverse_report.iterations_run,
          round_trip_psnr=psnr(recon, secret))
    if args.log_dir:
        d = Path(args.log_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{entry_id}.forward.log").write_text(res.forward_report.to_text())
        (d / f"{entry_id}.reverse.log").write_text(res.reverse_report.to_text())
    if not res.converged:
        log.warning("warning: pair %r registered but did not reach %.1f dB in %d iterations",
                    entry_id, cfg.target_psnr, cfg.iterations)
        return EXIT_UNCONVERGED
    return EXIT_OK


def cmd_hide(args) -> int:
    _require(args, "db", "in_path", "out")
    _require_files(args.in_path)
    result = hide(ModelDatabase(args.db), load_pgm(args.in_path))
    save_pgm(result.cover, args.out)
    _emit(entry_id=result.entry_id, match_distance=result.match_distance,
          digest_match=result.digest_match, cover_sha256=result.cover.digest())
    if not result.digest_match:
        log.warning("warning: secret matched %r at distance %d; cover differs from the "
                    "registered output", result.entry_id, result.match_distance)
    return EXIT_OK


def cmd_reveal(args) -> int:
    _require(args, "db", "in_path", "out")
    _require_files(args.in_path, args.secret)
    result = reveal(ModelDatabase(args.db), load_pgm(args.in_path))
    save_pgm(result.reconstruction, args.out)
    fields = dict(entry_id=result.entry_id, match_distance=result.match_distance)
    if args.secret:
        fields["psnr"] = psnr(result.reconstruction, load_pgm(args.secret))
    _emit(**fields)
    return EXIT_OK


def cmd_eval(args) -> int:
    _require_files(*args.images)
    a, b = (load_pgm(p) for p in args.images)
    try:
        s = ssim(a, b)
    except TooSmall as exc:
        log.warning("warning: %s", exc)
        s = math.nan
    _emit(psnr=psnr(a, b), ssim=s)
    return EXIT_OK


def _bench_pairs(listing: Path):
    """Read ``image_id<TAB>secret.pgm<TAB>natural.pgm`` lines; paths are relative to the listing."""
    pairs = []
    for n, line in enumerate(listing.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise UsageError(f"{listing}:{n}: expected image_id, secret path, natural path")
        image_id, s, nat = parts
        s, nat = listing.parent / s, listing.parent / nat
        _require_files(s, nat)
        pairs.append((image_id, load_pgm(s), load_pgm(nat)))
    return pairs


def cmd_stegbench(args) -> int:
    _require(args, "db", "in_path")
    _require_files(args.in_path)
    pairs = _bench_pairs(Path(args.in_path))
    summary = bench_contrast(ModelDatabase(args.db), pairs, trials=args.trials,
                             seed=args.seed if args.seed is not None else 0)
    text = summary.to_tsv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    for key, rate in summary.rates().items():
        log.info("%s=%s", key, _fmt(rate))
    return EXIT_OK


def cmd_db_list(args) -> int:
    _require(args, "db")
    if not Path(args.db).is_dir():
        raise UsageError(f"no such database directory: {args.db}")
    log.debug("entry_id\tkey_fingerprint\ttarget_digest\tinput_width\tinput_height\tcreated_at")
    for e in ModelDatabase(args.db).entries():
        print(f"{e.entry_id}\t{e.key_fingerprint.hex()}\t{e.target_digest}\t"
              f"{e.input_width}\t{e.input_height}\t{e.created_at}")
    return EXIT_OK


COMMANDS = {
    "train-pair": cmd_train_pair, "hide": cmd_hide, "reveal": cmd_reveal, "eval": cmd_eval,
    "stegbench": cmd_stegbench, "db-list": cmd_db_list,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--db", help="sender database directory (receiver for reveal)")
    common.add_argument("--recv-db", help="receiver database directory")
    common.add_argument("--secret", help="secret image (PGM)")
    common.add_argument("--cover-target", help="natural image the cover should imitate (PGM)")
    common.add_argument("--in", dest="in_path", help="input file")
    common.add_argument("--out", help="output file")
    common.add_argument("--seed", type=int)
    common.add_argument("--config", help="JSON training config; explicit flags override it")
    common.add_argument("--verbose", "-v", action="store_true")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--iterations", type=int)
    training.add_argument("--n-critic", type=int)
    training.add_argument("--clip", type=float)
    training.add_argument("--lr-d", type=float)
    training.add_argument("--lr-g", type=float)
    training.add_argument("--batch", type=int)
    training.add_argument("--jitter", type=float)
    training.add_argument("--target-psnr", type=float)
    training.add_argument("--loss-mode", choices=("WGAN", "GAN_LOG"))
    training.add_argument("--entry-id", help="database entry id (default: secret file stem)")
    training.add_argument("--log-dir", help="write per-direction training logs here")

    parser = argparse.ArgumentParser(prog="coverless",
                                     description="Coverless image steganography via paired generators.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train-pair", parents=[common, training],
                   help="train and register a forward/reverse generator pair")
    sub.add_parser("hide", parents=[common], help="emit the cover for a registered secret")
    sub.add_parser("reveal", parents=[common], help="reconstruct the secret from a cover")
    ev = sub.add_parser("eval", parents=[common], help="PSNR and SSIM between two images")
    ev.add_argument("images", nargs=2, metavar="IMAGE")
    sb = sub.add_parser("stegbench", parents=[common],
                        help="chi-square/monobit contrast of covers, LSB stego and naturals")
    sb.add_argument("--trials", type=int, default=1)
    sub.add_parser("db-list", parents=[common], help="print the database manifest as TSV")
    for p in sub.choices.values():
        p.set_defaults(**{k: None for k in TRAINING_FLAGS if k != "seed"},
                       entry_id=None, log_dir=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(message)s", force=True,
                        level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        return COMMANDS[args.command](args)
    except NoMatchingModel as exc:
        log.error("error: no matching model: %s", exc)
        return EXIT_NO_MATCH
    except (CoverlessError, OSError, ValueError) as exc:
        log.error("error: %s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
