"""Command-line harness: ``sbse <command> [options] [--section.key value ...]``.

Commands
    synth-data            write the manifest and the train/eval WAV tree
    train {score,score_masked,mask}
    enhance               enhance the eval split (or one ``--input`` file)
    eval                  SI-SDR report for one or more enhanced systems
    verify                run the property suite
    bench                 real-time factor per NFE setting

Exit codes: 0 success, 1 property failure, 2 usage error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .bridge import injected_fault
from .checkpoint import load_checkpoint, load_net, save_checkpoint
from .config import SNAPSHOT_NAME, RunConfig
from .corpus import (
    DatasetManifest,
    make_dataset,
    mix_at_snr,
    read_wav,
    render_record,
    synth_clean,
    synth_noise,
    write_wav,
)
from .errors import ConfigError, SBSEError, SetupError
from .metrics import aggregate, evaluate, merge_reports
from .model.train import make_pair, train_mask, train_score
from .pipeline import enhance_clip
from .plotting import plot_eval_report, plot_loss_curve, plot_rtf
from .schedule import inference_grid
from .seeding import derive_seed, make_rng
from .verify import format_results, run_suite

log = logging.getLogger("sbse")

MANIFEST_NAME = "manifest.jsonl"
SYSTEMS = {"sbse": "score", "sbse-m": "score_masked"}
FAULTS = ("posterior_sign",)


# --------------------------------------------------------------------------
# Run directory layout
# --------------------------------------------------------------------------


class RunDir:
    def __init__(self, root, config: RunConfig):
        self.root = Path(root)
        self.config = config

    @property
    def manifest(self):
        return self.root / MANIFEST_NAME

    @property
    def snapshot(self):
        return self.root / SNAPSHOT_NAME

    def checkpoint(self, which):
        return self.root / self.config.paths.checkpoints / f"{which}.ckpt"

    def loss_curve(self, which):
        return self.root / "reports" / f"loss_{which}.csv"

    def record_dir(self, record):
        if record.split == "train":
            return self.root / "data" / "train"
        return self.root / "data" / "eval" / f"snr_{record.snr_db:g}"

    def clip_path(self, record, role):
        return self.record_dir(record) / f"{record.id}_{role}.wav"

    def enhanced_path(self, system, record):
        return self.root / "enhanced" / system / f"snr_{record.snr_db:g}" / f"{record.id}.wav"

    def report(self, name):
        return self.root / "reports" / name

    def load_manifest(self):
        if not self.manifest.exists():
            raise SetupError(f"no manifest in {self.root}; run 'sbse synth-data' first")
        return DatasetManifest.load(self.manifest)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_synth_data(run: RunDir, args):
    cfg = run.config
    manifest = make_dataset(cfg.dataset_config())
    for rec in manifest.records:
        clean, _, noisy = render_record(rec, manifest.clip_duration_s)
        write_wav(clean, run.clip_path(rec, "clean"), "float32")
        write_wav(noisy, run.clip_path(rec, "noisy"), "float32")
    manifest.save(run.manifest)
    counts = manifest.counts
    log.info("wrote %d train and %d eval records to %s", counts["train"], counts["eval"], run.root / "data")
    print(f"manifest: {run.manifest}  train={counts['train']}  eval={counts['eval']}")
    return 0


def _load_pairs(run: RunDir, manifest, split):
    params = run.config.spectral_params()
    out = []
    for rec in manifest.split(split):
        clean = read_wav(run.clip_path(rec, "clean"))
        noisy = read_wav(run.clip_path(rec, "noisy"))
        out.append(make_pair(rec.id, clean, noisy, params))
    if not out:
        raise SetupError(f"manifest has no {split} records")
    return out


def _write_loss_curve(path, losses):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses, 1):
            w.writerow([i, repr(float(v))])


def cmd_train(run: RunDir, args):
    which = args.which
    cfg = run.config
    manifest = run.load_manifest()
    tcfg = cfg.train_config()
    ckpt = run.checkpoint(which)
    resume = None
    if ckpt.exists() and not args.force:
        resume = load_checkpoint(ckpt, expect_kind="mask" if which == "mask" else "score")
        if resume.step >= tcfg.steps:
            log.info("%s already trained to step %d", which, resume.step)
            print(f"{which}: checkpoint already at step {resume.step}; nothing to do")
            return 0
        log.info("resuming %s from step %d", which, resume.step)

    data = _load_pairs(run, manifest, "train")
    t0 = time.perf_counter()

    def on_step(state):
        if state.step % cfg.train.checkpoint_every == 0 or state.step == tcfg.steps:
            save_checkpoint(ckpt, state, tcfg)
            _write_loss_curve(run.loss_curve(which), state.losses)
            log.info("%s step %d loss %.5f (%.1fs)", which, state.step, state.losses[-1], time.perf_counter() - t0)

    if which == "mask":
        state = train_mask(data, tcfg, resume=resume, on_step=on_step)
    else:
        schedule = cfg.build_schedule()
        state = train_score(data, schedule, tcfg, use_mask=(which == "score_masked"), resume=resume, on_step=on_step)
    plot_loss_curve(state.losses, run.report(f"loss_{which}.png"), title=f"{which} training loss")
    print(f"{which}: {state.step} steps, final loss {state.losses[-1]:.5f}, checkpoint {ckpt}")
    return 0


def _system_nets(run: RunDir, system, testing):
    """(score, mask_net, mask_source) for a system tag."""
    cfg = run.config
    if system == "oracle":
        if not testing:
            raise ConfigError("the oracle score stub needs --testing")
        return "oracle", None, "none"
    if system not in SYSTEMS:
        raise ConfigError(f"unknown system {system!r}; choose from {sorted(SYSTEMS)}")
    arch = {"N": cfg.schedule.N, "t_min": cfg.schedule.t_min}
    score = load_net(run.checkpoint(SYSTEMS[system]), "score", arch)
    if system == "sbse":
        return score, None, "none"
    if cfg.inference.mask_source == "oracle":
        return score, None, "oracle"
    return score, load_net(run.checkpoint("mask"), "mask"), "predicted"


def _enhance_one(job):
    run_root, config_text, system, tag, testing, rec, clip_seed = job
    cfg = RunConfig.loads(config_text)
    run = RunDir(run_root, cfg)
    score, mask_net, mask_source = _system_nets(run, system, testing)
    schedule = cfg.build_schedule()
    grid = inference_grid(schedule, cfg.inference.N_infer, cfg.inference.spacing)
    noisy = read_wav(run.clip_path(rec, "noisy"))
    clean = read_wav(run.clip_path(rec, "clean")) if (system == "oracle" or mask_source == "oracle") else None
    out = enhance_clip(
        noisy, score, schedule, grid, cfg.spectral_params(), make_rng(clip_seed),
        mask_net=mask_net, clean=clean, mask_source=mask_source,
    )
    write_wav(out, run.enhanced_path(tag, rec), "float32")
    return rec.id


def _default_system(cfg):
    return "sbse-m" if cfg.inference.use_mask else "sbse"


def cmd_enhance(run: RunDir, args):
    cfg = run.config
    system = args.system or _default_system(cfg)
    tag = args.tag or system
    seed = cfg.inference.seed
    if args.input:
        score, mask_net, mask_source = _system_nets(run, system, args.testing)
        if mask_source == "oracle" or score == "oracle":
            raise ConfigError("oracle-based systems need the manifest eval split, not --input")
        noisy = read_wav(args.input)
        schedule = cfg.build_schedule()
        grid = inference_grid(schedule, cfg.inference.N_infer, cfg.inference.spacing)
        rng = make_rng(derive_seed(seed, "enhance", Path(args.input).stem))
        out = enhance_clip(noisy, score, schedule, grid, cfg.spectral_params(), rng, mask_net=mask_net, mask_source=mask_source)
        output = args.output or str(Path(args.input).with_suffix("")) + "_enhanced.wav"
        write_wav(out, output, "float32")
        print(f"{system}: wrote {output}")
        return 0

    manifest = run.load_manifest()
    _system_nets(run, system, args.testing)  # fail fast on missing or mismatched checkpoints
    text = cfg.dumps()
    jobs = [
        (str(run.root), text, system, tag, args.testing, rec, derive_seed(seed, "enhance", rec.id))
        for rec in manifest.split(args.split)
    ]
    t0 = time.perf_counter()
    if cfg.inference.workers > 1:
        with ProcessPoolExecutor(cfg.inference.workers) as pool:
            done = list(pool.map(_enhance_one, jobs))
    else:
        done = [_enhance_one(j) for j in jobs]
    log.info("%s: enhanced %d clips in %.1fs", tag, len(done), time.perf_counter() - t0)
    print(f"{tag}: enhanced {len(done)} clips into {run.root / 'enhanced' / tag}")
    return 0


def evaluate_systems(run: RunDir, systems):
    manifest = run.load_manifest()
    records = manifest.split("eval")
    refs = {r.id: read_wav(run.clip_path(r, "clean")) for r in records}
    noisy = {r.id: read_wav(run.clip_path(r, "noisy")) for r in records}
    meta = {
        "N_infer": run.config.inference.N_infer,
        "seed": run.config.inference.seed,
        "config_hash": run.config.digest(),
    }
    reports = []
    for system in systems:
        outs = {}
        for r in records:
            p = run.enhanced_path(system, r)
            if p.exists():
                outs[r.id] = read_wav(p)
        reports.append(evaluate(manifest, outs, refs, system, noisy=noisy, metadata=meta))
    per_clip, meta = merge_reports(*reports)
    return aggregate(manifest, per_clip, meta)


def mask_trend_notes(report, levels=(-5, 0)):
    """Soft check that the mask-conditioned system is not worse at low SNR."""
    notes = []
    if not {"sbse", "sbse-m"} <= set(report.systems()):
        return notes
    for lv in levels:
        a, b = report.row(lv, "sbse-m"), report.row(lv, "sbse")
        if a.si_sdr_mean >= b.si_sdr_mean:
            notes.append(f"ok: sbse-m >= sbse at {lv:g} dB ({a.si_sdr_mean:.2f} vs {b.si_sdr_mean:.2f})")
        elif a.si_sdr_mean + a.si_sdr_ci95 >= b.si_sdr_mean - b.si_sdr_ci95:
            notes.append(f"warning: sbse-m below sbse at {lv:g} dB but within CI overlap")
        else:
            notes.append(f"warning: sbse-m below sbse at {lv:g} dB beyond CI overlap")
    return notes


def cmd_eval(run: RunDir, args):
    systems = args.system or [_default_system(run.config)]
    report = evaluate_systems(run, systems)
    tag = "_".join(systems)
    text = report.to_text()
    run.report(f"eval_{tag}.txt").parent.mkdir(parents=True, exist_ok=True)
    run.report(f"eval_{tag}.txt").write_text(text, encoding="utf-8")
    run.report(f"eval_{tag}.csv").write_text(report.to_csv(), encoding="utf-8")
    plot_eval_report(report, run.report(f"eval_{tag}.png"))
    print(text, end="")
    for note in mask_trend_notes(report):
        print(note)
        log.info(note)
    return 0


def cmd_verify(run: RunDir, args):
    cfg = run.config
    fault = args.inject_fault
    if fault and not args.testing:
        raise ConfigError("--inject-fault needs --testing")
    if fault:
        with injected_fault(fault):
            results = run_suite(cfg.build_schedule(), cfg.spectral_params(), cfg.train.seed, quick=args.quick)
    else:
        results = run_suite(cfg.build_schedule(), cfg.spectral_params(), cfg.train.seed, quick=args.quick)
    print(format_results(results), end="")
    return 0 if all(r.passed for r in results) else 1


def bench_rows(run: RunDir, system, testing):
    cfg = run.config
    inf = cfg.inference
    score, mask_net, mask_source = _system_nets(run, system, testing)
    if mask_source == "oracle" or score == "oracle":
        raise ConfigError("bench needs a trained system, not an oracle one")
    schedule = cfg.build_schedule()
    params = cfg.spectral_params()
    clips = []
    for i in range(inf.bench_clips):
        clean = synth_clean(inf.bench_duration_s, derive_seed(inf.seed, "bench-clean", i))
        noise = synth_noise(inf.bench_duration_s, "white", derive_seed(inf.seed, "bench-noise", i))
        clips.append(mix_at_snr(clean, noise, 0.0)[0])
    audio_s = sum(len(c) for c in clips) / clips[0].sample_rate_hz
    rows = []
    for nfe in sorted(set(inf.nfe_list), reverse=True):
        grid = inference_grid(schedule, nfe, inf.spacing)
        t0 = time.perf_counter()
        for i, clip in enumerate(clips):
            enhance_clip(clip, score, schedule, grid, params, make_rng(inf.seed, "bench", i),
                         mask_net=mask_net, mask_source=mask_source)
        elapsed = time.perf_counter() - t0
        rows.append((nfe, elapsed / audio_s, elapsed, audio_s))
    return rows


def cmd_bench(run: RunDir, args):
    system = args.system or _default_system(run.config)
    rows = bench_rows(run, system, args.testing)
    lines = [f"{'NFE':>5}{'RTF':>10}{'seconds':>10}{'audio [s]':>11}"]
    lines += [f"{n:>5d}{r:>10.4f}{e:>10.2f}{a:>11.1f}" for n, r, e, a in rows]
    lines.append("# local CPU timing; not comparable to accelerator figures")
    text = "\n".join(lines) + "\n"
    run.report("bench.txt").parent.mkdir(parents=True, exist_ok=True)
    run.report("bench.txt").write_text(text, encoding="utf-8")
    with open(run.report("bench.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["nfe", "rtf", "seconds", "audio_seconds"])
        w.writerows(rows)
    plot_rtf([(n, r) for n, r, _, _ in rows], run.report("bench_rtf.png"))
    print(text, end="")
    return 0


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="INI config file (default: the run snapshot if present)")
    p.add_argument("--seed", type=int, help="master seed; overrides corpus, train and inference seeds")
    p.add_argument("--workdir", help="run directory (default: paths.workdir)")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs / restart training")
    p.add_argument("--testing", action="store_true", help="enable testing hooks")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(
        prog="sbse",
        description="Schrodinger-bridge speech enhancement toolkit.",
        epilog="Any config key can be set as --section.key VALUE.",
        parents=[common],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth-data", parents=[common], help="synthesize the dataset")

    p = sub.add_parser("train", parents=[common], help="train a network")
    p.add_argument("which", choices=["score", "score_masked", "mask"])

    p = sub.add_parser("enhance", parents=[common], help="enhance clips")
    p.add_argument("--system", help="sbse, sbse-m or (with --testing) oracle")
    p.add_argument("--tag", help="output directory name under enhanced/ (default: the system)")
    p.add_argument("--split", default="eval", choices=["train", "eval"])
    p.add_argument("--input", help="single noisy WAV instead of the manifest split")
    p.add_argument("--output", help="output path for --input")

    p = sub.add_parser("eval", parents=[common], help="SI-SDR report")
    p.add_argument("--system", action="append", help="enhanced/ tag to score; repeat to compare")

    p = sub.add_parser("verify", parents=[common], help="run the property suite")
    p.add_argument("--inject-fault", choices=FAULTS, help="testing hook: corrupt a formula")
    p.add_argument("--quick", action="store_true", help="smaller Monte-Carlo sizes")

    p = sub.add_parser("bench", parents=[common], help="real-time factor per NFE")
    p.add_argument("--system")
    return parser


def split_overrides(extra):
    """Turn ``--a.b v`` / ``--a.b=v`` leftovers into ``{"a.b": "v"}``."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unrecognized argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"{tok} needs a value")
            val = extra[i + 1]
            i += 2
        out[key] = val
    return out


def resolve_config(args, overrides):
    """config file (or run snapshot) -> dotted overrides -> --seed -> --workdir."""
    if args.config:
        cfg = RunConfig.load(args.config)
    else:
        cfg = RunConfig()
        if args.workdir and (Path(args.workdir) / SNAPSHOT_NAME).exists():
            cfg = RunConfig.load(Path(args.workdir) / SNAPSHOT_NAME)
    if args.workdir:
        overrides = {"paths.workdir": args.workdir, **overrides}
    if overrides:
        cfg = cfg.with_overrides(overrides)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _setup_logging(root):
    log.setLevel(logging.INFO)
    for h in list(log.handlers):
        log.removeHandler(h)
        h.close()
    root.mkdir(parents=True, exist_ok=True)
    fh = logging.FileHandler(root / "log.txt", encoding="utf-8")
    fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(fh)
    log.propagate = False


COMMANDS = {
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "enhance": cmd_enhance,
    "eval": cmd_eval,
    "verify": cmd_verify,
    "bench": cmd_bench,
}


def main(argv=None):
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args, split_overrides(extra))
        root = Path(cfg.paths.workdir)
        if args.command == "synth-data" and root.exists() and any(root.iterdir()) and not args.force:
            raise ConfigError(f"workdir {root} is not empty; pass --force to overwrite")
        run = RunDir(root, cfg)
        if args.command != "verify" or args.workdir:
            _setup_logging(root)
            cfg.save(run.snapshot)  # snapshot before any work starts
            log.info("sbse %s %s", args.command, " ".join(argv if argv is not None else sys.argv[1:]))
        return COMMANDS[args.command](run, args)
    except SBSEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    finally:
        for h in list(log.handlers):
            log.removeHandler(h)
            h.close()


if __name__ == "__main__":
    sys.exit(main())
