"""Command-line driver: ``evspike <subcommand> ...``.

Every subcommand accepts ``--config FILE``: a JSON object whose sections
(generator, encoder, evspd, frame, train, threshold, filter, match) mirror
the module config dataclasses.  Explicit flags override config values.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import baselines, encoder, evaluation, evspd, nnspd, synthgen
from .core import atomic_write_text, read_detections, write_detections
from .errors import EvSpikeError

SECTIONS = {
    "generator": synthgen.GeneratorConfig,
    "encoder": encoder.EncoderConfig,
    "evspd": evspd.EvSpdConfig,
    "frame": nnspd.FrameConfig,
    "train": nnspd.TrainConfig,
    "threshold": baselines.ThresholdSpec,
    "filter": baselines.FilterSpec,
    "match": evaluation.MatchConfig,
}


class CliError(EvSpikeError):
    pass


def load_config(path) -> dict[str, dict]:
    """Read and key-check a pipeline config file (unknown keys are rejected)."""
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise CliError("config file must hold a JSON object of sections")
    for section, body in doc.items():
        if section not in SECTIONS:
            raise CliError(f"unknown config section {section!r} (expected one of {', '.join(SECTIONS)})")
        if not isinstance(body, dict):
            raise CliError(f"config section {section!r} must be an object")
        fields = {f.name for f in dataclasses.fields(SECTIONS[section])}
        for key in body:
            if key not in fields:
                raise CliError(f"unknown config key {section}.{key}")
    return doc


def build(section: str, cfg: dict, **flags):
    """Instantiate a section's dataclass from config values overlaid with non-None flags."""
    values = dict(cfg.get(section, {}))
    values.update({k: v for k, v in flags.items() if v is not None})
    if section == "generator" and isinstance(values.get("filter"), dict):
        values["filter"] = baselines.FilterSpec(**values["filter"])
    return SECTIONS[section](**values)


def parse_range(text: str) -> list[int]:
    """``"1:10"`` (inclusive), ``"1:10:2"`` or ``"1,3,5"``."""
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) == 2:
                parts.append(1)
            lo, hi, step = parts
            if step < 1 or hi < lo:
                raise ValueError
            return list(range(lo, hi + 1, step))
        return [int(p) for p in text.split(",") if p]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {text!r}; use a:b, a:b:step or a,b,c") from None


def _ms_to_us(v):
    return None if v is None else v * 1000.0


def _read_any(path):
    """Read an NREC1 or NPCM1 file, dispatching on its magic bytes."""
    p = Path(path)
    if not p.is_file():
        raise CliError(f"input file not found: {path}")
    data = p.read_bytes()
    if data[:5] == synthgen.NREC_MAGIC:
        return "nrec", synthgen.recording_from_bytes(data)
    if data[:5] == encoder.NPCM_MAGIC:
        return "npcm", encoder.pcm_from_bytes(data)
    raise CliError(f"{path}: neither an NREC1 recording nor an NPCM1 event file")


def _pcm_input(path, cfg):
    kind, obj = _read_any(path)
    if kind == "npcm":
        return obj
    rec, _ = obj
    return encoder.to_pcm(rec, build("encoder", cfg))


def _gt_input(path):
    kind, obj = _read_any(path)
    if kind != "nrec":
        raise CliError(f"{path}: ground truth must come from an NREC1 recording")
    return obj[1]


# ------------------------------------------------------------- subcommands


def _sigma_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad sigma list {text!r}") from None


def cmd_generate(args, cfg):
    sigmas = args.sigma or []
    gcfg = build("generator", cfg, noise_sigma=sigmas[0] if len(sigmas) == 1 else None,
                 duration_s=args.duration, seed=args.seed, num_neurons=args.neurons,
                 firing_rate_hz=args.rate, sample_rate_hz=args.sample_rate)
    if len(sigmas) > 1:
        rec, gt = synthgen.generate_mixed(gcfg, sigmas)
    else:
        rec, gt = synthgen.generate(gcfg)
    synthgen.write_recording(args.out, rec, gt)
    synthgen.read_recording(args.out)
    print(f"wrote {args.out}: {rec.samples.size} samples, {len(gt)} spikes")


def cmd_encode(args, cfg):
    kind, obj = _read_any(args.input)
    if kind != "nrec":
        raise CliError(f"{args.input}: encode needs an NREC1 recording")
    rec, _ = obj
    ecfg = build("encoder", cfg, k=args.k, bin_us=args.bin_us,
                 allow_multi_event_per_sample=False if args.single_event else None)
    pcm = encoder.to_pcm(rec, ecfg)
    encoder.write_pcm(args.out, pcm)
    encoder.read_pcm(args.out)
    sp = encoder.sparsity(pcm)
    print(f"wrote {args.out}: {sp.events_total} events ({sp.events_on} ON, {sp.events_off} OFF), "
          f"{sp.nonzero_bins}/{sp.num_bins} non-zero bins, S_PCM={sp.s_pcm:.4f}")


def cmd_recover(args, cfg):
    kind, pcm = _read_any(args.input)
    if kind != "npcm":
        raise CliError(f"{args.input}: recover needs an NPCM1 event file")
    rec = encoder.recover(pcm, None, args.initial)
    gt = _gt_input(args.gt) if args.gt else None
    synthgen.write_recording(args.out, rec, gt)
    synthgen.read_recording(args.out)
    print(f"wrote {args.out}: {rec.samples.size} samples at {rec.sample_rate_hz:.3f} Hz")


def cmd_detect(args, cfg):
    if args.detector == "ev":
        ecfg = build("evspd", cfg, n_th=args.nth, tau_bins=args.tau, t_ref_us=_ms_to_us(args.tref_ms))
        det = evspd.detect_ev(_pcm_input(args.input, cfg), ecfg, args.channel)
    elif args.detector == "mlp":
        if not args.model:
            raise CliError("detect mlp requires --model")
        model = nnspd.load_model(args.model)
        fcfg = build("frame", cfg, tau_f_bins=args.tau_f, count_clip=args.clip)
        t_ref = _ms_to_us(args.tref_ms) or cfg.get("evspd", {}).get("t_ref_us", 1000.0)
        det = nnspd.infer_online(_pcm_input(args.input, cfg), model, fcfg, t_ref, args.channel)
    else:
        kind, obj = _read_any(args.input)
        if kind != "nrec":
            raise CliError(f"detect {args.detector} needs a signal (NREC1); run `recover` on event files first")
        rec = obj[0]
        method = "neo" if args.detector == "neo" else "absolute"
        tcfg = build("threshold", cfg, method=method, multiplier=args.multiplier,
                     t_ref_us=_ms_to_us(args.tref_ms))
        if not args.no_filter:
            rec = baselines.bandpass(rec, build("filter", cfg, low_hz=args.low_hz, high_hz=args.high_hz))
        det = baselines.detect(rec, tcfg)
        det.channel_id = args.channel
    write_detections(args.out, det)
    read_detections(args.out)
    print(f"wrote {args.out}: {len(det)} {det.detector_tag} detections")


def _hidden_dims(text: str) -> list[int]:
    try:
        dims = [int(h) for h in text.split(",") if h.strip()]
    except ValueError:
        raise CliError(f"--hidden expects comma-separated integers, got {text!r}") from None
    return dims


def cmd_train(args, cfg):
    fcfg = build("frame", cfg, tau_f_bins=args.tau_f, count_clip=args.clip)
    tcfg = build("train", cfg, epochs=args.epochs, batch_size=args.batch_size,
                 learning_rate=args.lr, seed=args.seed, validation_fraction=args.val_fraction)
    mcfg = build("match", cfg, delta_t_us=_ms_to_us(args.delta_t_ms))
    if args.gt and len(args.gt) != len(args.input):
        raise CliError("--gt must be given once per --in (or omitted when inputs are NREC1 files)")
    sets = []
    for i, path in enumerate(args.input):
        kind, obj = _read_any(path)
        if kind == "nrec":
            rec, gt = obj
            pcm = encoder.to_pcm(rec, build("encoder", cfg))
        else:
            pcm = obj
            if not args.gt:
                raise CliError(f"{path} is an event file; pass its recording with --gt")
        if args.gt:
            gt = _gt_input(args.gt[i])
        sets.append(nnspd.extract_frames(pcm, gt, fcfg, mcfg.delta_t_us, seed=tcfg.seed + i))
    frames = nnspd.FrameSet.concat(sets)
    dims = [fcfg.frame_length, *_hidden_dims(args.hidden), 1]
    model, log = nnspd.train(frames, dims, tcfg)
    nnspd.save_model(args.out, model)
    nnspd.load_model(args.out)
    if args.log:
        lines = ["epoch,train_loss,val_loss,val_acc"] + [
            f"{r['epoch']},{r['train_loss']:.8g},{r['val_loss']:.8g},{r['val_acc']:.8g}" for r in log]
        atomic_write_text(args.log, "\n".join(lines) + "\n")
    print(f"wrote {args.out}: dims {dims}, {len(frames)} frames, "
          f"best val acc {model.train_meta['best_val_acc']:.4f} at epoch {model.train_meta['best_epoch']}")


def cmd_evaluate(args, cfg):
    if not Path(args.det).is_file():
        raise CliError(f"input file not found: {args.det}")
    det = read_detections(args.det)
    gt = _gt_input(args.gt)
    mcfg = build("match", cfg, delta_t_us=_ms_to_us(args.delta_t_ms))
    rep = evaluation.match(det, gt, mcfg)
    s_pcm = ratio = None
    if args.pcm:
        pcm = _pcm_input(args.pcm, cfg)
        s_pcm = encoder.sparsity(pcm).s_pcm
        ratio = evaluation.compression(pcm, det, args.event_bits, args.spike_bits).compression_ratio
    params = {"detections": os.path.basename(args.det), "ground_truth": os.path.basename(args.gt),
              "delta_t_us": mcfg.delta_t_us}
    if args.label:
        params["label"] = args.label
    record = evaluation.metrics_record(args.detector or det.detector_tag, params, rep, s_pcm, ratio)
    evaluation.write_metrics(args.out, record)
    evaluation.read_metrics(args.out)
    print(f"{record['detector']}: TP={rep.tp} FP={rep.fp} FN={rep.fn} "
          f"S={rep.sensitivity:.4f} FDR={rep.fdr:.4f} A={rep.accuracy:.4f}")


def cmd_sweep(args, cfg):
    pcm = _pcm_input(args.input, cfg)
    gt = _gt_input(args.gt)
    mcfg = build("match", cfg, delta_t_us=_ms_to_us(args.delta_t_ms))
    t_ref = _ms_to_us(args.tref_ms) or cfg.get("evspd", {}).get("t_ref_us", 1000.0)
    grid = evspd.sweep_ev(pcm, gt, args.nth, args.tau, t_ref, mcfg)
    evspd.write_heatmap(args.out, grid)
    rows = evspd.read_heatmap(args.out)
    print(f"wrote {args.out}: {len(rows)} cells ({len(grid) - len(rows)} invalid pairs skipped)")


def cmd_report(args, cfg):
    records = []
    for path in args.input:
        if not Path(path).is_file():
            raise CliError(f"input file not found: {path}")
        records.append(evaluation.read_metrics(path))
    atomic_write_text(args.out, evaluation.summary_csv(records))
    print(f"wrote {args.out}: {len(records)} runs")


# ------------------------------------------------------------- parser


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config; flags override its values")

    p = argparse.ArgumentParser(prog="evspike", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="simulate a recording with ground truth")
    g.add_argument("--sigma", type=_sigma_list,
                   help="noise standard deviation (unit spike peak); a comma list makes one "
                        "recording with an equal-length segment per level")
    g.add_argument("--duration", type=float, help="seconds")
    g.add_argument("--seed", type=int)
    g.add_argument("--neurons", type=int)
    g.add_argument("--rate", type=float, help="firing rate per neuron, Hz")
    g.add_argument("--sample-rate", type=float)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("encode", parents=[common], help="delta-modulate a recording into PCM events")
    e.add_argument("--in", dest="input", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--k", type=float)
    e.add_argument("--bin-us", type=float)
    e.add_argument("--single-event", action="store_true", help="at most one pulse per sample")
    e.set_defaults(func=cmd_encode)

    r = sub.add_parser("recover", parents=[common], help="stair-step reconstruction of PCM events")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--initial", type=float, default=0.0)
    r.add_argument("--gt", help="recording whose ground truth is copied into the output")
    r.set_defaults(func=cmd_recover)

    d = sub.add_parser("detect", parents=[common], help="run a spike detector")
    d.add_argument("detector", choices=["ev", "mlp", "at", "neo"])
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--channel", type=int, default=0)
    d.add_argument("--tref-ms", type=float)
    d.add_argument("--nth", type=int)
    d.add_argument("--tau", type=int)
    d.add_argument("--model")
    d.add_argument("--tau-f", type=int)
    d.add_argument("--clip", type=int)
    d.add_argument("--multiplier", type=float)
    d.add_argument("--no-filter", action="store_true")
    d.add_argument("--low-hz", type=float)
    d.add_argument("--high-hz", type=float)
    d.set_defaults(func=cmd_detect)

    t = sub.add_parser("train", parents=[common], help="train an MLP-SPD on event frames")
    t.add_argument("--in", dest="input", action="append", required=True)
    t.add_argument("--gt", action="append")
    t.add_argument("--hidden", default="32", help="hidden sizes, e.g. 32 or 64,64; empty for 1-FC")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--val-fraction", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--tau-f", type=int)
    t.add_argument("--clip", type=int)
    t.add_argument("--delta-t-ms", type=float)
    t.add_argument("--log", help="per-epoch CSV log")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("evaluate", parents=[common], help="score detections against ground truth")
    v.add_argument("--det", required=True)
    v.add_argument("--gt", required=True)
    v.add_argument("--pcm", help="event file for sparsity and compression")
    v.add_argument("--delta-t-ms", type=float)
    v.add_argument("--event-bits", type=int, default=32)
    v.add_argument("--spike-bits", type=int, default=32)
    v.add_argument("--detector", help="override the detector tag")
    v.add_argument("--label")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", parents=[common], help="Ev-SPD n_th x tau grid")
    s.add_argument("--nth", type=parse_range, required=True)
    s.add_argument("--tau", type=parse_range, required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--tref-ms", type=float)
    s.add_argument("--delta-t-ms", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    rp = sub.add_parser("report", parents=[common], help="aggregate metrics JSON files into a CSV table")
    rp.add_argument("--in", dest="input", nargs="+", required=True)
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except (EvSpikeError, TypeError, OSError) as exc:
        print(f"evspike {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
