"""Command-line entry points.

Verbs:
  bench          simulated evaluation over a dataset (synthetic or remote backends)
  render-scenes  export the bundled synthetic suite to the dataset layout
  serve          run the interactive session service
  replay         re-run a session checkpoint and verify its masks

Config flags mirror the RunConfig field names; backend endpoints come only
from environment variables (IVOS_POINT_ENDPOINT, IVOS_BOX_ENDPOINT,
IVOS_SEGMENTER_ENDPOINT).
"""

from __future__ import annotations

import argparse
import sys

from ..backends import BackendNoise, remote_backends_from_env, synthetic_backends
from ..core import RunConfig, default_config
from ..engine import StepTimer, run_round
from ..synthlab import load_scene, render_scene, standard_suite_specs
from .bench import emit_report, run_benchmark
from .checkpoint import load_checkpoint, prompts_from_doc, save_checkpoint
from .dataset import DatasetError, export_dataset, load_dataset
from ..engine import SessionState


def _add_config_flags(parser: argparse.ArgumentParser):
    d = default_config()
    parser.add_argument("--num-rounds", type=int, default=d.num_rounds)
    parser.add_argument("--num-pos-points", type=int, default=d.num_pos_points)
    parser.add_argument("--num-neg-points", type=int, default=d.num_neg_points)
    parser.add_argument("--iri-count", type=int, default=d.iri_count)
    parser.add_argument("--topk", type=int, default=d.topk)
    parser.add_argument("--memory-interval", type=int, default=d.memory_interval)
    parser.add_argument("--box-jitter-max", type=float, default=d.box_jitter_max)
    parser.add_argument("--per-object-time-cap", type=float,
                        default=d.per_object_time_cap)
    parser.add_argument("--mask-threshold", type=float, default=d.mask_threshold)
    parser.add_argument("--rng-seed", type=int, default=d.rng_seed)
    parser.add_argument("--no-box-prompts", action="store_true")
    parser.add_argument("--no-crstm", action="store_true")
    parser.add_argument("--occlusion-threshold", type=float,
                        default=d.occlusion_threshold)
    parser.add_argument("--filter-margin", type=float, default=d.filter_margin)
    parser.add_argument("--strict-time-budget", action="store_true")


def _config_from_args(args) -> RunConfig:
    return RunConfig(
        num_rounds=args.num_rounds,
        num_pos_points=args.num_pos_points,
        num_neg_points=args.num_neg_points,
        iri_count=args.iri_count,
        topk=args.topk,
        memory_interval=args.memory_interval,
        box_jitter_max=args.box_jitter_max,
        per_object_time_cap=args.per_object_time_cap,
        mask_threshold=args.mask_threshold,
        rng_seed=args.rng_seed,
        use_box_prompts=not args.no_box_prompts,
        use_crstm=not args.no_crstm,
        occlusion_threshold=args.occlusion_threshold,
        filter_margin=args.filter_margin,
        strict_time_budget=args.strict_time_budget)


def _add_noise_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--noise-sigma", type=float, default=0.0,
                        help="synthetic point tracker gaussian jitter (px)")
    parser.add_argument("--noise-drift", type=float, default=0.0,
                        help="synthetic point tracker drift (px/frame)")
    parser.add_argument("--noise-box-edge", type=float, default=0.0,
                        help="synthetic box tracker edge noise (px)")


def _noise_from_args(args) -> BackendNoise:
    return BackendNoise(sigma=args.noise_sigma, drift=args.noise_drift,
                        box_edge=args.noise_box_edge)


def _synth_factory(noise: BackendNoise):
    def factory(entry, session_seed: int):
        remote = remote_backends_from_env()
        if remote is not None:
            return remote
        if entry.scene_spec_path is None:
            raise DatasetError(
                f"sequence {entry.name!r} has no scene spec and no remote "
                "backends are configured (set IVOS_*_ENDPOINT)")
        frames, truth = render_scene(load_scene(entry.scene_spec_path))
        return synthetic_backends(truth, frames, noise, seed=session_seed)
    return factory


def _cmd_bench(args) -> int:
    cfg = _config_from_args(args)
    noise = _noise_from_args(args)
    index = load_dataset(args.dataset)
    report = run_benchmark(
        index, cfg, _synth_factory(noise), inits=args.inits,
        wall_clock=args.wall_clock, t_max_override=args.t_max,
        out_dir=args.out,
        sequences=args.sequences.split(",") if args.sequences else None,
        source_extra={"noise": {"sigma": noise.sigma, "drift": noise.drift,
                                "box_edge": noise.box_edge}})
    formats = set(args.formats.split(","))
    written = emit_report(report, formats, args.out)
    for fmt, path in sorted(written.items()):
        print(f"wrote {fmt}: {path}")
    if report.partial:
        print("WARNING: partial report:", file=sys.stderr)
        for failure in report.failures:
            print(f"  {failure['sequence']}: {failure['error']}",
                  file=sys.stderr)
        return 2
    agg = report.aggregates
    print(f"AUC-J {agg['auc_j']:.4f}  J@60s {agg['j_at_60s']:.4f}  "
          f"AUC-J&F {agg['auc_jf']:.4f}  J&F@60s {agg['jf_at_60s']:.4f}")
    return 0


def _cmd_render_scenes(args) -> int:
    index = export_dataset(standard_suite_specs(), args.out)
    for entry in index.sequences:
        print(f"{entry.name}: {entry.num_frames} frames "
              f"{entry.width}x{entry.height} objects={list(entry.object_ids)}")
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    index = load_dataset(args.dataset) if args.dataset else None
    serve(args.host, args.port, dataset_index=index,
          cfg=_config_from_args(args), default_noise=_noise_from_args(args))
    return 0


def _cmd_replay(args) -> int:
    manifest, saved_masks, _bank = load_checkpoint(args.checkpoint)
    cfg = RunConfig(**manifest["config"])
    source = manifest.get("source", {})
    sequence = source.get("sequence")
    if not sequence:
        print("checkpoint has no source sequence to replay", file=sys.stderr)
        return 2
    index = load_dataset(args.dataset)
    entry = index.sequence(sequence)
    from .dataset import load_sequence

    frames, _refs = load_sequence(entry)
    noise_doc = source.get("noise", {})
    noise = BackendNoise(sigma=noise_doc.get("sigma", 0.0),
                         drift=noise_doc.get("drift", 0.0),
                         box_edge=noise_doc.get("box_edge", 0.0))
    backends = _synth_factory(noise)(entry, int(source.get("session_seed", 0)))
    session = SessionState.new(frames, manifest["object_ids"], cfg)
    timer = StepTimer(1.0)
    for record in manifest["records"]:
        prompts = prompts_from_doc(record["prompts"])
        t0 = timer.now()
        t1 = timer.now()
        run_round(session, prompts, backends, cfg, timer, sim_time=t1 - t0)
    mismatches = [t for t in range(session.num_frames)
                  if not (session.masks[t].labels == saved_masks[t].labels).all()]
    if args.out:
        save_checkpoint(session, cfg, source=source, path=args.out)
        print(f"wrote replayed checkpoint: {args.out}")
    if mismatches:
        print(f"REPLAY MISMATCH on frames {mismatches[:8]}"
              f"{'...' if len(mismatches) > 8 else ''}", file=sys.stderr)
        return 1
    print(f"replay verified: {session.num_frames} frames match "
          f"({len(manifest['records'])} rounds)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ivos", description="interactive video object segmentation engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p_bench = sub.add_parser("bench", help="simulated benchmark over a dataset")
    p_bench.add_argument("--dataset", required=True)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--sequences", default=None,
                         help="comma-separated subset of sequence names")
    p_bench.add_argument("--inits", type=int, default=3)
    p_bench.add_argument("--formats", default="json,csv,curve-points")
    p_bench.add_argument("--wall-clock", action="store_true",
                         help="use real time instead of the deterministic timer")
    p_bench.add_argument("--t-max", type=float, default=None)
    _add_config_flags(p_bench)
    _add_noise_flags(p_bench)
    p_bench.set_defaults(func=_cmd_bench)

    p_render = sub.add_parser("render-scenes",
                              help="export the bundled synthetic suite")
    p_render.add_argument("--out", required=True)
    p_render.set_defaults(func=_cmd_render_scenes)

    p_serve = sub.add_parser("serve", help="run the session service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8008)
    p_serve.add_argument("--dataset", default=None)
    _add_config_flags(p_serve)
    _add_noise_flags(p_serve)
    p_serve.set_defaults(func=_cmd_serve)

    p_replay = sub.add_parser("replay", help="re-run a session checkpoint")
    p_replay.add_argument("--checkpoint", required=True)
    p_replay.add_argument("--dataset", required=True)
    p_replay.add_argument("--out", default=None,
                          help="write the replayed checkpoint here")
    p_replay.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
