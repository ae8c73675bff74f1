"""Command line entry point.

Subcommands: `live` (hardware MIDI ports), `replay` (deterministic file
replay; writes the generated accompaniment SMF and a per-onset log), and
`eval follower` / `eval tempo` (the experiment harness).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import synthetic
from .config import ConfigError, RunConfig, apply_config_values, load_config_file
from .evaluate import (
    EvalError,
    asynchrony_csv,
    format_asynchrony_table,
    format_tempo_table,
    grid_search,
    perturb_performance,
    run_follower_experiment,
    run_tempo_experiment,
    tempo_csv,
)
from .followers.hmm import HmmError, HmmFollower
from .followers.oltw import OltwEnsemble, OltwError
from .midi_io import MidiIoError, SmfSink, replay_performance
from .pipeline import run_duet
from .score import (
    SOLO,
    ReferencePerformance,
    ScoreError,
    build_onset_grid,
    import_midi_performance,
    import_midi_score,
    load_reference,
    parse_score,
)
from .smf import SmfError
from .tempo import TempoError, VARIANTS, expectation_from_references, init_tempo_state


def _load_score(path: str, duet: bool):
    data = Path(path).read_bytes()
    if data[:4] == b"MThd":
        return import_midi_score(data, {0: "solo", 1: "accompaniment"}, duet=duet)
    return parse_score(data, duet=duet)


def _load_references(cfg: RunConfig, score):
    refs = []
    for i, path in enumerate(cfg.reference_paths):
        data = Path(path).read_bytes()
        if i < len(cfg.alignment_paths):
            refs.append(load_reference(data, Path(cfg.alignment_paths[i]).read_bytes(), score))
        else:
            # no explicit alignment: treat the file as a straight rendition
            # whose chord times align to the solo grid in file order
            perf = import_midi_performance(data)
            grid = build_onset_grid(score, SOLO)
            onsets = sorted({n.onset_sec for n in perf})
            if len(onsets) != len(grid.onsets):
                raise ConfigError(
                    f"reference {path} has {len(onsets)} distinct onsets, "
                    f"score has {len(grid.onsets)}; supply an alignment CSV"
                )
            refs.append(
                ReferencePerformance(
                    notes=perf,
                    alignment=tuple((float(s), t) for s, t in zip(grid.onsets, onsets)),
                )
            )
    return refs


def _build_follower(cfg: RunConfig, score, references):
    if cfg.follower_kind == "hmm":
        return HmmFollower(score, cfg.hmm, cfg.initial_bpm)
    return OltwEnsemble(references, cfg.oltw)


def _build_tempo(cfg: RunConfig, score, references):
    expectation = None
    if cfg.tempo_variant == "expectation" and references:
        expectation = expectation_from_references(references)
    bpm = cfg.initial_bpm or score.initial_bpm or 120.0
    return init_tempo_state(cfg.tempo_variant, initial_bpm=bpm, params=cfg.tempo_params, expectation=expectation)


def _load_accomp_style(cfg: RunConfig, score):
    """Per-note micro-timing/dynamics from an accompaniment reference SMF."""
    if not cfg.accomp_reference:
        return None
    from .accompanist import reference_accompaniment_map
    from .score import ACCOMPANIMENT

    perf = import_midi_performance(Path(cfg.accomp_reference).read_bytes())
    grid = build_onset_grid(score, ACCOMPANIMENT)
    onsets = sorted({n.onset_sec for n in perf})
    if len(onsets) != len(grid.onsets):
        raise ConfigError(
            f"accompaniment reference has {len(onsets)} distinct onsets, "
            f"score accompaniment has {len(grid.onsets)}"
        )
    ref = ReferencePerformance(
        notes=perf, alignment=tuple((float(s), t) for s, t in zip(grid.onsets, onsets))
    )
    return reference_accompaniment_map(score, ref)


def cmd_replay(cfg: RunConfig) -> int:
    score = _load_score(cfg.score_path, duet=True)
    references = _load_references(cfg, score)
    solo_bytes = Path(cfg.solo_path).read_bytes()
    events = list(replay_performance(solo_bytes, speed=cfg.speed))
    if cfg.follower_kind == "oltw" and not references:
        raise ConfigError("replay with the oltw follower needs --refs")
    follower = _build_follower(cfg, score, references)
    tempo_state = _build_tempo(cfg, score, references)
    sink = SmfSink(bpm=cfg.initial_bpm or score.initial_bpm or 120.0)
    result = run_duet(
        score, events, follower, tempo_state, sink, cfg.accomp,
        reference_style=_load_accomp_style(cfg, score),
    )

    out_midi = cfg.out_midi or "accompaniment.mid"
    Path(out_midi).write_bytes(sink.to_bytes())
    out_log = cfg.out_log or "replay_log.csv"
    with open(out_log, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["score_onset_beats", "est_time_sec", "position_beats", "predicted_next_onset", "beat_period"]
        )
        for c in result.crossings:
            w.writerow(
                [
                    f"{c.score_onset_beats:.6f}",
                    f"{c.est_time_sec:.6f}",
                    f"{c.position_beats:.6f}",
                    "" if c.predicted_next_onset is None else f"{c.predicted_next_onset:.6f}",
                    f"{c.beat_period:.6f}",
                ]
            )
    print(f"wrote {out_midi} ({len(sink.events)} events) and {out_log} ({len(result.crossings)} onsets)")
    print(f"late events: {result.late_count}, skipped: {result.skipped_count}")
    return 0


def cmd_live(cfg: RunConfig) -> int:
    from .midi_io import MidiEvent, PortSink, WallClock

    score = _load_score(cfg.score_path, duet=True)
    references = _load_references(cfg, score)
    if cfg.follower_kind == "oltw" and not references:
        raise ConfigError("live with the oltw follower needs --refs")
    follower = _build_follower(cfg, score, references)
    tempo_state = _build_tempo(cfg, score, references)
    sink = PortSink(cfg.output_port or "", latency_ms=cfg.latency_ms)

    import rtmidi  # noqa: F401  (PortSink import succeeded, so this exists)

    midi_in = __import__("rtmidi").MidiIn()
    ports = midi_in.get_ports()
    matches = [i for i, p in enumerate(ports) if (cfg.input_port or "") in p]
    if not matches:
        raise MidiIoError(f"MIDI input port {cfg.input_port!r} not found in {ports}")
    midi_in.open_port(matches[0])

    from .pipeline import DuetRunner

    clock = WallClock()
    runner = DuetRunner(score, follower, tempo_state, sink, cfg.accomp)
    print("following... Ctrl-C to stop")
    try:
        while True:
            msg = midi_in.get_message()
            now = clock.now()
            if msg:
                data, _ = msg
                status, pitch, velocity = data[0] & 0xF0, data[1], data[2]
                if status in (0x80, 0x90):
                    kind = "note_on" if status == 0x90 else "note_off"
                    runner.feed(MidiEvent.normalized(kind, pitch, velocity, now))
            runner.scheduler.dispatch_until(now)
    except KeyboardInterrupt:
        runner.finish(until=clock.now())
        print("\nstopped; all notes off")
    return 0


def cmd_eval_follower(cfg: RunConfig, args) -> int:
    score = _load_score(cfg.score_path, duet=False)
    test_perf = load_reference(
        Path(cfg.solo_path).read_bytes(), Path(args.alignment).read_bytes(), score
    )
    if cfg.reference_paths:
        references = _load_references(cfg, score)
    else:
        references = perturb_performance(test_perf, sigma_ms=args.sigma_ms, count=args.n_refs, seed=cfg.seed)
    report = run_follower_experiment(
        score,
        test_perf,
        references,
        kind=cfg.follower_kind,
        hmm_config=cfg.hmm,
        oltw_config=cfg.oltw,
        initial_bpm=cfg.initial_bpm,
    )
    rows = [(cfg.follower_kind, report)]
    print(format_asynchrony_table(rows))
    if cfg.out_log:
        Path(cfg.out_log).write_text(asynchrony_csv(rows))
        print(f"wrote {cfg.out_log}")
    return 0


def cmd_eval_tempo(cfg: RunConfig, args) -> int:
    if cfg.score_path and cfg.solo_path and args.alignment:
        score = _load_score(cfg.score_path, duet=False)
        test_perf = load_reference(
            Path(cfg.solo_path).read_bytes(), Path(args.alignment).read_bytes(), score
        )
        beat_period = 60.0 / (cfg.initial_bpm or score.initial_bpm or 120.0)
    else:
        _, test_perf = synthetic.expressive_piece()
        beat_period = synthetic.EXPRESSIVE_BEAT_PERIOD
    aligned = [(float(s), float(t)) for s, t in test_perf.alignment]
    refs = perturb_performance(test_perf, sigma_ms=args.ref_sigma_ms, count=1, seed=cfg.seed)
    expectation = expectation_from_references(refs)

    if args.grid == "default":
        results = grid_search(aligned, beat_period=beat_period, expectation=expectation)
        reports = [results[v] for v in VARIANTS]
    elif args.grid == "none":
        reports = [
            run_tempo_experiment(
                aligned,
                v,
                cfg.tempo_params,
                beat_period,
                expectation if v == "expectation" else None,
            )
            for v in ([cfg.tempo_variant] if args.variant else VARIANTS)
        ]
    else:
        raise ConfigError(f"unknown grid {args.grid!r} (use 'default' or 'none')")
    print(format_tempo_table(reports))
    if cfg.out_log:
        Path(cfg.out_log).write_text(tempo_csv(reports))
        print(f"wrote {cfg.out_log}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="dotted-key config file")
    shared.add_argument("--seed", type=int, default=None)
    shared.add_argument("--log", dest="out_log", help="write report/log CSV here")
    parser = argparse.ArgumentParser(
        prog="continuo",
        description="real-time symbolic accompaniment engine",
        parents=[shared],
    )
    sub = parser.add_subparsers(dest="mode", required=True)

    def common_run(p):
        p.add_argument("--score", required=True, help="score document (JSON) or SMF")
        p.add_argument("--follower", choices=("hmm", "oltw"), default=None)
        p.add_argument("--tempo", choices=VARIANTS, default=None, help="tempo model variant")
        p.add_argument("--refs", nargs="*", default=None, help="reference performance SMFs")
        p.add_argument("--ref-alignments", nargs="*", default=None, help="alignment CSVs for --refs")
        p.add_argument("--initial-bpm", type=float, default=None)

    live = sub.add_parser("live", parents=[shared], help="follow a hardware MIDI input port")
    common_run(live)
    live.add_argument("--input-port", required=True)
    live.add_argument("--output-port", required=True)
    live.add_argument("--latency-ms", type=float, default=0.0)

    replay = sub.add_parser("replay", parents=[shared], help="replay a recorded solo deterministically")
    common_run(replay)
    replay.add_argument("--solo", required=True, help="solo performance SMF")
    replay.add_argument("--speed", type=float, default=1.0)
    replay.add_argument("--out-midi", default=None)

    ev = sub.add_parser("eval", parents=[shared], help="experiment harness")
    evsub = ev.add_subparsers(dest="experiment", required=True)

    evf = evsub.add_parser("follower", parents=[shared], help="follower asynchrony experiment")
    evf.add_argument("--score", required=True)
    evf.add_argument("--perf", required=True, help="test performance SMF")
    evf.add_argument("--alignment", required=True, help="alignment CSV for the test performance")
    evf.add_argument("--refs", nargs="*", default=None)
    evf.add_argument("--ref-alignments", nargs="*", default=None)
    evf.add_argument("--kind", choices=("hmm", "oltw"), default="oltw")
    evf.add_argument("--sigma-ms", type=float, default=100.0, help="perturbation noise when no refs given")
    evf.add_argument("--n-refs", type=int, default=5)
    evf.add_argument("--initial-bpm", type=float, default=None)

    evt = evsub.add_parser("tempo", parents=[shared], help="tempo prediction experiment")
    evt.add_argument("--variant", choices=VARIANTS, default=None)
    evt.add_argument("--grid", default="default", help="'default' (full search) or 'none'")
    evt.add_argument("--score", default=None)
    evt.add_argument("--perf", default=None)
    evt.add_argument("--alignment", default=None)
    evt.add_argument("--ref-sigma-ms", type=float, default=20.0, help="noise for the synthetic expectation reference")
    evt.add_argument("--initial-bpm", type=float, default=None)
    return parser


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = apply_config_values(cfg, load_config_file(args.config))
    cfg.mode = args.mode
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_log:
        cfg.out_log = args.out_log
    if getattr(args, "follower", None):
        cfg.follower_kind = args.follower
    if getattr(args, "kind", None):
        cfg.follower_kind = args.kind
    if getattr(args, "tempo", None):
        cfg.tempo_variant = args.tempo
    if getattr(args, "variant", None):
        cfg.tempo_variant = args.variant
    if getattr(args, "refs", None) is not None:
        cfg.reference_paths = list(args.refs)
    if getattr(args, "ref_alignments", None) is not None:
        cfg.alignment_paths = list(args.ref_alignments)
    if getattr(args, "initial_bpm", None) is not None:
        cfg.initial_bpm = args.initial_bpm
    if getattr(args, "score", None):
        cfg.score_path = args.score
    if getattr(args, "solo", None):
        cfg.solo_path = args.solo
    if getattr(args, "perf", None):
        cfg.solo_path = args.perf
    if getattr(args, "speed", None):
        cfg.speed = args.speed
    if getattr(args, "out_midi", None):
        cfg.out_midi = args.out_midi
    if getattr(args, "input_port", None):
        cfg.input_port = args.input_port
    if getattr(args, "output_port", None):
        cfg.output_port = args.output_port
    if getattr(args, "latency_ms", None):
        cfg.latency_ms = args.latency_ms
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.mode == "replay":
            return cmd_replay(cfg)
        if args.mode == "live":
            return cmd_live(cfg)
        if args.experiment == "follower":
            return cmd_eval_follower(cfg, args)
        return cmd_eval_tempo(cfg, args)
    except (
        ConfigError,
        ScoreError,
        SmfError,
        MidiIoError,
        TempoError,
        EvalError,
        HmmError,
        OltwError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
