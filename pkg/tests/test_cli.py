import pytest

from continuo import smf
from continuo.cli import main
from continuo.config import ConfigError, apply_config_values, parse_config_text, RunConfig
from continuo.score import SOLO, score_to_document
from continuo.synthetic import constant_tempo, melody_score, perform_part


@pytest.fixture
def duet_files(tmp_path):
    score = melody_score(12, ioi_beats=1.0, accompaniment=True)
    perf = perform_part(score, SOLO, constant_tempo(0.5), articulation=1.0)
    score_path = tmp_path / "score.json"
    score_path.write_text(score_to_document(score))
    solo_path = tmp_path / "solo.mid"
    solo_path.write_bytes(
        smf.timed_notes_to_smf(
            [(n.pitch, n.onset_sec, n.duration_sec, n.velocity) for n in perf.notes]
        )
    )
    csv_path = tmp_path / "align.csv"
    csv_path.write_text(
        "score_onset_beats,perf_onset_sec\n"
        + "".join(f"{s},{t}\n" for s, t in perf.alignment)
    )
    return score_path, solo_path, csv_path


class TestReplayCommand:
    def test_replay_writes_outputs_and_is_deterministic(self, duet_files, tmp_path, monkeypatch):
        score_path, solo_path, csv_path = duet_files
        monkeypatch.chdir(tmp_path)
        blobs = []
        for run in range(2):
            out_mid = tmp_path / f"out{run}.mid"
            out_log = tmp_path / f"log{run}.csv"
            code = main(
                [
                    "replay",
                    "--score", str(score_path),
                    "--solo", str(solo_path),
                    "--follower", "oltw",
                    "--refs", str(solo_path),
                    "--ref-alignments", str(csv_path),
                    "--tempo", "expectation",
                    "--out-midi", str(out_mid),
                    "--log", str(out_log),
                ]
            )
            assert code == 0
            assert out_mid.is_file() and out_log.is_file()
            blobs.append((out_mid.read_bytes(), out_log.read_text()))
            header = blobs[-1][1].splitlines()[0]
            assert header == "score_onset_beats,est_time_sec,position_beats,predicted_next_onset,beat_period"
        assert blobs[0] == blobs[1]  # identical SMF bytes and log

    def test_unknown_tempo_variant_exits_nonzero(self, duet_files, capsys):
        score_path, solo_path, csv_path = duet_files
        with pytest.raises(SystemExit):
            main(
                [
                    "replay",
                    "--score", str(score_path),
                    "--solo", str(solo_path),
                    "--tempo", "fancy",
                ]
            )
        err = capsys.readouterr().err
        assert "invalid choice" in err and "expectation" in err

    def test_missing_file_reports_error(self, duet_files, capsys):
        score_path, solo_path, _ = duet_files
        code = main(
            ["replay", "--score", "nope.json", "--solo", str(solo_path), "--follower", "hmm"]
        )
        assert code == 2
        assert "not found" in capsys.readouterr().err

    def test_replay_with_accomp_reference(self, duet_files, tmp_path):
        score_path, solo_path, csv_path = duet_files
        from continuo.score import ACCOMPANIMENT, parse_score
        from continuo.synthetic import constant_tempo, perform_part

        score = parse_score(score_path.read_text())
        accomp_perf = perform_part(score, ACCOMPANIMENT, constant_tempo(0.5), velocity=40)
        ref_path = tmp_path / "accomp_ref.mid"
        ref_path.write_bytes(
            smf.timed_notes_to_smf(
                [(n.pitch, n.onset_sec, n.duration_sec, n.velocity) for n in accomp_perf.notes]
            )
        )
        config = tmp_path / "run.conf"
        config.write_text(f'accomp.reference = "{ref_path}"\n')
        code = main(
            [
                "replay",
                "--config", str(config),
                "--score", str(score_path),
                "--solo", str(solo_path),
                "--follower", "hmm",
                "--tempo", "linear",
                "--out-midi", str(tmp_path / "r.mid"),
                "--log", str(tmp_path / "r.csv"),
            ]
        )
        assert code == 0

    def test_hmm_replay(self, duet_files, tmp_path):
        score_path, solo_path, _ = duet_files
        code = main(
            [
                "replay",
                "--score", str(score_path),
                "--solo", str(solo_path),
                "--follower", "hmm",
                "--tempo", "linear",
                "--out-midi", str(tmp_path / "h.mid"),
                "--log", str(tmp_path / "h.csv"),
            ]
        )
        assert code == 0


class TestLiveCommand:
    def test_live_without_midi_backend_fails_cleanly(self, duet_files, capsys):
        score_path, _, _ = duet_files
        code = main(
            [
                "live",
                "--score", str(score_path),
                "--follower", "hmm",
                "--input-port", "x",
                "--output-port", "y",
            ]
        )
        assert code == 2
        err = capsys.readouterr().err
        assert "backend" in err or "--refs" in err

    def test_live_oltw_needs_references(self, duet_files, capsys):
        score_path, _, _ = duet_files
        code = main(
            [
                "live",
                "--score", str(score_path),
                "--follower", "oltw",
                "--input-port", "x",
                "--output-port", "y",
            ]
        )
        assert code == 2
        assert "--refs" in capsys.readouterr().err


class TestEvalCommands:
    def test_eval_follower(self, duet_files, capsys, tmp_path):
        score_path, solo_path, csv_path = duet_files
        code = main(
            [
                "eval", "follower",
                "--score", str(score_path),
                "--perf", str(solo_path),
                "--alignment", str(csv_path),
                "--kind", "oltw",
                "--sigma-ms", "50",
                "--n-refs", "2",
                "--seed", "3",
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "SF" in out and "oltw" in out

    def test_eval_tempo_without_grid(self, capsys, tmp_path):
        code = main(
            ["eval", "tempo", "--grid", "none", "--log", str(tmp_path / "t.csv")]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "Onset Error" in out
        assert (tmp_path / "t.csv").is_file()


class TestConfigFile:
    def test_parse_dotted_keys(self):
        text = """
        # run settings
        follower.kind = hmm
        follower.hmm.q_match = 0.9
        follower.oltw.window_sec = 1.5
        tempo.variant = linear
        tempo.params.eta_onset = 0.4
        accomp.balance = 0.7
        accomp.retime_horizon_ms = 30
        follower.oltw.references = ["a.mid", "b.mid"]
        """
        values = parse_config_text(text)
        cfg = apply_config_values(RunConfig(), values)
        assert cfg.follower_kind == "hmm"
        assert cfg.hmm.q_match == 0.9
        assert cfg.oltw.window_sec == 1.5
        assert cfg.tempo_variant == "linear"
        assert cfg.tempo_params.eta_onset == 0.4
        assert cfg.accomp.balance == 0.7
        assert cfg.accomp.retime_horizon == pytest.approx(0.030)
        assert cfg.reference_paths == ["a.mid", "b.mid"]

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            apply_config_values(RunConfig(), {"folower.kind": "hmm"})

    def test_bad_line_rejected(self):
        with pytest.raises(ConfigError, match="expected"):
            parse_config_text("just some words\n")

    def test_cli_flag_overrides_config(self, duet_files, tmp_path):
        score_path, solo_path, csv_path = duet_files
        config = tmp_path / "run.conf"
        config.write_text("tempo.variant = linear\nfollower.kind = hmm\n")
        code = main(
            [
                "--config", str(config),
                "replay",
                "--score", str(score_path),
                "--solo", str(solo_path),
                "--follower", "hmm",
                "--tempo", "reactive",
                "--out-midi", str(tmp_path / "o.mid"),
                "--log", str(tmp_path / "o.csv"),
            ]
        )
        assert code == 0
