import json
import os
from pathlib import Path

import numpy as np
import pytest

from ppow.cli import (ConfigError, build_world, main, parse_config)
from ppow.models import checkpoint_load

TINY = """
seed = 12
grammar_vocab = 4
grammar_order = 2
grammar_seed = 3
corpus_sequences = 30
corpus_length = 16
embed_dim = 3
hidden_dim = 6
context_len = 2
sft_steps = 200
sft_lr = 0.05
window_k = 4
group_size = 4
total_steps = 25
eval_k = 4
eval_groups = 1,2
eval_temperatures = 1.0
eval_num_prompts = 3
eval_prompt_len = 3
eval_max_tokens = 40
analyze_pairs = 500
analyze_trials = 2000
analyze_windows = 30
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


def read_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh]


def strip_wall_time(records):
    return [{k: v for k, v in r.items() if k != "wall_time"} for r in records]


class TestConfigParsing:
    def test_defaults_and_overrides(self, tiny_config):
        cfg = parse_config(tiny_config)
        assert cfg.seed == 12
        assert cfg.window_k == 4
        assert cfg.eval_groups == [1, 2]
        assert cfg.gamma == 0.12  # untouched default

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("windowk = 4\n")
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config(path)

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("just some text\n")
        with pytest.raises(ConfigError):
            parse_config(path)

    def test_comments_and_blank_lines(self, tmp_path):
        path = tmp_path / "ok.cfg"
        path.write_text("# comment\n\nseed = 5  # trailing comment\n")
        assert parse_config(path).seed == 5

    def test_inconsistent_lengths_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("corpus_length = 5\nwindow_k = 10\n")
        with pytest.raises(ConfigError):
            parse_config(path)

    def test_curriculum_parse(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("curriculum = 0:0.1,0.5:0.9\n")
        assert parse_config(path).curriculum == ((0.0, 0.1), (0.5, 0.9))


class TestBuildWorld:
    def test_grammar_world(self, tiny_config):
        world = build_world(parse_config(tiny_config))
        assert world.dims.vocab == 4
        assert len(world.corpus) == 30

    def test_corpus_file_world(self, tmp_path):
        corpus_path = tmp_path / "corpus.txt"
        corpus_path.write_text("0 1 2 1 0 1 2 1 0 1 2 1\n" * 8)
        cfg_path = tmp_path / "c.cfg"
        cfg_path.write_text(f"corpus_file = {corpus_path}\n"
                            "target_from_grammar = false\n"
                            "window_k = 4\ncorpus_length = 12\n")
        world = build_world(parse_config(cfg_path))
        assert world.grammar is None
        assert world.dims.vocab == 3


class TestCommands:
    def test_pretrain_writes_outputs(self, tiny_config, tmp_path):
        out = tmp_path / "run"
        assert main(["pretrain", "--config", str(tiny_config), "--out", str(out)]) == 0
        assert (out / "drafter_sft.ckpt").exists()
        assert (out / "pretrain_loss.png").exists()
        assert (out / "pretrain_loss.dat").exists()
        records = read_jsonl(out / "pretrain_metrics.jsonl")
        assert len(records) == 200
        assert all("wall_time" in r for r in records)
        assert not (out / ".ppow_lock").exists()

    def test_zero_sft_steps_equals_init(self, tmp_path, tiny_config):
        cfg_path = tmp_path / "z.cfg"
        cfg_path.write_text(TINY.replace("sft_steps = 200", "sft_steps = 0"))
        out = tmp_path / "zero"
        assert main(["pretrain", "--config", str(cfg_path), "--out", str(out)]) == 0
        from ppow.cli import parse_config as pc
        from ppow.models import init_drafter
        cfg = pc(cfg_path)
        world = build_world(cfg)
        expect = init_drafter(world.dims, cfg.seed)
        loaded = checkpoint_load(out / "drafter_sft.ckpt")
        assert np.array_equal(loaded.flat(), expect.flat())

    def test_full_pipeline(self, tiny_config, tmp_path):
        pre = tmp_path / "pre"
        trn = tmp_path / "trn"
        ev = tmp_path / "ev"
        assert main(["pretrain", "--config", str(tiny_config), "--out", str(pre)]) == 0
        assert main(["train-ppow", "--config", str(tiny_config),
                     "--init", str(pre / "drafter_sft.ckpt"), "--out", str(trn)]) == 0
        assert (trn / "drafter_ppow.ckpt").exists()
        assert (trn / "train_curves.png").exists()
        assert len(read_jsonl(trn / "train_metrics.jsonl")) == 25
        assert main(["eval", "--config", str(tiny_config),
                     "--init", str(trn / "drafter_ppow.ckpt"), "--out", str(ev)]) == 0
        rows = read_jsonl(ev / "eval_results.jsonl")
        assert len(rows) == 2  # G in {1, 2}
        tsv = (ev / "eval_results.tsv").read_text().splitlines()
        assert tsv[0].split("\t")[0] == "K"
        assert len(tsv) == 3
        assert (ev / "eval_tau.png").exists()

    def test_zero_total_steps_output_equals_init(self, tiny_config, tmp_path):
        pre = tmp_path / "pre"
        main(["pretrain", "--config", str(tiny_config), "--out", str(pre)])
        cfg_path = tmp_path / "zero.cfg"
        cfg_path.write_text(TINY.replace("total_steps = 25", "total_steps = 0"))
        out = tmp_path / "zero"
        assert main(["train-ppow", "--config", str(cfg_path),
                     "--init", str(pre / "drafter_sft.ckpt"), "--out", str(out)]) == 0
        init = checkpoint_load(pre / "drafter_sft.ckpt")
        final = checkpoint_load(out / "drafter_ppow.ckpt")
        assert np.array_equal(init.flat(), final.flat())

    def test_pretrain_improves_eval_tau(self, tiny_config, tmp_path):
        from ppow.cli import eval_prompts, parse_config
        from ppow.models import init_drafter
        from ppow.rng import RngStream
        from ppow.trainer import evaluate
        out = tmp_path / "pre"
        assert main(["pretrain", "--config", str(tiny_config), "--out", str(out)]) == 0
        cfg = parse_config(tiny_config)
        world = build_world(cfg)
        prompts = eval_prompts(cfg, world)
        trained = checkpoint_load(out / "drafter_sft.ckpt")
        init = init_drafter(world.dims, cfg.seed)
        tau_trained = evaluate(trained, world.target, prompts, 4, 1, 1.0,
                               RngStream(1).child("e"), max_tokens=120).tau
        tau_init = evaluate(init, world.target, prompts, 4, 1, 1.0,
                            RngStream(1).child("e"), max_tokens=120).tau
        assert tau_trained > tau_init

    def test_train_ppow_rerun_deterministic(self, tiny_config, tmp_path):
        pre = tmp_path / "pre"
        main(["pretrain", "--config", str(tiny_config), "--out", str(pre)])
        recs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["train-ppow", "--config", str(tiny_config),
                         "--init", str(pre / "drafter_sft.ckpt"),
                         "--out", str(out)]) == 0
            recs.append(strip_wall_time(read_jsonl(out / "train_metrics.jsonl")))
        assert recs[0] == recs[1]

    def test_checkpoint_shape_mismatch_is_runtime_error(self, tiny_config, tmp_path):
        pre = tmp_path / "pre"
        main(["pretrain", "--config", str(tiny_config), "--out", str(pre)])
        other_cfg = tmp_path / "other.cfg"
        other_cfg.write_text(TINY.replace("embed_dim = 3", "embed_dim = 5"))
        code = main(["train-ppow", "--config", str(other_cfg),
                     "--init", str(pre / "drafter_sft.ckpt"),
                     "--out", str(tmp_path / "x")])
        assert code == 2

    def test_lockfile_blocks_second_writer(self, tiny_config, tmp_path):
        out = tmp_path / "locked"
        out.mkdir()
        (out / ".ppow_lock").write_text("999")
        code = main(["pretrain", "--config", str(tiny_config), "--out", str(out)])
        assert code == 2


class TestAnalyzeCommand:
    @pytest.mark.parametrize("suite", ["pinsker", "reward-table", "nabla", "easy-hard"])
    def test_suites_write_reports(self, suite, tiny_config, tmp_path):
        out = tmp_path / suite
        assert main(["analyze", "--config", str(tiny_config), "--suite", suite,
                     "--out", str(out)]) == 0
        text = (out / f"analyze_{suite}.txt").read_text()
        assert "PASS" in text
        assert "FAIL" not in text

    def test_unknown_suite_usage_error(self, tiny_config, tmp_path):
        code = main(["analyze", "--config", str(tiny_config), "--suite", "bogus",
                     "--out", str(tmp_path / "x")])
        assert code == 1


class TestExitCodes:
    def test_missing_config_file(self, tmp_path):
        code = main(["pretrain", "--config", str(tmp_path / "nope.cfg"),
                     "--out", str(tmp_path / "o")])
        assert code == 1

    def test_usage_error(self):
        assert main(["frobnicate"]) == 1
        assert main([]) == 1

    def test_seed_precedence(self, tiny_config, tmp_path, monkeypatch):
        monkeypatch.setenv("PPOW_SEED", "77")
        out_env = tmp_path / "env"
        main(["pretrain", "--config", str(tiny_config), "--out", str(out_env)])
        out_flag = tmp_path / "flag"
        main(["pretrain", "--config", str(tiny_config), "--out", str(out_flag),
              "--seed", "12"])
        env_ck = checkpoint_load(out_env / "drafter_sft.ckpt")
        flag_ck = checkpoint_load(out_flag / "drafter_sft.ckpt")
        assert not np.array_equal(env_ck.flat(), flag_ck.flat())

    def test_bad_env_seed(self, tiny_config, tmp_path, monkeypatch):
        monkeypatch.setenv("PPOW_SEED", "xyz")
        code = main(["pretrain", "--config", str(tiny_config),
                     "--out", str(tmp_path / "o")])
        assert code == 1
