import csv
import itertools
from dataclasses import replace

import pytest

from anomalyhop.cli import cmd_search
from anomalyhop.config import parse_config
from anomalyhop.saab import HopSpec
from anomalyhop.search import (
    candidates,
    evaluate_config,
    holdout_split,
    run_search,
    weight_grid,
)

from conftest import SMALL_CONFIG

TWO_HOP = parse_config(SMALL_CONFIG.replace("  - {window: 2, keep: 2}\n", "").replace("[1, 2, 3]", "[1, 2]"))


class TestCandidates:
    def test_template_first_then_single_changes(self):
        tmpl = [HopSpec(3, 3), HopSpec(2, 2, pool_after=False)]
        got = list(candidates(tmpl, windows=[2, 3], keeps=[2, 3]))
        assert got[0] == tmpl
        assert len(got) == 16  # (2 windows x 2 keeps) per hop, all combinations
        assert len({tuple(c) for c in got}) == 16
        changed = [sum(a != b for a, b in zip(c, tmpl)) for c in got]
        assert changed == sorted(changed)

    def test_pool_flags_preserved(self):
        tmpl = [HopSpec(3, 3), HopSpec(2, 2, pool_after=False)]
        for c in candidates(tmpl, windows=[2], keeps=[2]):
            assert [h.pool_after for h in c] == [True, False]

    def test_weight_grid_normalized_distinct(self):
        grid = weight_grid(2)
        # (0,1), (1,0), (1/2,1/2), (1/3,2/3), (2/3,1/3) once each after normalization
        assert len(grid) == 5
        assert all(abs(sum(w) - 1) < 1e-12 for w in grid)


class TestHoldout:
    def test_split_sizes_and_masks(self, tiny_split):
        h = holdout_split(tiny_split, seed=0)
        assert len(h.train) + len(h.test) == len(tiny_split.train)
        assert all(s.label == "anomalous" and s.mask.sum() > 0 for s in h.test)

    def test_deterministic(self, tiny_split):
        a = holdout_split(tiny_split, seed=4)
        b = holdout_split(tiny_split, seed=4)
        assert all((x.image == y.image).all() for x, y in zip(a.test, b.test))


class TestRunSearch:
    def test_budget_one_is_template(self, tiny_split):
        rows = run_search(TWO_HOP, tiny_split, budget=1, select_on="test")
        assert len(rows) == 1 and rows[0].config.hop_specs == TWO_HOP.hop_specs
        auc, _, _ = evaluate_config(TWO_HOP, tiny_split)
        assert rows[0].auc == auc

    def test_infeasible_candidate_skipped(self, tiny_split):
        rows = run_search(TWO_HOP, tiny_split, budget=5, select_on="test",
                          windows=[[3], [3, 40]], keeps=[[3], [3]])
        assert len(rows) == 1 and rows[0].hops_label == "3x3;3x3"

    def test_best_matches_exhaustive(self, tiny_split):
        keeps = [2, 3, 4, 5]
        rows = run_search(TWO_HOP, tiny_split, budget=100, select_on="test",
                          windows=[[3], [3]], keeps=keeps)
        assert len(rows) == 16
        oracle = {}
        for k1, k2 in itertools.product(keeps, keeps):
            cfg = replace(TWO_HOP, hop_specs=[HopSpec(3, k1), HopSpec(3, k2, pool_after=False)])
            oracle[(k1, k2)] = evaluate_config(cfg, tiny_split)[0]
        assert rows[0].auc == max(oracle.values())
        assert [r.auc for r in rows] == sorted(oracle.values(), reverse=True)

    def test_holdout_mode(self, tiny_split):
        rows = run_search(TWO_HOP, tiny_split, budget=2, select_on="holdout")
        assert 1 <= len(rows) <= 2 and all(0 <= r.auc <= 1 for r in rows)

    def test_bad_args(self, tiny_split):
        with pytest.raises(ValueError):
            run_search(TWO_HOP, tiny_split, budget=0, select_on="test")
        with pytest.raises(ValueError):
            run_search(TWO_HOP, tiny_split, budget=1, select_on="train")


def test_cli_search_outputs(tmp_path, data_root):
    tmpl = tmp_path / "tmpl.yaml"
    tmpl.write_text(SMALL_CONFIG + "search:\n  windows: [3]\n  keeps: [2, 3]\n  fusion_weights: true\n")
    best, rows = cmd_search(tmpl, data_root, budget=3, select_on="holdout", out_dir=tmp_path / "out")
    table = list(csv.reader(open(tmp_path / "out" / "leaderboard.csv")))
    assert table[0] == ["rank", "auc", "hops", "model_kind", "weights", "train_seconds"]
    assert len(table) == len(rows) + 1
    aucs = [float(r[1]) for r in table[1:]]
    assert aucs == sorted(aucs, reverse=True)
    saved = parse_config((tmp_path / "out" / "best_config.yaml").read_text())
    assert saved == best and best.weights is not None
