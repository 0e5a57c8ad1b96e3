"""Run-config validation: strict keys, typed fields, helpful paths."""

import json

import pytest

from coproq.config import load_run_config, validate_run_config
from coproq.envs import GridworldEnv, HighwayEnv
from coproq.exceptions import ConfigurationError


def sim_labeler():
    return {"type": "simulated", "checkpoint": "q.ckpt"}


def valid_doc(**over):
    doc = {"method": "icopro", "seed": 3, "env": {"kind": "highway"},
           "proxy": "PR4", "labeler": sim_labeler(), "trainer": {}}
    doc.update(over)
    return doc


def err(doc):
    with pytest.raises(ConfigurationError) as ei:
        validate_run_config(doc)
    return str(ei.value)


class TestTopLevel:
    def test_full_document_round_trips(self):
        rc = validate_run_config(valid_doc())
        assert rc.method == "icopro" and rc.seed == 3
        assert rc.env_kind == "highway"
        assert rc.proxy.name == "PR4"
        assert rc.labeler["type"] == "simulated"
        assert rc.trainer.total_iters == 150

    def test_defaults(self):
        rc = validate_run_config({"labeler": sim_labeler()})
        assert rc.method == "icopro" and rc.seed == 0
        assert rc.env_kind == "highway" and rc.proxy is None

    def test_not_an_object(self):
        assert "expected a JSON object" in err(["nope"])

    def test_unknown_top_key_names_path(self):
        msg = err(valid_doc(fiddle=1))
        assert "config.fiddle" in msg and "unknown key" in msg

    def test_unknown_method(self):
        msg = err(valid_doc(method="sarsa"))
        assert "config.method" in msg

    @pytest.mark.parametrize("seed", [-1, True, "0", 1.5])
    def test_bad_seed(self, seed):
        assert "config.seed" in err(valid_doc(seed=seed))


class TestEnvSection:
    def test_gridworld(self):
        rc = validate_run_config(
            {"method": "rainbow_lite",
             "env": {"kind": "gridworld", "size": 6}})
        assert rc.env_kind == "gridworld" and rc.env.size == 6
        assert isinstance(rc.env_factory()(), GridworldEnv)

    def test_unknown_kind(self):
        msg = err(valid_doc(env={"kind": "atari"}))
        assert "config.env.kind" in msg

    def test_unknown_env_field_names_path(self):
        msg = err(valid_doc(env={"kind": "highway", "cars": 9}))
        assert "config.env.cars" in msg

    def test_env_value_error_keeps_path(self):
        msg = err(valid_doc(env={"kind": "highway", "lanes": 1}))
        assert msg.startswith("config.env:")

    def test_env_field_type_checked(self):
        msg = err(valid_doc(env={"kind": "highway", "lanes": "five"}))
        assert "config.env.lanes" in msg and "expected int" in msg

    def test_highway_factory_applies_proxy(self):
        rc = validate_run_config(valid_doc(proxy="PR3"))
        env = rc.env_factory()()
        assert isinstance(env, HighwayEnv)
        assert env.proxy.name == "PR3"


class TestProxySection:
    def test_rejected_for_gridworld(self):
        msg = err({"method": "rainbow_lite",
                   "env": {"kind": "gridworld"}, "proxy": "PR4"})
        assert "config.proxy" in msg

    def test_unknown_preset(self):
        assert "config.proxy" in err(valid_doc(proxy="PR99"))

    def test_custom_object(self):
        rc = validate_run_config(valid_doc(
            proxy={"mine": {"crash": -2.0, "high_speed": 1.0,
                            "normalization": "none"}}))
        assert rc.proxy.name == "mine"
        assert rc.proxy.crash == -2.0 and not rc.proxy.normalize

    def test_custom_object_unknown_key(self):
        msg = err(valid_doc(proxy={"mine": {"speeding": 1.0}}))
        assert "config.proxy" in msg and "speeding" in msg


class TestLabelerSection:
    def test_required_for_interactive_methods(self):
        for method in ("icopro", "dagger", "dqfd", "ablate_align",
                       "ablate_tgt", "pvp_plus_r", "pvp_minus_r"):
            doc = valid_doc(method=method)
            del doc["labeler"]
            assert "config.labeler" in err(doc)

    def test_optional_for_offline_methods(self):
        for method in ("rainbow_lite", "bc"):
            doc = valid_doc(method=method)
            del doc["labeler"]
            validate_run_config(doc)

    def test_type_field_required(self):
        msg = err(valid_doc(labeler={"checkpoint": "q.ckpt"}))
        assert "config.labeler.type" in msg

    def test_unknown_key(self):
        msg = err(valid_doc(labeler={"type": "simulated", "budget": 5}))
        assert "config.labeler.budget" in msg

    def test_typed_fields(self):
        msg = err(valid_doc(labeler={"type": "simulated", "n_cf": 1.5}))
        assert "config.labeler.n_cf" in msg and "expected int" in msg


class TestTrainerSection:
    def test_unknown_key_names_path(self):
        msg = err(valid_doc(trainer={"warmup": 10}))
        assert "config.trainer.warmup" in msg

    def test_type_error_names_path(self):
        msg = err(valid_doc(trainer={"batch_size": "big"}))
        assert "config.trainer.batch_size" in msg and "expected int" in msg

    def test_float_field_accepts_int_but_not_bool(self):
        rc = validate_run_config(valid_doc(trainer={"lr": 1}))
        assert rc.trainer.lr == 1.0
        msg = err(valid_doc(trainer={"lr": True}))
        assert "config.trainer.lr" in msg

    def test_value_error_keeps_path(self):
        msg = err(valid_doc(trainer={"total_iters": 0}))
        assert msg.startswith("config.trainer:")

    def test_overrides_apply(self):
        rc = validate_run_config(valid_doc(
            trainer={"total_iters": 5, "rollout_len": 100,
                     "queries_per_iter": 4}))
        assert rc.trainer.total_iters == 5
        assert rc.trainer.rollout_len == 100


class TestSnapshot:
    def test_snapshot_reflects_seed_override(self):
        rc = validate_run_config(valid_doc())
        rc.seed = 7
        snap = rc.snapshot()
        assert snap["seed"] == 7
        assert snap["method"] == "icopro"
        # snapshot revalidates cleanly
        rc2 = validate_run_config(snap)
        assert rc2.seed == 7


class TestLoad:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            load_run_config(str(tmp_path / "nope.json"))

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigurationError, match="invalid JSON"):
            load_run_config(str(p))

    def test_round_trip(self, tmp_path):
        p = tmp_path / "run.json"
        p.write_text(json.dumps(valid_doc()))
        rc = load_run_config(str(p))
        assert rc.method == "icopro" and rc.proxy.name == "PR4"
