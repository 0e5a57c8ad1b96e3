import logging, sys
logging.basicConfig(level=logging.INFO,
                    format="%(asctime)s %(message)s", stream=sys.stdout)
from coproq.trainer import TrainerConfig, train_labeler_checkpoint
from coproq.envs import HighwayEnv, PRESETS

cfg = TrainerConfig(rl_eval_every=30_000)
info = train_labeler_checkpoint(
    cfg, lambda: HighwayEnv(proxy=PRESETS["PRExp"]), seed=0,
    total_steps=330_000, out_dir="/root/pkg/.acceptance_cache/labeler",
    snapshot_steps=(50_000,))
print("labeler done:", info["metrics"])
