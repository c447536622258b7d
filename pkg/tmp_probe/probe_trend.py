"""Criterion-4 probe: RL-only 20k vs 50k across scenarios/seeds."""
import json, sys, time
import shwy  # sets BLAS threads
from shwy.scenario import scenario_preset
from shwy.dqn import TrainConfig, train
from shwy.policies import RlGreedyPolicy
from shwy.harness import evaluate

scen_name = sys.argv[1]
steps = int(sys.argv[2])
seed = int(sys.argv[3])
scen = scenario_preset(scen_name)
t0 = time.time()
net, log = train(TrainConfig(total_steps=steps, seed=seed), scen)
t1 = time.time()
rep = evaluate(RlGreedyPolicy(net), scen, episodes=100)
t2 = time.time()
out = dict(scenario=scen_name, steps=steps, seed=seed,
           sr=rep.success_rate, lc=rep.lane_change_score, speed=rep.speed_score,
           mean_v=rep.mean_speed, train_s=round(t1-t0,1), eval_s=round(t2-t1,1))
print(json.dumps(out))
