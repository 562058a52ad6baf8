"""
Teaching the policy when not to look
====================================

A softmax policy over {no call, 10 crops} is first cloned from an oracle with
a heavy weight on call examples, so it over-calls. GRPO with the tool-cost
reward then pushes the call rate back down toward the share of fine-grained
questions. Setting the tool cost to zero removes that pressure.
"""

import dataclasses

from cropcall.config import RunConfig
from cropcall.experiment import fit_reference, run_grpo
from cropcall.reward import RewardConfig
from cropcall.sim_env import optimal_policy_value, policy_value

cfg = RunConfig()
env = cfg.env
oracle = optimal_policy_value(env)
print("oracle:", {k: round(float(v), 4) for k, v in oracle.items()})

ref = fit_reference(cfg, seed=0)
before = policy_value(env, RewardConfig(), ref.probs)
print("after SFT: call rate %.3f  accuracy %.4f  RTR %.4f"
      % (before["call_rate"], before["accuracy"], before["rtr"]))

policy, history = run_grpo(cfg, ref, seed=0)
for row in history[::250]:
    print("step %4d  reward %.3f  call rate %.3f  RTR %.3f" %
          (row["step"], row["mean_reward"], row["call_rate"], row["rtr"]))

after = policy_value(env, RewardConfig(), policy.probs)
print("after GRPO: call rate %.3f  accuracy %.4f  RTR %.4f"
      % (after["call_rate"], after["accuracy"], after["rtr"]))

free, _ = run_grpo(dataclasses.replace(cfg, reward=RewardConfig.zero_cost()), ref, seed=0)
free_v = policy_value(env, RewardConfig(), free.probs)
print("zero tool cost: call rate %.3f  RTR %.4f" % (free_v["call_rate"], free_v["rtr"]))
